#include "normbundle/cli.hpp"

int main(int argc, char** argv) { return normbundle::cli_main(argc, argv); }
