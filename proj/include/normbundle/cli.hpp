#pragma once

#include <string>
#include <vector>

namespace normbundle {

// Whole command-line surface, callable in-process: subcommands simulate,
// estimate, equilibrium, classify, counterfactual, residualize; each takes
// --config <json> plus optional --data/--out/--seed/--recode and writes
// <out>/<command>_report.json.  Returns the process exit code: 0 on success,
// 2 when inputs fail validation or parsing, 3 on numerical failure.
int cli_main(const std::vector<std::string>& args);
int cli_main(int argc, const char* const* argv);

}  // namespace normbundle
