#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace normbundle {

// splitmix64 step; used only to derive substream seeds from a master seed so
// that parallel substreams (groups, replications, multi-starts) have fixed,
// well-separated seeds regardless of scheduling.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return splitmix64(master ^ splitmix64(stream + 0x632be59bd9b4e019ull));
}

// Deterministic normal generator: mt19937_64 (engine fully specified by the
// standard) + explicit uniform mapping + Box-Muller.  std::normal_distribution
// is implementation-defined, so it is avoided everywhere reproducibility is
// asserted byte-for-byte.
class NormalSampler {
public:
  explicit NormalSampler(std::uint64_t seed) : eng_(seed) {}

  // uniform on (0,1]: 53-bit mantissa, never exactly 0 so log() is safe
  double uniform_pos() { return static_cast<double>((eng_() >> 11) + 1) * 0x1.0p-53; }
  // uniform on [0,1)
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  // one Box-Muller turn: two independent standard normals
  void normal_pair(double& n1, double& n2) {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    n1 = r * std::cos(a);
    n2 = r * std::sin(a);
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double n1, n2;
    normal_pair(n1, n2);
    spare_ = n2;
    have_spare_ = true;
    return n1;
  }

  // correlated standard-normal shock pair (z_A, z_B), corr(z_A, z_B) = rho
  void shock_pair(double rho, double& z_A, double& z_B) {
    double n1, n2;
    normal_pair(n1, n2);
    z_A = n1;
    z_B = rho * n1 + std::sqrt(1.0 - rho * rho) * n2;
  }

  std::uint64_t raw() { return eng_(); }

private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace normbundle
