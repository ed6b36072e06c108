#pragma once

// Property suites behind `aacv verify`: fast kernels against loop-level
// references, finite-difference gradient checks, and the symmetry
// properties of position-unaware and relative attention.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace aacv::verify {

enum class Suite { Oracle, Grad, Equivariance, All };

/// Accepts oracle, grad, equivariance, all. Throws InputError otherwise.
Suite parse_suite(std::string_view s);

struct Property {
  std::string suite;
  std::string name;
  double observed = 0;
  double bound = 0;
  bool must_exceed = false;  // observed > bound passes instead of observed <= bound
  bool pass = false;
  std::string note;  // extra diagnostics appended to the line

  /// "PASS suite/name max_err=... tol=..." with fixed formatting.
  std::string line() const;
};

struct Options {
  std::uint64_t seed = 0;
  std::size_t random_configs = 100;
};

std::vector<Property> run_oracle_suite(const Options& opts);
std::vector<Property> run_grad_suite(const Options& opts);
std::vector<Property> run_equivariance_suite(const Options& opts);
std::vector<Property> run(Suite suite, const Options& opts);

bool all_pass(const std::vector<Property>& props);

}  // namespace aacv::verify
