#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace misode {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Fast invariant suite behind the `selftest` subcommand: codec round trips,
// vocabulary layout, enumeration counts, integrator oracles, schedule values,
// rescaling identities, aggregator invariants at a small scale.
std::vector<CheckResult> run_selftest();

// Prints one [PASS]/[FAIL] line per check; returns the number of failures.
int print_selftest(std::ostream& os);

}  // namespace misode
