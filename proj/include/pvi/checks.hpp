#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace checks {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

// suite is one of "properties", "pep_limit", "gradients". Throws
// std::invalid_argument on anything else. Diagnostic tables (the alpha-
// halving ladder) are printed to `out`.
std::vector<CheckResult> run_suite(const std::string& suite, std::ostream& out);

// Prints one PASS/FAIL line per result; returns true iff all passed.
bool report(const std::vector<CheckResult>& results, std::ostream& out);

}  // namespace checks
