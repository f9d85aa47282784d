#ifndef IMAC_CORE_SELFTEST_HPP
#define IMAC_CORE_SELFTEST_HPP

#include <string>
#include <vector>

namespace imac {

struct SuiteResult {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

struct SelftestReport {
  std::vector<SuiteResult> suites;
  bool all_pass() const {
    for (const auto& s : suites)
      if (!s.pass) return false;
    return true;
  }
  std::string to_json() const;
};

// Runs every independent oracle suite: finite-difference gradients across the
// full agent stack, Huffman vs. brute-force optimal prefix codes, Monte-Carlo
// KL, entropy formula cross-checks, and quantizer bounds.
SelftestReport run_selftest();

}  // namespace imac

#endif
