#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "didsnmm/basis.hpp"

namespace didsnmm {

struct CriterionResult {
  int id = 0;
  std::string name;
  std::string status;  // PASS, FAIL or SKIP
  std::string detail;
  double seconds = 0;
  json data = json::object();
};

struct AcceptanceOptions {
  /// "full" uses the replicate counts and sample sizes the criteria name;
  /// "quick" shrinks them for smoke runs (results labelled as such).
  std::string profile = "full";
  std::uint64_t seed = 20240601;
  std::vector<int> only;  // empty: all criteria
  std::function<void(const CriterionResult&)> on_result;
};

std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& options = {});

/// One line per criterion: "[PASS] 3 double robustness: ...".
std::string format_result(const CriterionResult& r);

}  // namespace didsnmm
