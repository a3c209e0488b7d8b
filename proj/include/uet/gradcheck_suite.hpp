#pragma once

#include <string>
#include <vector>

namespace uet {

struct GradcheckCase {
  std::string name;
  double max_err = 0.0;
  double tolerance = 1e-4;
  bool pass = false;
};

// every differentiable op plus the full uncertainty-ET loss path
// (attention extraction against each distance); eps = 1e-5 throughout
std::vector<GradcheckCase> run_gradcheck_suite(uint64_t seed = 7);

}  // namespace uet
