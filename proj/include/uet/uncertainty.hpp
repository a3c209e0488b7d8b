#pragma once

#include <vector>

#include "uet/model.hpp"
#include "uet/rng.hpp"
#include "uet/tensor.hpp"

namespace uet {

enum class RatioStrategy {
  fixed_a,          // all passes at 0.15
  arithmetic_b,     // base + step*(i-1)
  epoch_growing_c,  // strategy b plus epoch_growth per epoch
};

struct RatioSchedule {
  RatioStrategy strategy = RatioStrategy::arithmetic_b;
  int n = 5;
  double base = 0.05;
  double step = 0.05;
  double epoch_growth = 0.025;
  double clamp_max = 0.95;
};

// per-pass dropout ratios for the given epoch; every value in [0, clamp_max]
std::vector<double> schedule_ratios(const RatioSchedule& s, int epoch);

// independent per-element inverted dropout on every scale
FeaturePyramid dropout_pass(const FeaturePyramid& f, double p, Rng& rng);

struct UncertaintyEstimate {
  FeaturePyramid u_k;  // shape-congruent with the source pyramid
  int n_used = 0;
  std::vector<double> ratios_used;
};

// U_K = mean over i of dropout_pass(f, ratios[i]); fresh masks per pass.
// Stays untracked for an untracked source and tracked for a tracked one.
UncertaintyEstimate estimate_uncertainty(const FeaturePyramid& f,
                                         const std::vector<double>& ratios, Rng& rng);

// residual=true: U_K + F elementwise; residual=false: U_K alone.
// normalize halves the residual sum so its expectation matches F.
FeaturePyramid combine_residual(const UncertaintyEstimate& u, const FeaturePyramid& f,
                                bool residual, bool normalize = false);

}  // namespace uet
