#include "uet/uncertainty.hpp"

#include <algorithm>

namespace uet {

std::vector<double> schedule_ratios(const RatioSchedule& s, int epoch) {
  if (s.n < 1) throw ConfigError("schedule_ratios: N must be >= 1");
  if (epoch < 0) throw ConfigError("schedule_ratios: epoch must be >= 0");
  if (s.clamp_max < 0.0 || s.clamp_max >= 1.0)
    throw ConfigError("schedule_ratios: clamp_max must be in [0, 1)");
  constexpr double kFixedRatio = 0.15;
  std::vector<double> out(static_cast<size_t>(s.n));
  for (int i = 0; i < s.n; ++i) {
    double p;
    switch (s.strategy) {
      case RatioStrategy::fixed_a:
        p = kFixedRatio;
        break;
      case RatioStrategy::arithmetic_b:
        p = s.base + s.step * i;
        break;
      case RatioStrategy::epoch_growing_c:
        p = s.base + s.step * i + s.epoch_growth * epoch;
        break;
      default:
        throw ConfigError("schedule_ratios: unknown strategy");
    }
    // ratios are human-specified decimals; snap away accumulation noise so
    // e.g. 0.05 + 2*0.05 yields exactly the double nearest 0.15
    p = std::round(p * 1e12) / 1e12;
    out[static_cast<size_t>(i)] = std::clamp(p, 0.0, s.clamp_max);
  }
  return out;
}

FeaturePyramid dropout_pass(const FeaturePyramid& f, double p, Rng& rng) {
  FeaturePyramid out;
  out.reserve(f.size());
  for (const Tensor& t : f) out.push_back(dropout(t, p, rng));
  return out;
}

UncertaintyEstimate estimate_uncertainty(const FeaturePyramid& f,
                                         const std::vector<double>& ratios, Rng& rng) {
  if (ratios.empty()) throw ConfigError("estimate_uncertainty: ratios must be non-empty");
  UncertaintyEstimate est;
  est.n_used = static_cast<int>(ratios.size());
  est.ratios_used = ratios;
  // mean of N identical copies is the source itself; computing it directly
  // keeps the degenerate all-zero case exact in f64
  if (std::all_of(ratios.begin(), ratios.end(), [](double p) { return p == 0.0; })) {
    est.u_k = f;
    return est;
  }
  FeaturePyramid acc = dropout_pass(f, ratios[0], rng);
  for (size_t i = 1; i < ratios.size(); ++i) {
    FeaturePyramid pass = dropout_pass(f, ratios[i], rng);
    for (size_t s = 0; s < acc.size(); ++s) acc[s] = add(acc[s], pass[s]);
  }
  const double inv_n = 1.0 / static_cast<double>(ratios.size());
  for (Tensor& t : acc) t = scale(t, inv_n);
  est.u_k = std::move(acc);
  return est;
}

FeaturePyramid combine_residual(const UncertaintyEstimate& u, const FeaturePyramid& f,
                                bool residual, bool normalize) {
  if (u.u_k.size() != f.size()) throw ConfigError("combine_residual: scale-count mismatch");
  if (!residual) return u.u_k;
  FeaturePyramid out;
  out.reserve(f.size());
  for (size_t s = 0; s < f.size(); ++s) {
    Tensor sum = add(u.u_k[s], f[s]);
    out.push_back(normalize ? scale(sum, 0.5) : sum);
  }
  return out;
}

}  // namespace uet
