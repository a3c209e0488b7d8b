#include "uet/gradcheck_suite.hpp"

#include <cmath>

#include "uet/distill.hpp"
#include "uet/model.hpp"
#include "uet/tensor.hpp"
#include "uet/uncertainty.hpp"

namespace uet {

namespace {

constexpr double kEps = 1e-5;
constexpr double kTol = 1e-4;

Tensor randn(Rng& rng, Shape shape) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.next_normal();
  return Tensor(std::move(shape), std::move(v));
}

// normals pushed at least `margin` away from zero, for kink-free relu inputs
Tensor randn_away(Rng& rng, Shape shape, double margin) {
  Tensor t = randn(rng, std::move(shape));
  for (double& x : t.mutable_data())
    x += x >= 0.0 ? margin : -margin;
  return t;
}

Tensor randpos(Rng& rng, Shape shape) {
  Tensor t = randn(rng, std::move(shape));
  for (double& x : t.mutable_data()) x = 0.1 + std::abs(x);
  return t;
}

// scalarize a non-scalar op output; mse against a fixed target keeps the
// gradient dense and nonzero through the op under test
Tensor reduce(const Tensor& t, const Tensor& target) { return mse_loss(t, target); }

}  // namespace

std::vector<GradcheckCase> run_gradcheck_suite(uint64_t seed) {
  std::vector<GradcheckCase> out;
  Rng rng(seed);
  auto check = [&out](const std::string& name, double err) {
    out.push_back({name, err, kTol, err < kTol});
  };

  // --- elementwise ---
  {
    Tensor a = randn(rng, {2, 4, 4});
    Tensor b = randn(rng, {2, 4, 4});
    Tensor w = randn(rng, {2, 4, 4});
    check("add", gradcheck([&](const Tensor& x) { return reduce(add(x, b), w); }, a, kEps));
    check("add(rhs)", gradcheck([&](const Tensor& x) { return reduce(add(b, x), w); }, a, kEps));
    check("sub", gradcheck([&](const Tensor& x) { return reduce(sub(x, b), w); }, a, kEps));
    check("mul", gradcheck([&](const Tensor& x) { return reduce(mul(x, b), w); }, a, kEps));
    check("scale", gradcheck([&](const Tensor& x) { return reduce(scale(x, -1.7), w); }, a, kEps));
    Tensor ar = randn_away(rng, {2, 4, 4}, 0.2);
    check("relu", gradcheck([&](const Tensor& x) { return reduce(relu(x), w); }, ar, kEps));
  }

  // --- structured ---
  {
    Tensor x = randn(rng, {2, 5, 5});
    Tensor w3 = randn(rng, {3, 2, 3, 3});
    Tensor w1 = randn(rng, {3, 2, 1, 1});
    Tensor t_same = randn(rng, {3, 5, 5});
    Tensor t_valid = randn(rng, {3, 3, 3});
    Tensor t_stride = randn(rng, {3, 3, 3});
    check("conv2d k3 pad1 (input)",
          gradcheck([&](const Tensor& v) { return reduce(conv2d(v, w3, 1, 1), t_same); }, x, kEps));
    check("conv2d k3 pad1 (weight)",
          gradcheck([&](const Tensor& v) { return reduce(conv2d(x, v, 1, 1), t_same); }, w3, kEps));
    check("conv2d k3 valid",
          gradcheck([&](const Tensor& v) { return reduce(conv2d(v, w3), t_valid); }, x, kEps));
    check("conv2d k3 stride2",
          gradcheck([&](const Tensor& v) { return reduce(conv2d(v, w3, 2, 1), t_stride); }, x, kEps));
    check("conv2d k1 (input)",
          gradcheck([&](const Tensor& v) { return reduce(conv2d(v, w1), t_same); }, x, kEps));
    check("conv2d k1 (weight)",
          gradcheck([&](const Tensor& v) { return reduce(conv2d(x, v), t_same); }, w1, kEps));

    Tensor b = randn(rng, {2});
    Tensor t_x = randn(rng, {2, 5, 5});
    check("bias_add (input)",
          gradcheck([&](const Tensor& v) { return reduce(bias_add(v, b), t_x); }, x, kEps));
    check("bias_add (bias)",
          gradcheck([&](const Tensor& v) { return reduce(bias_add(x, v), t_x); }, b, kEps));

    Tensor x8 = randn(rng, {2, 6, 6});
    Tensor t_pool = randn(rng, {2, 3, 3});
    Tensor t_up = randn(rng, {2, 12, 12});
    check("pool2x",
          gradcheck([&](const Tensor& v) { return reduce(pool2x(v), t_pool); }, x8, kEps));
    check("upsample2x",
          gradcheck([&](const Tensor& v) { return reduce(upsample2x(v), t_up); }, x8, kEps));

    // fixed mask: same rng state on every evaluation
    const uint64_t mask_seed = rng.next_u64();
    check("dropout p=0.3",
          gradcheck(
              [&](const Tensor& v) {
                Rng mask_rng(mask_seed);
                return reduce(dropout(v, 0.3, mask_rng), t_x);
              },
              x, kEps));
  }

  // --- losses ---
  {
    Tensor p = randn(rng, {3, 4, 4});
    Tensor q = randn(rng, {3, 4, 4});
    check("mse_loss (pred)",
          gradcheck([&](const Tensor& v) { return mse_loss(v, q); }, p, kEps));
    check("mse_loss (target)",
          gradcheck([&](const Tensor& v) { return mse_loss(p, v); }, q, kEps));

    std::vector<int> target(16);
    Rng cls = rng.fork(11);
    for (int& c : target) c = static_cast<int>(cls.next_below(3));
    check("cross_entropy_loss",
          gradcheck([&](const Tensor& v) { return cross_entropy_loss(v, target); }, p, kEps));

    Tensor pp = randpos(rng, {3, 4, 4});
    Tensor pt = randpos(rng, {3, 4, 4});
    check("kl_loss (pred)",
          gradcheck([&](const Tensor& v) { return kl_loss(v, pt); }, pp, kEps));
    check("kl_loss (target)",
          gradcheck([&](const Tensor& v) { return kl_loss(pp, v); }, pt, kEps));
    check("kl_softmax_loss (teacher)",
          gradcheck([&](const Tensor& v) { return kl_softmax_loss(v, q, 2.0); }, p, kEps));
    check("kl_softmax_loss (student)",
          gradcheck([&](const Tensor& v) { return kl_softmax_loss(p, v, 2.0); }, q, kEps));
  }

  // --- extraction and distances ---
  {
    Tensor a = randn(rng, {3, 6, 6});
    Tensor b = randn(rng, {3, 6, 6});
    Tensor w = randn(rng, {3, 6, 6});
    check("pearson_norm extraction",
          gradcheck(
              [&](const Tensor& v) { return reduce(extract_one(ExtractKind::pearson_norm, v), w); },
              a, kEps));
    Tensor a_attn = randn_away(rng, {3, 6, 6}, 0.2);  // abs() kink avoidance
    check("attention extraction",
          gradcheck(
              [&](const Tensor& v) { return reduce(extract_one(ExtractKind::attention, v), w); },
              a_attn, kEps));

    Tensor b2 = randn(rng, {3, 3, 3});
    auto pyr_dist = [&](DistanceKind kind, const Tensor& v, const Tensor& v2) {
      return distance(kind, {v, v2}, {b, b2});
    };
    Tensor a2 = randn(rng, {3, 3, 3});
    for (auto [kind, name] : {std::pair{DistanceKind::l2, "l2 distance"},
                              std::pair{DistanceKind::pearson, "pearson distance"},
                              std::pair{DistanceKind::ssim, "ssim distance"}}) {
      check(name,
            gradcheck([&, kind = kind](const Tensor& v) { return pyr_dist(kind, v, a2); }, a, kEps));
      check(std::string(name) + " (scale 1)",
            gradcheck([&, kind = kind](const Tensor& v) { return pyr_dist(kind, a, v); }, a2, kEps));
    }
  }

  // --- adapter path and the full uncertainty loss ---
  {
    Rng net_rng = rng.fork(21);
    Adapter adapter = make_adapter(2, 3, 4, net_rng);
    FeaturePyramid f_t{randn(rng, {4, 6, 6}).detach(), randn(rng, {4, 3, 3}).detach()};
    Tensor s1 = randn(rng, {3, 3, 3});

    check("adapt + l2 distance",
          gradcheck(
              [&](const Tensor& v) {
                FeaturePyramid f_s{v, s1};
                DistillConfig cfg;
                cfg.n = 0;
                cfg.source = KnowledgeSource::none;
                return kd_loss_et(f_t, f_s, adapter, cfg);
              },
              randn(rng, {3, 6, 6}), kEps));

    // Eq. 6 path: MC estimate + residual on the teacher side, attention
    // extraction, each transfer distance; masks fixed per evaluation
    Tensor s0 = randn_away(rng, {3, 6, 6}, 0.2);
    const uint64_t mc_seed = rng.next_u64();
    for (auto [kind, name] : {std::pair{DistanceKind::l2, "uet path attention+l2"},
                              std::pair{DistanceKind::pearson, "uet path attention+pearson"},
                              std::pair{DistanceKind::ssim, "uet path attention+ssim"}}) {
      check(name,
            gradcheck(
                [&, kind = kind](const Tensor& v) {
                  FeaturePyramid f_s{v, s1};
                  DistillConfig cfg;
                  cfg.n = 5;
                  cfg.extraction = ExtractKind::attention;
                  cfg.distance = kind;
                  cfg.source = KnowledgeSource::teacher;
                  cfg.residual = true;
                  Rng mc(mc_seed);
                  return kd_loss_uet(f_t, f_s, adapter, cfg, mc, /*epoch=*/3);
                },
                s0, kEps));
    }
  }

  return out;
}

}  // namespace uet
