#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "uet/distill.hpp"
#include "uet/model.hpp"
#include "uet/rng.hpp"

using namespace uet;

namespace {

Tensor randn(Rng& rng, Shape shape, bool requires_grad = false) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.next_normal();
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

FeaturePyramid rand_pyr(Rng& rng, int c, bool requires_grad = false) {
  return {randn(rng, {c, 8, 8}, requires_grad), randn(rng, {c, 4, 4}, requires_grad)};
}

RatioSchedule zero_schedule(int n) {
  RatioSchedule s;
  s.strategy = RatioStrategy::arithmetic_b;
  s.n = n;
  s.base = 0.0;
  s.step = 0.0;
  return s;
}

}  // namespace

TEST_CASE("extraction kinds") {
  Rng rng(41);
  FeaturePyramid f = rand_pyr(rng, 3);

  auto same = extract(ExtractKind::identity, f);
  for (size_t s = 0; s < f.size(); ++s)
    for (int64_t i = 0; i < f[s].numel(); ++i) CHECK(same[s].data()[i] == f[s].data()[i]);

  auto norm = extract(ExtractKind::pearson_norm, f);
  for (const Tensor& t : norm) {
    const int C = t.shape()[0];
    const int S = t.shape()[1] * t.shape()[2];
    for (int c = 0; c < C; ++c) {
      double mean = 0.0, var = 0.0;
      for (int i = 0; i < S; ++i) mean += t.data()[c * S + i];
      mean /= S;
      for (int i = 0; i < S; ++i) {
        const double d = t.data()[c * S + i] - mean;
        var += d * d;
      }
      CHECK(std::abs(mean) < 1e-9);
      CHECK(std::abs(std::sqrt(var / S) - 1.0) < 1e-3);
    }
  }

  // constant map: both attention softmaxes are uniform, weights exactly 1
  FeaturePyramid flat{Tensor::full({3, 4, 4}, 0.7), Tensor::full({3, 2, 2}, 0.7)};
  auto attn = extract(ExtractKind::attention, flat);
  for (size_t s = 0; s < flat.size(); ++s)
    for (int64_t i = 0; i < flat[s].numel(); ++i)
      CHECK(attn[s].data()[i] == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("distance kinds") {
  Rng rng(42);
  FeaturePyramid a = rand_pyr(rng, 3);

  for (auto kind : {DistanceKind::l2, DistanceKind::pearson, DistanceKind::ssim})
    CHECK(distance(kind, a, a).item() == doctest::Approx(0.0).epsilon(1e-12));

  // pearson: invariant under positive affine maps, -1 correlation scores 2
  FeaturePyramid affine, neg;
  for (const Tensor& t : a) {
    affine.push_back(add(scale(t, 3.0), Tensor::full(t.shape(), 7.0)));
    neg.push_back(scale(t, -1.0));
  }
  CHECK(distance(DistanceKind::pearson, a, affine).item() == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(distance(DistanceKind::pearson, a, neg).item() == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(distance(DistanceKind::l2, a, affine).item() > 1.0);  // l2 is not affine-invariant

  // symmetry
  Rng rng2(43);
  FeaturePyramid b = rand_pyr(rng2, 3);
  for (auto kind : {DistanceKind::l2, DistanceKind::pearson, DistanceKind::ssim})
    CHECK(distance(kind, a, b).item() == doctest::Approx(distance(kind, b, a).item()).epsilon(1e-12));

  // constant channel under pearson: rho := 0, scored as distance 1, flagged
  FeaturePyramid flat{Tensor::full({1, 4, 4}, 2.0)};
  FeaturePyramid other{randn(rng, {1, 4, 4})};
  DistanceStats stats;
  CHECK(distance(DistanceKind::pearson, flat, other, &stats).item() == doctest::Approx(1.0));
  CHECK(stats.degenerate_channels > 0);

  FeaturePyramid wrong{a[0]};
  CHECK_THROWS_AS(distance(DistanceKind::l2, a, wrong), ConfigError);
}

TEST_CASE("kd_loss_et") {
  Rng rng(44);
  DistillConfig cfg;
  cfg.n = 0;
  cfg.source = KnowledgeSource::none;

  Adapter id = make_adapter(2, 3, 3, rng);
  FeaturePyramid f_s = rand_pyr(rng, 3, true);
  FeaturePyramid f_t;
  for (const Tensor& t : f_s) f_t.push_back(t.detach());
  CHECK(kd_loss_et(f_t, f_s, id, cfg).item() == doctest::Approx(0.0).epsilon(1e-12));

  // hand case: single 1x1x2 scale, identity extraction, l2, unit weight
  DistillConfig unit = cfg;
  unit.lambda_kd = 1.0;
  Adapter id1 = make_adapter(1, 1, 1, rng);
  FeaturePyramid t1{Tensor({1, 1, 2}, {1.0, 3.0})};
  FeaturePyramid s1{Tensor({1, 1, 2}, {0.0, 0.0}, true)};
  CHECK(kd_loss_et(t1, s1, id1, unit).item() == doctest::Approx(5.0).epsilon(1e-12));

  // teacher side must stay untracked
  FeaturePyramid tracked_teacher = rand_pyr(rng, 3, true);
  CHECK_THROWS_AS(kd_loss_et(tracked_teacher, f_s, id, cfg), ConfigError);
}

TEST_CASE("kd_loss_uet reductions") {
  Rng net_rng(45);
  Adapter id = make_adapter(2, 3, 3, net_rng);
  FeaturePyramid f_s = rand_pyr(net_rng, 3, true);
  Rng trng(46);
  FeaturePyramid f_t = rand_pyr(trng, 3);

  DistillConfig et;
  et.n = 0;
  et.source = KnowledgeSource::none;

  // ratios all zero + residual off: identical to the plain path, every kind
  for (auto ek : {ExtractKind::identity, ExtractKind::pearson_norm, ExtractKind::attention})
    for (auto dk : {DistanceKind::l2, DistanceKind::pearson, DistanceKind::ssim}) {
      DistillConfig uet;
      uet.n = 3;
      uet.schedule = zero_schedule(3);
      uet.extraction = ek;
      uet.distance = dk;
      uet.source = KnowledgeSource::teacher;
      uet.residual = false;
      et.extraction = ek;
      et.distance = dk;
      Rng rng(47);
      const double lhs = kd_loss_uet(f_t, f_s, id, uet, rng, 0).item();
      const double rhs = kd_loss_et(f_t, f_s, id, et).item();
      CHECK(std::abs(lhs - rhs) < 1e-12);
    }

  // ratios zero + residual on: teacher target becomes exactly 2*F_T
  DistillConfig uet;
  uet.n = 2;
  uet.schedule = zero_schedule(2);
  uet.source = KnowledgeSource::teacher;
  uet.residual = true;
  uet.lambda_kd = 1.0;  // compare against the raw distance below
  Rng rng(48);
  const double lhs = kd_loss_uet(f_t, f_s, id, uet, rng, 0).item();
  FeaturePyramid doubled;
  for (const Tensor& t : f_t) doubled.push_back(scale(t, 2.0));
  const double rhs = distance(DistanceKind::l2, doubled, adapt(id, f_s)).item();
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));

  // pearson is blind to that doubling
  uet.distance = DistanceKind::pearson;
  et.extraction = ExtractKind::identity;
  et.distance = DistanceKind::pearson;
  et.lambda_kd = uet.lambda_kd;
  Rng rng2(49);
  CHECK(kd_loss_uet(f_t, f_s, id, uet, rng2, 0).item() ==
        doctest::Approx(kd_loss_et(f_t, f_s, id, et).item()).epsilon(1e-12));

  // bitwise reproducibility with live dropout
  DistillConfig live;
  live.n = 5;
  live.source = KnowledgeSource::teacher;
  Rng ra(50), rb(50);
  CHECK(kd_loss_uet(f_t, f_s, id, live, ra, 3).item() ==
        kd_loss_uet(f_t, f_s, id, live, rb, 3).item());
}

TEST_CASE("distill config validation") {
  DistillConfig bad;
  bad.n = 0;
  bad.source = KnowledgeSource::teacher;
  CHECK_THROWS_AS(validate(bad), ConfigError);

  DistillConfig ok;  // a source-less config may keep the default N; the loss is plain ET
  ok.n = 5;
  ok.source = KnowledgeSource::none;
  CHECK_NOTHROW(validate(ok));

  DistillConfig bad3;
  bad3.lambda_kd = -1.0;
  CHECK_THROWS_AS(validate(bad3), ConfigError);
}

TEST_CASE("gradient isolation") {
  PyramidSpec spec;
  spec.image_h = spec.image_w = 16;
  Rng rng(51);
  DetNet teacher = build_detnet(spec, 8, 1, Role::teacher, rng);
  teacher.set_requires_grad(false);
  DetNet student = build_detnet(spec, 4, 1, Role::student, rng);
  Adapter adapter = make_adapter(3, 4, 8, rng);

  Tensor img = randn(rng, {1, 16, 16});
  auto f_t = teacher.forward_pyramid(img);
  auto f_s = student.forward_pyramid(img);

  DistillConfig cfg;
  cfg.n = 3;
  cfg.source = KnowledgeSource::both;
  Rng mc(52);
  Tensor loss = kd_loss_uet(f_t, f_s, adapter, cfg, mc, 1);
  backward(loss);

  for (const Tensor* p : static_cast<const DetNet&>(teacher).params()) CHECK_FALSE(p->has_grad());
  bool any_student = false;
  for (Tensor* p : student.params())
    if (p->has_grad())
      for (int64_t i = 0; i < p->numel(); ++i) {
        CHECK(std::isfinite(p->grad()[i]));
        any_student = any_student || p->grad()[i] != 0.0;
      }
  CHECK(any_student);
  bool any_adapter = false;
  for (Tensor* p : adapter.params())
    if (p->has_grad())
      for (int64_t i = 0; i < p->numel(); ++i) any_adapter = any_adapter || p->grad()[i] != 0.0;
  CHECK(any_adapter);
}

TEST_CASE("kd_loss_logits") {
  PyramidSpec spec;
  spec.image_h = spec.image_w = 16;
  Rng rng(53);
  DetNet teacher = build_detnet(spec, 8, 1, Role::teacher, rng);
  teacher.set_requires_grad(false);
  Tensor img = randn(rng, {1, 16, 16});

  // identical nets, no uncertainty, no residual: softened KL is zero
  Rng twin_rng(53);
  DetNet twin = build_detnet(spec, 8, 1, Role::student, twin_rng);
  DistillConfig cfg;
  cfg.logits_mode = true;
  cfg.n = 2;
  cfg.schedule = zero_schedule(2);
  cfg.source = KnowledgeSource::teacher;
  cfg.residual = false;
  Rng mc(54);
  CHECK(kd_loss_logits(teacher, twin, img, cfg, mc, 0).item() ==
        doctest::Approx(0.0).epsilon(1e-12));

  // residual doubles the teacher features, so logits move off the baseline
  cfg.residual = true;
  Rng mc2(55);
  const double shifted = kd_loss_logits(teacher, twin, img, cfg, mc2, 0).item();
  CHECK(shifted > 0.0);

  // live dropout: KL stays non-negative
  cfg.schedule = RatioSchedule{};
  cfg.n = 5;
  Rng mc3(56);
  CHECK(kd_loss_logits(teacher, twin, img, cfg, mc3, 2).item() >= 0.0);
}
