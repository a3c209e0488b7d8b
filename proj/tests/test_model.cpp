#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "uet/distill.hpp"
#include "uet/model.hpp"
#include "uet/rng.hpp"

using namespace uet;

namespace {
Tensor randn(Rng& rng, Shape shape) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.next_normal();
  return Tensor(std::move(shape), std::move(v));
}
}  // namespace

TEST_CASE("build_detnet determinism and validation") {
  PyramidSpec spec;
  Rng r1(9), r2(9);
  DetNet a = build_detnet(spec, 8, 2, Role::teacher, r1);
  DetNet b = build_detnet(spec, 8, 2, Role::teacher, r2);
  CHECK(a.digest() == b.digest());

  Rng r3(10);
  DetNet c = build_detnet(spec, 8, 2, Role::teacher, r3);
  CHECK(a.digest() != c.digest());

  CHECK_THROWS_AS(build_detnet(spec, 2, 1, Role::student, r3), ConfigError);   // width
  CHECK_THROWS_AS(build_detnet(spec, 8, 0, Role::student, r3), ConfigError);   // depth
  PyramidSpec odd = spec;
  odd.image_h = 30;  // not divisible by 2^(M-1)
  CHECK_THROWS_AS(build_detnet(odd, 8, 1, Role::student, r3), ConfigError);
}

TEST_CASE("forward_pyramid shapes and zero propagation") {
  PyramidSpec spec;
  Rng rng(11);
  DetNet net = build_detnet(spec, 8, 2, Role::teacher, rng);
  net.set_requires_grad(false);

  Tensor img = randn(rng, {1, 32, 32});
  auto pyr = net.forward_pyramid(img);
  REQUIRE(pyr.size() == 3);
  for (int s = 0; s < 3; ++s) {
    CHECK(pyr[s].shape() == Shape{8, 32 >> s, 32 >> s});
    CHECK_FALSE(pyr[s].requires_grad());  // frozen teacher builds no graph
  }

  // zero weights and biases: ReLU stack collapses to zero everywhere
  for (Tensor* p : net.params())
    for (double& v : p->mutable_data()) v = 0.0;
  auto zero_pyr = net.forward_pyramid(img);
  for (const Tensor& t : zero_pyr)
    for (int64_t i = 0; i < t.numel(); ++i) CHECK(t.data()[i] == 0.0);

  CHECK_THROWS_AS(net.forward_pyramid(randn(rng, {1, 16, 16})), ConfigError);
}

TEST_CASE("forward is a pure function of params and image") {
  PyramidSpec spec;
  Rng rng(12);
  DetNet net = build_detnet(spec, 8, 1, Role::student, rng);
  Tensor img = randn(rng, {1, 32, 32});
  auto p1 = net.forward_pyramid(img);
  auto p2 = net.forward_pyramid(img);
  for (size_t s = 0; s < p1.size(); ++s)
    for (int64_t i = 0; i < p1[s].numel(); ++i) CHECK(p1[s].data()[i] == p2[s].data()[i]);
}

TEST_CASE("forward_head logits") {
  PyramidSpec spec;
  Rng rng(13);
  DetNet net = build_detnet(spec, 8, 1, Role::teacher, rng);
  Tensor img = randn(rng, {1, 32, 32});
  auto pyr = net.forward_pyramid(img);
  auto logits = net.forward_head(pyr);
  REQUIRE(logits.size() == 3);
  for (int s = 0; s < 3; ++s) CHECK(logits[s].shape() == Shape{4, 32 >> s, 32 >> s});

  // zero head on a zero pyramid predicts the uniform distribution
  for (size_t s = 0; s < net.head_w.size(); ++s) {
    for (double& v : net.head_w[s].mutable_data()) v = 0.0;
    for (double& v : net.head_b[s].mutable_data()) v = 0.0;
  }
  auto zl = net.forward_head(pyr);
  for (int64_t i = 0; i < zl[0].numel(); ++i) CHECK(zl[0].data()[i] == 0.0);

  // head output reacts to a perturbed pyramid
  DetNet net2 = build_detnet(spec, 8, 1, Role::teacher, rng);
  auto base = net2.forward_head(pyr);
  FeaturePyramid shifted;
  for (const Tensor& t : pyr) shifted.push_back(add(t, Tensor::full(t.shape(), 0.5)));
  auto moved = net2.forward_head(shifted);
  double diff = 0.0;
  for (int64_t i = 0; i < base[0].numel(); ++i)
    diff = std::max(diff, std::abs(base[0].data()[i] - moved[0].data()[i]));
  CHECK(diff > 0.0);

  FeaturePyramid wrong{pyr[0]};
  CHECK_THROWS_AS(net.forward_head(wrong), ConfigError);
}

TEST_CASE("adapter") {
  Rng rng(14);
  // equal channels start as the identity
  Adapter same = make_adapter(2, 6, 6, rng);
  FeaturePyramid f{randn(rng, {6, 8, 8}), randn(rng, {6, 4, 4})};
  auto out = adapt(same, f);
  for (size_t s = 0; s < f.size(); ++s)
    for (int64_t i = 0; i < f[s].numel(); ++i)
      CHECK(out[s].data()[i] == doctest::Approx(f[s].data()[i]).epsilon(1e-12));

  Adapter up = make_adapter(2, 4, 8, rng);
  FeaturePyramid fs{randn(rng, {4, 8, 8}), randn(rng, {4, 4, 4})};
  auto widened = adapt(up, fs);
  CHECK(widened[0].shape() == Shape{8, 8, 8});
  CHECK(widened[1].shape() == Shape{8, 4, 4});

  CHECK_THROWS_AS(adapt(up, FeaturePyramid{fs[0]}), ConfigError);
}

TEST_CASE("detnet checkpoint round-trip") {
  PyramidSpec spec;
  Rng rng(15);
  DetNet net = build_detnet(spec, 8, 2, Role::student, rng);
  const std::string path = (std::filesystem::temp_directory_path() / "uet_net_test.bin").string();
  save_detnet(path, net);
  DetNet back = load_detnet(path);
  CHECK(back.digest() == net.digest());
  CHECK(back.width == 8);
  CHECK(back.depth == 2);
  CHECK(back.role == Role::student);
  std::remove(path.c_str());
}
