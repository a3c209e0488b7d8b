#include "uet/model.hpp"

#include <cmath>

#include "json.hpp"

namespace uet {

namespace {

Tensor he_conv(int cout, int cin, int k, Rng& rng, bool rg) {
  std::vector<double> w(static_cast<size_t>(cout) * cin * k * k);
  const double std = std::sqrt(2.0 / (cin * k * k));
  for (auto& v : w) v = rng.next_normal() * std;
  return Tensor({cout, cin, k, k}, std::move(w), rg);
}

}  // namespace

std::vector<Tensor*> DetNet::params() {
  std::vector<Tensor*> out{&stem_w, &stem_b};
  for (auto& t : stage_w) out.push_back(&t);
  for (auto& t : stage_b) out.push_back(&t);
  for (auto& t : lateral_w) out.push_back(&t);
  for (auto& t : lateral_b) out.push_back(&t);
  for (auto& t : head_w) out.push_back(&t);
  for (auto& t : head_b) out.push_back(&t);
  return out;
}

std::vector<const Tensor*> DetNet::params() const {
  auto ps = const_cast<DetNet*>(this)->params();
  return {ps.begin(), ps.end()};
}

void DetNet::set_requires_grad(bool rg) {
  for (Tensor* t : params()) *t = t->detach(rg);
}

void DetNet::zero_grads() {
  for (Tensor* t : params()) t->zero_grad();
}

DetNet build_detnet(const PyramidSpec& spec, int width, int depth, Role role, Rng& rng) {
  if (width < 4) throw ConfigError("build_detnet: width must be >= 4");
  if (depth < 1) throw ConfigError("build_detnet: depth must be >= 1");
  if (spec.scales < 2) throw ConfigError("build_detnet: pyramid needs at least 2 scales");
  const int div = 1 << (spec.scales - 1);
  if (spec.image_h % div != 0 || spec.image_w % div != 0)
    throw ConfigError("build_detnet: spatial size not divisible by 2^(M-1)");

  const bool rg = role == Role::student;
  DetNet net;
  net.spec = spec;
  net.width = width;
  net.depth = depth;
  net.role = role;
  const int pch = net.pyramid_channels();

  net.stem_w = he_conv(width, spec.image_channels, 3, rng, rg);
  net.stem_b = Tensor::zeros({width}, rg);
  for (int s = 0; s < spec.scales; ++s) {
    for (int d = 0; d < depth; ++d) {
      net.stage_w.push_back(he_conv(width, width, 3, rng, rg));
      net.stage_b.push_back(Tensor::zeros({width}, rg));
    }
    net.lateral_w.push_back(he_conv(pch, width, 1, rng, rg));
    net.lateral_b.push_back(Tensor::zeros({pch}, rg));
    net.head_w.push_back(he_conv(spec.num_classes, pch, 1, rng, rg));
    net.head_b.push_back(Tensor::zeros({spec.num_classes}, rg));
  }
  return net;
}

FeaturePyramid DetNet::forward_pyramid(const Tensor& image) const {
  if (image.shape() != Shape{spec.image_channels, spec.image_h, spec.image_w})
    throw ConfigError("forward_pyramid: image shape " + shape_str(image.shape()) +
                      " does not match spec");
  FeaturePyramid pyramid;
  Tensor x = relu(bias_add(conv2d(image, stem_w, 1, 1), stem_b));
  for (int s = 0; s < spec.scales; ++s) {
    if (s > 0) x = pool2x(x);
    for (int d = 0; d < depth; ++d)
      x = relu(bias_add(conv2d(x, stage_w[s * depth + d], 1, 1), stage_b[s * depth + d]));
    pyramid.push_back(bias_add(conv2d(x, lateral_w[s]), lateral_b[s]));
  }
  return pyramid;
}

std::vector<Tensor> DetNet::forward_head(const FeaturePyramid& pyramid) const {
  if (static_cast<int>(pyramid.size()) != spec.scales)
    throw ConfigError("forward_head: pyramid scale count mismatch");
  std::vector<Tensor> logits;
  for (int s = 0; s < spec.scales; ++s) {
    if (pyramid[s].shape()[0] != pyramid_channels())
      throw ConfigError("forward_head: channel mismatch at scale " + std::to_string(s));
    logits.push_back(bias_add(conv2d(pyramid[s], head_w[s]), head_b[s]));
  }
  return logits;
}

void save_detnet(const std::string& path, const DetNet& net) {
  nlohmann::json meta{{"role", net.role == Role::teacher ? "teacher" : "student"},
                      {"width", net.width},
                      {"depth", net.depth},
                      {"scales", net.spec.scales},
                      {"channels_per_scale", net.spec.channels_per_scale},
                      {"image_channels", net.spec.image_channels},
                      {"image_h", net.spec.image_h},
                      {"image_w", net.spec.image_w},
                      {"num_classes", net.spec.num_classes}};
  Container c;
  c.meta = meta.dump();
  auto ps = net.params();
  for (size_t i = 0; i < ps.size(); ++i)
    c.tensors.emplace_back("p" + std::to_string(i), ps[i]->detach());
  save_container(path, c);
}

DetNet load_detnet(const std::string& path) {
  Container c = load_container(path);
  nlohmann::json meta = nlohmann::json::parse(c.meta);
  PyramidSpec spec;
  spec.scales = meta.at("scales");
  spec.channels_per_scale = meta.at("channels_per_scale");
  spec.image_channels = meta.at("image_channels");
  spec.image_h = meta.at("image_h");
  spec.image_w = meta.at("image_w");
  spec.num_classes = meta.at("num_classes");
  const Role role = meta.at("role") == "teacher" ? Role::teacher : Role::student;
  Rng rng(0);
  DetNet net = build_detnet(spec, meta.at("width"), meta.at("depth"), role, rng);
  auto ps = net.params();
  if (ps.size() != c.tensors.size()) throw ConfigError("checkpoint parameter count mismatch");
  for (size_t i = 0; i < ps.size(); ++i) {
    const Tensor& t = c.tensors[i].second;
    if (t.shape() != ps[i]->shape()) throw ConfigError("checkpoint parameter shape mismatch");
    *ps[i] = t.detach(role == Role::student);
  }
  return net;
}

std::vector<Tensor*> Adapter::params() {
  std::vector<Tensor*> out;
  for (auto& t : w) out.push_back(&t);
  return out;
}

std::vector<const Tensor*> Adapter::params() const {
  std::vector<const Tensor*> out;
  for (const auto& t : w) out.push_back(&t);
  return out;
}

void Adapter::zero_grads() {
  for (auto& t : w) t.zero_grad();
}

Adapter make_adapter(int scales, int student_channels, int teacher_channels, Rng& rng) {
  Adapter a;
  for (int s = 0; s < scales; ++s) {
    if (student_channels == teacher_channels) {
      std::vector<double> w(static_cast<size_t>(teacher_channels) * student_channels, 0.0);
      for (int c = 0; c < teacher_channels; ++c) w[c * student_channels + c] = 1.0;
      a.w.emplace_back(Shape{teacher_channels, student_channels, 1, 1}, std::move(w), true);
    } else {
      a.w.push_back(he_conv(teacher_channels, student_channels, 1, rng, true));
    }
  }
  return a;
}

FeaturePyramid adapt(const Adapter& adapter, const FeaturePyramid& student_pyramid) {
  if (adapter.w.size() != student_pyramid.size())
    throw ConfigError("adapt: scale-count mismatch");
  FeaturePyramid out;
  for (size_t s = 0; s < adapter.w.size(); ++s)
    out.push_back(conv2d(student_pyramid[s], adapter.w[s]));
  return out;
}

}  // namespace uet
