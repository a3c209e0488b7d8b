#pragma once

#include <string>
#include <vector>

#include "uet/checkpoint.hpp"
#include "uet/rng.hpp"
#include "uet/tensor.hpp"

namespace uet {

using FeaturePyramid = std::vector<Tensor>;  // scale i shaped [C, H/2^i, W/2^i]

struct PyramidSpec {
  int scales = 3;
  int channels_per_scale = 0;  // 0: pyramid channels follow the net width
  int image_channels = 1;
  int image_h = 32;
  int image_w = 32;
  int num_classes = 4;
};

enum class Role { teacher, student };

// Minimal FPN-style net: a conv stem, depth x (3x3 conv + ReLU) per stage
// with 2x mean pooling between stages, per-stage lateral 1x1 convs forming
// the pyramid, and per-scale 1x1 conv heads to class logits.
struct DetNet {
  PyramidSpec spec;
  int width = 0;
  int depth = 0;
  Role role = Role::teacher;

  Tensor stem_w, stem_b;
  std::vector<Tensor> stage_w, stage_b;      // scales * depth
  std::vector<Tensor> lateral_w, lateral_b;  // per scale
  std::vector<Tensor> head_w, head_b;        // per scale

  int pyramid_channels() const {
    return spec.channels_per_scale > 0 ? spec.channels_per_scale : width;
  }

  std::vector<Tensor*> params();
  std::vector<const Tensor*> params() const;
  void set_requires_grad(bool rg);
  void zero_grads();

  FeaturePyramid forward_pyramid(const Tensor& image) const;
  std::vector<Tensor> forward_head(const FeaturePyramid& pyramid) const;
  std::string digest() const { return param_digest(params()); }
};

DetNet build_detnet(const PyramidSpec& spec, int width, int depth, Role role, Rng& rng);

void save_detnet(const std::string& path, const DetNet& net);
DetNet load_detnet(const std::string& path);

// Per-scale 1x1 conv aligning student channels to teacher channels.
// Identity-initialized when the channel counts match.
struct Adapter {
  std::vector<Tensor> w;  // [t_ch, s_ch, 1, 1] per scale
  std::vector<Tensor*> params();
  std::vector<const Tensor*> params() const;
  void zero_grads();
};

Adapter make_adapter(int scales, int student_channels, int teacher_channels, Rng& rng);
FeaturePyramid adapt(const Adapter& adapter, const FeaturePyramid& student_pyramid);

}  // namespace uet
