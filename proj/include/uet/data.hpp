#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uet/rng.hpp"
#include "uet/tensor.hpp"

namespace uet {

// Dense per-cell classification over rendered shapes. Classes:
// 0 background, 1 square, 2 disk, 3 cross. Labels at scale i are the
// majority-downsample of the scale-0 map; train labels get flip noise.
struct Sample {
  Tensor image;                          // [1, H, W], values in [0,1]
  std::vector<std::vector<int>> labels;  // per scale, row-major [H/2^i * W/2^i]
};

struct DataConfig {
  int n_samples = 2500;  // split 80/20 into train/eval
  double label_noise_rate = 0.2;
  int shapes_min = 1;
  int shapes_max = 3;
  bool overlap_allowed = true;
  uint64_t seed = 0;
};

void validate(const DataConfig& cfg);

constexpr int kNumClasses = 4;
constexpr int kImageSize = 32;

Sample gen_sample(const DataConfig& cfg, int index, bool with_noise, int scales = 3);

struct Dataset {
  std::vector<Sample> train;  // noisy labels
  std::vector<Sample> eval;   // clean labels
};

Dataset gen_split(const DataConfig& cfg, int scales = 3);

uint64_t dataset_digest(const Dataset& ds);

// fraction of background cells at scale 0 over a set of samples
double background_fraction(const std::vector<Sample>& samples);

void dump_dataset(const std::string& path, const Dataset& ds);

}  // namespace uet
