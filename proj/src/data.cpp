#include "uet/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "uet/checkpoint.hpp"

namespace uet {

void validate(const DataConfig& cfg) {
  if (cfg.n_samples < 5) throw ConfigError("data: n_samples must be >= 5");
  if (cfg.label_noise_rate < 0.0 || cfg.label_noise_rate >= 0.5)
    throw ConfigError("data: label_noise_rate must be in [0, 0.5)");
  if (cfg.shapes_min < 1 || cfg.shapes_max < cfg.shapes_min)
    throw ConfigError("data: bad shapes_per_image range");
}

namespace {

constexpr double kIntensity[kNumClasses] = {0.0, 0.35, 0.65, 0.95};
constexpr double kPixelNoiseStd = 0.05;

struct ShapeInst {
  int cls;  // 1..3
  int cx, cy, r;
};

bool boxes_overlap(const ShapeInst& a, const ShapeInst& b) {
  return std::abs(a.cx - b.cx) <= a.r + b.r && std::abs(a.cy - b.cy) <= a.r + b.r;
}

void render(const ShapeInst& s, std::vector<int>& labels) {
  const int n = kImageSize;
  for (int y = std::max(0, s.cy - s.r); y <= std::min(n - 1, s.cy + s.r); ++y) {
    for (int x = std::max(0, s.cx - s.r); x <= std::min(n - 1, s.cx + s.r); ++x) {
      const int dx = x - s.cx, dy = y - s.cy;
      bool in = false;
      switch (s.cls) {
        case 1:
          in = true;  // the bounding box is the square
          break;
        case 2:
          in = dx * dx + dy * dy <= s.r * s.r;
          break;
        case 3:
          in = std::abs(dx) <= 1 || std::abs(dy) <= 1;
          break;
      }
      if (in) labels[y * n + x] = s.cls;
    }
  }
}

std::vector<int> majority_downsample(const std::vector<int>& base, int block) {
  const int n = kImageSize;
  const int m = n / block;
  std::vector<int> out(static_cast<size_t>(m) * m);
  for (int by = 0; by < m; ++by)
    for (int bx = 0; bx < m; ++bx) {
      std::array<int, kNumClasses> counts{};
      for (int y = by * block; y < (by + 1) * block; ++y)
        for (int x = bx * block; x < (bx + 1) * block; ++x) ++counts[base[y * n + x]];
      int best = 0;
      for (int c = 1; c < kNumClasses; ++c)
        if (counts[c] > counts[best]) best = c;  // tie resolves to the lowest class
      out[by * m + bx] = best;
    }
  return out;
}

}  // namespace

Sample gen_sample(const DataConfig& cfg, int index, bool with_noise, int scales) {
  validate(cfg);
  if (index < 0 || index >= cfg.n_samples)
    throw ConfigError("gen_sample: index out of range");
  Rng rng(Rng::mix(cfg.seed, static_cast<uint64_t>(index)));

  const int k = cfg.shapes_min +
                static_cast<int>(rng.next_below(static_cast<uint64_t>(cfg.shapes_max - cfg.shapes_min + 1)));
  std::vector<ShapeInst> placed;
  for (int i = 0; i < k; ++i) {
    for (int attempt = 0; attempt < 20; ++attempt) {
      ShapeInst s;
      s.cls = 1 + static_cast<int>(rng.next_below(3));
      s.r = 3 + static_cast<int>(rng.next_below(6));  // half-extent in [3, 8]
      s.cx = s.r + static_cast<int>(rng.next_below(static_cast<uint64_t>(kImageSize - 2 * s.r)));
      s.cy = s.r + static_cast<int>(rng.next_below(static_cast<uint64_t>(kImageSize - 2 * s.r)));
      if (!cfg.overlap_allowed &&
          std::any_of(placed.begin(), placed.end(),
                      [&](const ShapeInst& o) { return boxes_overlap(s, o); }))
        continue;
      placed.push_back(s);
      break;
    }
  }

  std::vector<int> base(kImageSize * kImageSize, 0);
  for (const auto& s : placed) render(s, base);

  std::vector<double> img(base.size());
  for (size_t i = 0; i < base.size(); ++i) {
    const double v = kIntensity[base[i]] + rng.next_normal() * kPixelNoiseStd;
    img[i] = std::clamp(v, 0.0, 1.0);
  }

  Sample sample;
  sample.image = Tensor({1, kImageSize, kImageSize}, std::move(img));
  for (int s = 0; s < scales; ++s)
    sample.labels.push_back(s == 0 ? base : majority_downsample(base, 1 << s));

  if (with_noise && cfg.label_noise_rate > 0.0) {
    for (auto& labels : sample.labels)
      for (int& cell : labels)
        if (cell > 0 && rng.next_uniform() < cfg.label_noise_rate) {
          const int other = static_cast<int>(rng.next_below(kNumClasses - 1));
          cell = other >= cell ? other + 1 : other;
        }
  }
  return sample;
}

Dataset gen_split(const DataConfig& cfg, int scales) {
  validate(cfg);
  const int n_train = cfg.n_samples * 4 / 5;
  Dataset ds;
  ds.train.reserve(n_train);
  ds.eval.reserve(cfg.n_samples - n_train);
  for (int i = 0; i < n_train; ++i) ds.train.push_back(gen_sample(cfg, i, true, scales));
  for (int i = n_train; i < cfg.n_samples; ++i) ds.eval.push_back(gen_sample(cfg, i, false, scales));
  return ds;
}

uint64_t dataset_digest(const Dataset& ds) {
  uint64_t h = 0xcbf29ce484222325ull;
  auto eat = [&h](const void* p, size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const auto* split : {&ds.train, &ds.eval})
    for (const Sample& s : *split) {
      eat(s.image.data().data(), s.image.data().size() * sizeof(double));
      for (const auto& l : s.labels) eat(l.data(), l.size() * sizeof(int));
    }
  return h;
}

double background_fraction(const std::vector<Sample>& samples) {
  int64_t bg = 0, total = 0;
  for (const Sample& s : samples) {
    for (int c : s.labels[0]) bg += c == 0;
    total += static_cast<int64_t>(s.labels[0].size());
  }
  return static_cast<double>(bg) / static_cast<double>(total);
}

void dump_dataset(const std::string& path, const Dataset& ds) {
  Container c;
  c.meta = "{\"kind\":\"dataset\",\"train\":" + std::to_string(ds.train.size()) +
           ",\"eval\":" + std::to_string(ds.eval.size()) + "}";
  auto put = [&c](const std::string& prefix, const std::vector<Sample>& split) {
    for (size_t i = 0; i < split.size(); ++i) {
      c.tensors.emplace_back(prefix + std::to_string(i) + ".image", split[i].image);
      for (size_t s = 0; s < split[i].labels.size(); ++s) {
        const auto& l = split[i].labels[s];
        std::vector<double> as_f64(l.begin(), l.end());
        const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(l.size()))));
        c.tensors.emplace_back(prefix + std::to_string(i) + ".labels" + std::to_string(s),
                               Tensor({side, side}, std::move(as_f64)));
      }
    }
  };
  put("train/", ds.train);
  put("eval/", ds.eval);
  save_container(path, c);
}

}  // namespace uet
