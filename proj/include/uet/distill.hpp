#pragma once

#include <vector>

#include "uet/model.hpp"
#include "uet/rng.hpp"
#include "uet/tensor.hpp"
#include "uet/uncertainty.hpp"

namespace uet {

enum class ExtractKind { identity, pearson_norm, attention };
enum class DistanceKind { l2, pearson, ssim };
enum class KnowledgeSource { none, teacher, student, both };

struct DistillConfig {
  int n = 5;  // MC dropout passes; 0 selects the plain extraction-transfer path
  RatioSchedule schedule;
  ExtractKind extraction = ExtractKind::identity;
  DistanceKind distance = DistanceKind::l2;
  KnowledgeSource source = KnowledgeSource::teacher;
  bool residual = true;
  bool normalize_residual = false;
  double lambda_kd = 0.1;  // distances are mean-normalized; larger weights let
                           // feature matching drown the task loss
  bool logits_mode = false;
  double temperature = 2.0;  // logits-mode softening
};

// throws ConfigError on inconsistent combinations (N=0 with a source, etc.)
void validate(const DistillConfig& cfg);

struct DistanceStats {
  int degenerate_channels = 0;  // constant maps under pearson, scored as distance 1
};

// knowledge extraction f_E; output is shape-congruent with the input pyramid
std::vector<Tensor> extract(ExtractKind kind, const FeaturePyramid& f);
Tensor extract_one(ExtractKind kind, const Tensor& f);

// transfer distance d_T over whole pyramids: scalar >= 0, zero iff congruent
Tensor distance(DistanceKind kind, const std::vector<Tensor>& a, const std::vector<Tensor>& b,
                DistanceStats* stats = nullptr);

// lambda * d_T(f_E(F_T), f_E(g(F_S)))
Tensor kd_loss_et(const FeaturePyramid& f_t, const FeaturePyramid& f_s, const Adapter& adapter,
                  const DistillConfig& cfg, DistanceStats* stats = nullptr);

// UET path: the configured side(s) become combine_residual(U_K, F)
Tensor kd_loss_uet(const FeaturePyramid& f_t, const FeaturePyramid& f_s, const Adapter& adapter,
                   const DistillConfig& cfg, Rng& rng, int epoch,
                   std::vector<double>* ratios_out = nullptr);

// logits extension: UET-combined teacher pyramid through the teacher head,
// softened KL against the student head outputs, averaged over scales
Tensor kd_loss_logits(const DetNet& teacher, const DetNet& student, const Tensor& image,
                      const DistillConfig& cfg, Rng& rng, int epoch,
                      std::vector<double>* ratios_out = nullptr);

}  // namespace uet
