#include "uet/distill.hpp"

#include <algorithm>
#include <cmath>

namespace uet {

using detail::make_leaf;
using detail::make_tracked;

void validate(const DistillConfig& cfg) {
  if (cfg.n < 0) throw ConfigError("distill: N must be >= 0");
  if (cfg.n == 0 && cfg.source != KnowledgeSource::none)
    throw ConfigError("distill: N=0 requires source=none");
  if (cfg.source != KnowledgeSource::none && cfg.n < 1)
    throw ConfigError("distill: a knowledge source requires N >= 1");
  if (!(cfg.lambda_kd > 0.0) || !std::isfinite(cfg.lambda_kd))
    throw ConfigError("distill: lambda_kd must be finite and positive");
  if (cfg.temperature <= 0.0) throw ConfigError("distill: temperature must be positive");
}

// ---------------------------------------------------------------------------
// knowledge extraction
// ---------------------------------------------------------------------------

namespace {

constexpr double kNormEps = 1e-6;
constexpr double kAttnTau = 0.5;  // FGD-style attention temperature

// per-channel standardization over spatial positions
Tensor pearson_norm(const Tensor& f) {
  const int C = f.shape()[0];
  const int S = f.shape()[1] * f.shape()[2];
  std::vector<double> out(f.data().size());
  const double* px = f.data().data();
  for (int c = 0; c < C; ++c) {
    const double* x = px + static_cast<size_t>(c) * S;
    double* y = out.data() + static_cast<size_t>(c) * S;
    double mu = 0.0;
    for (int i = 0; i < S; ++i) mu += x[i];
    mu /= S;
    double var = 0.0;
    for (int i = 0; i < S; ++i) var += (x[i] - mu) * (x[i] - mu);
    var /= S;
    const double inv = 1.0 / (std::sqrt(var) + kNormEps);
    for (int i = 0; i < S; ++i) y[i] = (x[i] - mu) * inv;
  }
  detail::check_finite(out, "pearson_norm");
  if (!f.requires_grad()) return make_leaf(f.shape(), std::move(out));
  return make_tracked(f.shape(), std::move(out), {f}, [C, S](Node& nd) {
    Node& nx = *nd.inputs[0];
    nx.ensure_grad();
    for (int c = 0; c < C; ++c) {
      const double* x = nx.value.data() + static_cast<size_t>(c) * S;
      const double* g = nd.grad.data() + static_cast<size_t>(c) * S;
      double* dx = nx.grad.data() + static_cast<size_t>(c) * S;
      double mu = 0.0;
      for (int i = 0; i < S; ++i) mu += x[i];
      mu /= S;
      double var = 0.0;
      for (int i = 0; i < S; ++i) var += (x[i] - mu) * (x[i] - mu);
      var /= S;
      const double sigma = std::sqrt(var);
      const double a = 1.0 / (sigma + kNormEps);
      double gbar = 0.0, gdot = 0.0;
      for (int i = 0; i < S; ++i) {
        gbar += g[i];
        gdot += g[i] * (x[i] - mu);
      }
      gbar /= S;
      // d/dx_k of (x-mu)/(sigma+eps): centering term plus the sigma path
      const double sig_coeff = sigma > 1e-12 ? a * a * gdot / (S * sigma) : 0.0;
      for (int i = 0; i < S; ++i) dx[i] += a * (g[i] - gbar) - sig_coeff * (x[i] - mu);
    }
  });
}

// F weighted by spatial and channel attention derived from mean |F|
Tensor attention_extract(const Tensor& f) {
  const int C = f.shape()[0];
  const int S = f.shape()[1] * f.shape()[2];
  const double* x = f.data().data();

  std::vector<double> ms(S, 0.0), mc(C, 0.0);
  for (int c = 0; c < C; ++c) {
    const double* xc = x + static_cast<size_t>(c) * S;
    double acc = 0.0;
    for (int i = 0; i < S; ++i) {
      const double a = std::abs(xc[i]);
      ms[i] += a;
      acc += a;
    }
    mc[c] = acc / S;
  }
  for (int i = 0; i < S; ++i) ms[i] /= C;

  auto softmax = [](std::vector<double>& v) {
    double mx = v[0];
    for (double t : v) mx = std::max(mx, t);
    double z = 0.0;
    for (double& t : v) {
      t = std::exp(kAttnTau * (t - mx));
      z += t;
    }
    for (double& t : v) t /= z;
  };
  std::vector<double> ps = ms, pc = mc;
  softmax(ps);
  softmax(pc);

  std::vector<double> out(f.data().size());
  for (int c = 0; c < C; ++c) {
    const double wc = C * pc[c];
    const double* xc = x + static_cast<size_t>(c) * S;
    double* yc = out.data() + static_cast<size_t>(c) * S;
    for (int i = 0; i < S; ++i) yc[i] = xc[i] * (S * ps[i]) * wc;
  }
  detail::check_finite(out, "attention_extract");
  if (!f.requires_grad()) return make_leaf(f.shape(), std::move(out));
  return make_tracked(f.shape(), std::move(out), {f},
                      [C, S, ps = std::move(ps), pc = std::move(pc)](Node& nd) {
    Node& nx = *nd.inputs[0];
    nx.ensure_grad();
    const double* x = nx.value.data();
    const double* g = nd.grad.data();

    // direct term, plus gather of the attention-path contributions
    std::vector<double> hs(S, 0.0), hc(C, 0.0);
    for (int c = 0; c < C; ++c) {
      const double wc = C * pc[c];
      const double* xc = x + static_cast<size_t>(c) * S;
      const double* gc = g + static_cast<size_t>(c) * S;
      double* dxc = nx.grad.data() + static_cast<size_t>(c) * S;
      double accc = 0.0;
      for (int i = 0; i < S; ++i) {
        const double ws = S * ps[i];
        dxc[i] += gc[i] * ws * wc;
        hs[i] += gc[i] * xc[i] * wc;   // dL/dw_s before the softmax jacobian
        accc += gc[i] * xc[i] * ws;    // dL/dw_c
      }
      hc[c] = accc;
    }
    // softmax jacobians: w_s = S*softmax(tau*m_s), w_c = C*softmax(tau*m_c)
    double dot_s = 0.0;
    for (int i = 0; i < S; ++i) dot_s += hs[i] * ps[i];
    std::vector<double> dms(S);
    for (int i = 0; i < S; ++i) dms[i] = kAttnTau * S * ps[i] * (hs[i] - dot_s);
    double dot_c = 0.0;
    for (int c = 0; c < C; ++c) dot_c += hc[c] * pc[c];
    std::vector<double> dmc(C);
    for (int c = 0; c < C; ++c) dmc[c] = kAttnTau * C * pc[c] * (hc[c] - dot_c);

    // m_s and m_c are means of |x|; route through sign(x)
    for (int c = 0; c < C; ++c) {
      const double* xc = x + static_cast<size_t>(c) * S;
      double* dxc = nx.grad.data() + static_cast<size_t>(c) * S;
      const double dmcc = dmc[c] / S;
      for (int i = 0; i < S; ++i) {
        const double da = dms[i] / C + dmcc;
        dxc[i] += (xc[i] > 0.0 ? da : (xc[i] < 0.0 ? -da : 0.0));
      }
    }
  });
}

}  // namespace

Tensor extract_one(ExtractKind kind, const Tensor& f) {
  if (f.shape().size() != 3) throw ConfigError("extract: feature map must be [C,H,W]");
  switch (kind) {
    case ExtractKind::identity:
      return f;
    case ExtractKind::pearson_norm:
      return pearson_norm(f);
    case ExtractKind::attention:
      return attention_extract(f);
  }
  throw ConfigError("extract: unknown kind");
}

std::vector<Tensor> extract(ExtractKind kind, const FeaturePyramid& f) {
  std::vector<Tensor> out;
  out.reserve(f.size());
  for (const Tensor& t : f) out.push_back(extract_one(kind, t));
  return out;
}

// ---------------------------------------------------------------------------
// transfer distances
// ---------------------------------------------------------------------------

namespace {

struct ChannelView {
  const double* a;
  const double* b;
  int n;
};

// (scale, channel) pairs of flattened spatial maps
std::vector<ChannelView> channel_views(const std::vector<const std::vector<double>*>& av,
                                       const std::vector<const std::vector<double>*>& bv,
                                       const std::vector<Shape>& shapes) {
  std::vector<ChannelView> out;
  for (size_t s = 0; s < shapes.size(); ++s) {
    const int C = shapes[s][0];
    const int n = shapes[s][1] * shapes[s][2];
    for (int c = 0; c < C; ++c)
      out.push_back({av[s]->data() + static_cast<size_t>(c) * n,
                     bv[s]->data() + static_cast<size_t>(c) * n, n});
  }
  return out;
}

constexpr double kVarEps = 1e-24;  // squared-norm threshold for a constant map

double pearson_rho(const ChannelView& v, bool* degenerate) {
  double ma = 0.0, mb = 0.0;
  for (int i = 0; i < v.n; ++i) {
    ma += v.a[i];
    mb += v.b[i];
  }
  ma /= v.n;
  mb /= v.n;
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (int i = 0; i < v.n; ++i) {
    const double da = v.a[i] - ma, db = v.b[i] - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  if (saa < kVarEps || sbb < kVarEps) {
    *degenerate = true;
    return 0.0;
  }
  *degenerate = false;
  return sab / std::sqrt(saa * sbb);
}

struct SsimTerms {
  double n1, n2, d1, d2, mu_a, mu_b;
};

SsimTerms ssim_terms(const ChannelView& v, double c1, double c2) {
  double ma = 0.0, mb = 0.0;
  for (int i = 0; i < v.n; ++i) {
    ma += v.a[i];
    mb += v.b[i];
  }
  ma /= v.n;
  mb /= v.n;
  double va = 0.0, vb = 0.0, cov = 0.0;
  for (int i = 0; i < v.n; ++i) {
    const double da = v.a[i] - ma, db = v.b[i] - mb;
    va += da * da;
    vb += db * db;
    cov += da * db;
  }
  va /= v.n;
  vb /= v.n;
  cov /= v.n;
  return {2.0 * ma * mb + c1, 2.0 * cov + c2, ma * ma + mb * mb + c1, va + vb + c2, ma, mb};
}

}  // namespace

Tensor distance(DistanceKind kind, const std::vector<Tensor>& a, const std::vector<Tensor>& b,
                DistanceStats* stats) {
  if (a.size() != b.size() || a.empty())
    throw ConfigError("distance: pyramids must have the same non-zero scale count");
  std::vector<Shape> shapes;
  for (size_t s = 0; s < a.size(); ++s) {
    if (a[s].shape() != b[s].shape())
      throw ConfigError("distance: shape mismatch at scale " + std::to_string(s));
    if (a[s].shape().size() != 3) throw ConfigError("distance: maps must be [C,H,W]");
    shapes.push_back(a[s].shape());
  }
  const size_t m = a.size();

  std::vector<const std::vector<double>*> av, bv;
  for (const auto& t : a) av.push_back(&t.node()->value);
  for (const auto& t : b) bv.push_back(&t.node()->value);

  int64_t total_elems = 0;
  int total_channels = 0;
  for (const auto& sh : shapes) {
    total_elems += shape_numel(sh);
    total_channels += sh[0];
  }

  double dist = 0.0;
  int degenerate = 0;
  switch (kind) {
    case DistanceKind::l2: {
      double acc = 0.0;
      for (size_t s = 0; s < m; ++s)
        for (size_t i = 0; i < av[s]->size(); ++i) {
          const double d = (*av[s])[i] - (*bv[s])[i];
          acc += d * d;
        }
      dist = acc / static_cast<double>(total_elems);
      break;
    }
    case DistanceKind::pearson: {
      double acc = 0.0;
      for (const auto& v : channel_views(av, bv, shapes)) {
        bool deg = false;
        acc += 1.0 - pearson_rho(v, &deg);
        if (deg) ++degenerate;
      }
      dist = acc / total_channels;
      break;
    }
    case DistanceKind::ssim: {
      double mx = (*av[0])[0], mn = mx;
      for (size_t s = 0; s < m; ++s)
        for (const auto* vec : {av[s], bv[s]})
          for (double v : *vec) {
            mx = std::max(mx, v);
            mn = std::min(mn, v);
          }
      const double range = mx - mn;
      if (range == 0.0) {
        dist = 0.0;  // all values identical: SSIM = 1 everywhere
        break;
      }
      const double c1 = 1e-4 * range * range;     // (0.01 L)^2
      const double c2 = 9e-4 * range * range;     // (0.03 L)^2
      double acc = 0.0;
      for (const auto& v : channel_views(av, bv, shapes)) {
        const SsimTerms t = ssim_terms(v, c1, c2);
        acc += 1.0 - (t.n1 * t.n2) / (t.d1 * t.d2);
      }
      dist = acc / total_channels;
      break;
    }
  }
  if (stats) stats->degenerate_channels = degenerate;
  if (!std::isfinite(dist)) throw NumericError("distance: non-finite result");

  std::vector<Tensor> inputs = a;
  inputs.insert(inputs.end(), b.begin(), b.end());
  if (!detail::any_tracked(inputs)) return make_leaf({1}, {dist});

  return make_tracked({1}, {dist}, std::move(inputs),
                      [kind, m, shapes, total_elems, total_channels](Node& nd) {
    const double g = nd.grad[0];
    std::vector<const std::vector<double>*> av, bv;
    std::vector<Node*> an, bn;
    for (size_t s = 0; s < m; ++s) {
      an.push_back(nd.inputs[s].get());
      bn.push_back(nd.inputs[m + s].get());
      av.push_back(&an.back()->value);
      bv.push_back(&bn.back()->value);
    }
    for (Node* n : an)
      if (n->requires_grad) n->ensure_grad();
    for (Node* n : bn)
      if (n->requires_grad) n->ensure_grad();

    switch (kind) {
      case DistanceKind::l2: {
        const double coeff = 2.0 * g / static_cast<double>(total_elems);
        for (size_t s = 0; s < m; ++s) {
          const size_t n = av[s]->size();
          for (size_t i = 0; i < n; ++i) {
            const double d = coeff * ((*av[s])[i] - (*bv[s])[i]);
            if (an[s]->requires_grad) an[s]->grad[i] += d;
            if (bn[s]->requires_grad) bn[s]->grad[i] -= d;
          }
        }
        break;
      }
      case DistanceKind::pearson: {
        const double coeff = -g / total_channels;  // d(1-rho)/drho = -1
        for (size_t s = 0; s < m; ++s) {
          const int C = shapes[s][0];
          const int n = shapes[s][1] * shapes[s][2];
          for (int c = 0; c < C; ++c) {
            const double* pa = av[s]->data() + static_cast<size_t>(c) * n;
            const double* pb = bv[s]->data() + static_cast<size_t>(c) * n;
            double ma = 0.0, mb = 0.0;
            for (int i = 0; i < n; ++i) {
              ma += pa[i];
              mb += pb[i];
            }
            ma /= n;
            mb /= n;
            double saa = 0.0, sbb = 0.0, sab = 0.0;
            for (int i = 0; i < n; ++i) {
              const double da = pa[i] - ma, db = pb[i] - mb;
              saa += da * da;
              sbb += db * db;
              sab += da * db;
            }
            if (saa < kVarEps || sbb < kVarEps) continue;  // rho pinned to 0
            const double norm = std::sqrt(saa * sbb);
            const double rho = sab / norm;
            for (int i = 0; i < n; ++i) {
              const double da = pa[i] - ma, db = pb[i] - mb;
              if (an[s]->requires_grad)
                an[s]->grad[static_cast<size_t>(c) * n + i] += coeff * (db / norm - rho * da / saa);
              if (bn[s]->requires_grad)
                bn[s]->grad[static_cast<size_t>(c) * n + i] += coeff * (da / norm - rho * db / sbb);
            }
          }
        }
        break;
      }
      case DistanceKind::ssim: {
        double mx = (*av[0])[0], mn_ = mx;
        size_t mx_side = 0, mx_scale = 0, mx_off = 0, mn_side = 0, mn_scale = 0, mn_off = 0;
        for (size_t s = 0; s < m; ++s) {
          for (size_t side = 0; side < 2; ++side) {
            const auto& vec = side == 0 ? *av[s] : *bv[s];
            for (size_t i = 0; i < vec.size(); ++i) {
              if (vec[i] > mx) {
                mx = vec[i];
                mx_side = side;
                mx_scale = s;
                mx_off = i;
              }
              if (vec[i] < mn_) {
                mn_ = vec[i];
                mn_side = side;
                mn_scale = s;
                mn_off = i;
              }
            }
          }
        }
        const double range = mx - mn_;
        if (range == 0.0) break;
        const double c1 = 1e-4 * range * range;
        const double c2 = 9e-4 * range * range;
        const double coeff = -g / total_channels;
        double d_range = 0.0;  // accumulated dL/dL_range through C1 and C2
        for (size_t s = 0; s < m; ++s) {
          const int C = shapes[s][0];
          const int n = shapes[s][1] * shapes[s][2];
          for (int c = 0; c < C; ++c) {
            const ChannelView v{av[s]->data() + static_cast<size_t>(c) * n,
                                bv[s]->data() + static_cast<size_t>(c) * n, n};
            const SsimTerms t = ssim_terms(v, c1, c2);
            const double dd = t.d1 * t.d2;
            const double p = t.n2 / dd;                  // dS/dN1
            const double q = t.n1 / dd;                  // dS/dN2
            const double r = -t.n1 * t.n2 / (t.d1 * dd); // dS/dD1
            const double u = -t.n1 * t.n2 / (t.d2 * dd); // dS/dD2
            const double inv_n = 1.0 / n;
            for (int i = 0; i < n; ++i) {
              const double da = v.a[i] - t.mu_a, db = v.b[i] - t.mu_b;
              if (an[s]->requires_grad)
                an[s]->grad[static_cast<size_t>(c) * n + i] +=
                    coeff * inv_n * (p * 2.0 * t.mu_b + q * 2.0 * db + r * 2.0 * t.mu_a + u * 2.0 * da);
              if (bn[s]->requires_grad)
                bn[s]->grad[static_cast<size_t>(c) * n + i] +=
                    coeff * inv_n * (p * 2.0 * t.mu_a + q * 2.0 * da + r * 2.0 * t.mu_b + u * 2.0 * db);
            }
            // C1 = (0.01 L)^2, C2 = (0.03 L)^2 depend on the range extremes
            d_range += coeff * ((p + r) * 2e-4 * range + (q + u) * 18e-4 * range);
          }
        }
        Node* mx_node = (mx_side == 0 ? an[mx_scale] : bn[mx_scale]);
        Node* mn_node = (mn_side == 0 ? an[mn_scale] : bn[mn_scale]);
        if (mx_node->requires_grad) mx_node->grad[mx_off] += d_range;
        if (mn_node->requires_grad) mn_node->grad[mn_off] -= d_range;
        break;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// loss assemblies
// ---------------------------------------------------------------------------

Tensor kd_loss_et(const FeaturePyramid& f_t, const FeaturePyramid& f_s, const Adapter& adapter,
                  const DistillConfig& cfg, DistanceStats* stats) {
  if (f_t.size() != f_s.size()) throw ConfigError("kd_loss_et: pyramid scale-count mismatch");
  for (const Tensor& t : f_t)
    if (t.requires_grad()) throw ConfigError("kd_loss_et: teacher pyramid must be untracked");
  auto a = extract(cfg.extraction, f_t);
  auto b = extract(cfg.extraction, adapt(adapter, f_s));
  return scale(distance(cfg.distance, a, b, stats), cfg.lambda_kd);
}

Tensor kd_loss_uet(const FeaturePyramid& f_t, const FeaturePyramid& f_s, const Adapter& adapter,
                   const DistillConfig& cfg, Rng& rng, int epoch,
                   std::vector<double>* ratios_out) {
  validate(cfg);
  if (cfg.source == KnowledgeSource::none || cfg.n == 0)
    return kd_loss_et(f_t, f_s, adapter, cfg);
  if (f_t.size() != f_s.size()) throw ConfigError("kd_loss_uet: pyramid scale-count mismatch");

  RatioSchedule sched = cfg.schedule;
  sched.n = cfg.n;
  const std::vector<double> ratios = schedule_ratios(sched, epoch);
  if (ratios_out) *ratios_out = ratios;

  FeaturePyramid t_side = f_t;
  if (cfg.source == KnowledgeSource::teacher || cfg.source == KnowledgeSource::both) {
    auto est = estimate_uncertainty(f_t, ratios, rng);
    t_side = combine_residual(est, f_t, cfg.residual, cfg.normalize_residual);
  }
  FeaturePyramid s_side = adapt(adapter, f_s);
  if (cfg.source == KnowledgeSource::student || cfg.source == KnowledgeSource::both) {
    auto est = estimate_uncertainty(s_side, ratios, rng);
    s_side = combine_residual(est, s_side, cfg.residual, cfg.normalize_residual);
  }
  auto a = extract(cfg.extraction, t_side);
  auto b = extract(cfg.extraction, s_side);
  return scale(distance(cfg.distance, a, b), cfg.lambda_kd);
}

Tensor kd_loss_logits(const DetNet& teacher, const DetNet& student, const Tensor& image,
                      const DistillConfig& cfg, Rng& rng, int epoch,
                      std::vector<double>* ratios_out) {
  validate(cfg);
  if (teacher.spec.num_classes != student.spec.num_classes)
    throw ConfigError("kd_loss_logits: class-count mismatch");
  if (teacher.spec.scales != student.spec.scales)
    throw ConfigError("kd_loss_logits: scale-count mismatch");

  FeaturePyramid t_pyr = teacher.forward_pyramid(image);
  FeaturePyramid s_pyr = student.forward_pyramid(image);
  if (cfg.source != KnowledgeSource::none && cfg.n >= 1) {
    RatioSchedule sched = cfg.schedule;
    sched.n = cfg.n;
    const std::vector<double> ratios = schedule_ratios(sched, epoch);
    if (ratios_out) *ratios_out = ratios;
    if (cfg.source == KnowledgeSource::teacher || cfg.source == KnowledgeSource::both) {
      auto est = estimate_uncertainty(t_pyr, ratios, rng);
      t_pyr = combine_residual(est, t_pyr, cfg.residual, cfg.normalize_residual);
    }
    if (cfg.source == KnowledgeSource::student || cfg.source == KnowledgeSource::both) {
      auto est = estimate_uncertainty(s_pyr, ratios, rng);
      s_pyr = combine_residual(est, s_pyr, cfg.residual, cfg.normalize_residual);
    }
  }
  auto t_logits = teacher.forward_head(t_pyr);
  auto s_logits = student.forward_head(s_pyr);

  Tensor loss = kl_softmax_loss(t_logits[0], s_logits[0], cfg.temperature);
  for (size_t s = 1; s < t_logits.size(); ++s)
    loss = add(loss, kl_softmax_loss(t_logits[s], s_logits[s], cfg.temperature));
  return scale(loss, cfg.lambda_kd / static_cast<double>(t_logits.size()));
}

}  // namespace uet
