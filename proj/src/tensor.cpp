#include "uet/tensor.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

namespace uet {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) {
    if (d <= 0) throw ConfigError("tensor shape dims must be positive");
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

namespace detail {

bool any_tracked(const std::vector<Tensor>& inputs) {
  for (const auto& t : inputs)
    if (t.requires_grad()) return true;
  return false;
}

Tensor make_leaf(Shape shape, std::vector<double> value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor make_tracked(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                    std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->requires_grad = true;
  n->inputs.reserve(inputs.size());
  for (auto& t : inputs) n->inputs.push_back(t.node());
  n->backward_fn = std::move(backward_fn);
  return Tensor(std::move(n));
}

void check_finite(const std::vector<double>& v, const char* op) {
#ifndef NDEBUG
  for (double x : v)
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite value produced");
#else
  (void)v;
  (void)op;
#endif
}

}  // namespace detail

using detail::any_tracked;
using detail::make_leaf;
using detail::make_tracked;

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw ConfigError("tensor data length " + std::to_string(data.size()) +
                      " does not match shape " + shape_str(shape));
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<double>{v}, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) throw ConfigError("item() on non-scalar tensor " + shape_str(shape()));
  return node_->value[0];
}

Tensor Tensor::detach(bool requires_grad) const {
  return make_leaf(node_->shape, node_->value, requires_grad);
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

static void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  size_t n = a.data().size();
  std::vector<double> out(n);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (size_t i = 0; i < n; ++i) out[i] = pa[i] + pb[i];
  detail::check_finite(out, "add");
  if (!a.requires_grad() && !b.requires_grad()) return make_leaf(a.shape(), std::move(out));
  return make_tracked(a.shape(), std::move(out), {a, b}, [](Node& nd) {
    for (int s = 0; s < 2; ++s) {
      Node& in = *nd.inputs[s];
      if (!in.requires_grad) continue;
      in.ensure_grad();
      for (size_t i = 0; i < nd.grad.size(); ++i) in.grad[i] += nd.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  size_t n = a.data().size();
  std::vector<double> out(n);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (size_t i = 0; i < n; ++i) out[i] = pa[i] - pb[i];
  detail::check_finite(out, "sub");
  if (!a.requires_grad() && !b.requires_grad()) return make_leaf(a.shape(), std::move(out));
  return make_tracked(a.shape(), std::move(out), {a, b}, [](Node& nd) {
    Node& ia = *nd.inputs[0];
    Node& ib = *nd.inputs[1];
    if (ia.requires_grad) {
      ia.ensure_grad();
      for (size_t i = 0; i < nd.grad.size(); ++i) ia.grad[i] += nd.grad[i];
    }
    if (ib.requires_grad) {
      ib.ensure_grad();
      for (size_t i = 0; i < nd.grad.size(); ++i) ib.grad[i] -= nd.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  size_t n = a.data().size();
  std::vector<double> out(n);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (size_t i = 0; i < n; ++i) out[i] = pa[i] * pb[i];
  detail::check_finite(out, "mul");
  if (!a.requires_grad() && !b.requires_grad()) return make_leaf(a.shape(), std::move(out));
  return make_tracked(a.shape(), std::move(out), {a, b}, [](Node& nd) {
    Node& ia = *nd.inputs[0];
    Node& ib = *nd.inputs[1];
    if (ia.requires_grad) {
      ia.ensure_grad();
      for (size_t i = 0; i < nd.grad.size(); ++i) ia.grad[i] += nd.grad[i] * ib.value[i];
    }
    if (ib.requires_grad) {
      ib.ensure_grad();
      for (size_t i = 0; i < nd.grad.size(); ++i) ib.grad[i] += nd.grad[i] * ia.value[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  if (!std::isfinite(c)) throw NumericError("scale: non-finite constant");
  size_t n = a.data().size();
  std::vector<double> out(n);
  const double* pa = a.data().data();
  for (size_t i = 0; i < n; ++i) out[i] = pa[i] * c;
  detail::check_finite(out, "scale");
  if (!a.requires_grad()) return make_leaf(a.shape(), std::move(out));
  return make_tracked(a.shape(), std::move(out), {a}, [c](Node& nd) {
    Node& in = *nd.inputs[0];
    in.ensure_grad();
    for (size_t i = 0; i < nd.grad.size(); ++i) in.grad[i] += nd.grad[i] * c;
  });
}

Tensor relu(const Tensor& a) {
  size_t n = a.data().size();
  std::vector<double> out(n);
  const double* pa = a.data().data();
  for (size_t i = 0; i < n; ++i) out[i] = pa[i] > 0.0 ? pa[i] : 0.0;
  if (!a.requires_grad()) return make_leaf(a.shape(), std::move(out));
  return make_tracked(a.shape(), std::move(out), {a}, [](Node& nd) {
    Node& in = *nd.inputs[0];
    in.ensure_grad();
    for (size_t i = 0; i < nd.grad.size(); ++i)
      if (in.value[i] > 0.0) in.grad[i] += nd.grad[i];
  });
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

// copies channel ci of x (shape [C,H,W]) into a zero-padded [H+2p, W+2p] buffer
static void pad_channel(const double* x, int H, int W, int p, double* xp) {
  const int Wp = W + 2 * p;
  std::fill(xp, xp + (H + 2 * p) * Wp, 0.0);
  for (int h = 0; h < H; ++h) std::memcpy(xp + (h + p) * Wp + p, x + h * W, W * sizeof(double));
}

// padded input for all channels: Cin * (H+2p) * (W+2p); blocks of 4 output
// channels share every input load so the inner loops stay FMA-bound
static void conv2d_forward_raw(const double* x, const double* w, double* out, int Cin, int H,
                               int W, int Cout, int k, int stride, int pad, double* xpad) {
  const int Ho = (H + 2 * pad - k) / stride + 1;
  const int Wo = (W + 2 * pad - k) / stride + 1;
  const int Wp = W + 2 * pad;
  for (int ci = 0; ci < Cin; ++ci)
    pad_channel(x + static_cast<size_t>(ci) * H * W, H, W, pad,
                xpad + static_cast<size_t>(ci) * (H + 2 * pad) * Wp);

  constexpr int kMaxRow = 512;
  double acc0[kMaxRow], acc1[kMaxRow], acc2[kMaxRow], acc3[kMaxRow];
  double* accs[4] = {acc0, acc1, acc2, acc3};
  std::vector<double> heap;
  if (Wo > kMaxRow) {
    heap.resize(static_cast<size_t>(Wo) * 4);
    for (int b = 0; b < 4; ++b) accs[b] = heap.data() + static_cast<size_t>(b) * Wo;
  }
  for (int co0 = 0; co0 < Cout; co0 += 4) {
    const int nb = std::min(4, Cout - co0);
    for (int oh = 0; oh < Ho; ++oh) {
      for (int b = 0; b < nb; ++b) std::fill(accs[b], accs[b] + Wo, 0.0);
      for (int ci = 0; ci < Cin; ++ci) {
        const double* xc = xpad + static_cast<size_t>(ci) * (H + 2 * pad) * Wp;
        for (int kh = 0; kh < k; ++kh) {
          const double* xrow = xc + (oh * stride + kh) * Wp;
          for (int kw = 0; kw < k; ++kw) {
            double wv[4];
            for (int b = 0; b < nb; ++b)
              wv[b] = w[((static_cast<size_t>(co0 + b) * Cin + ci) * k + kh) * k + kw];
            const double* xr = xrow + kw;
            if (stride == 1) {
              if (nb == 4) {
                double* __restrict__ a0 = accs[0];
                double* __restrict__ a1 = accs[1];
                double* __restrict__ a2 = accs[2];
                double* __restrict__ a3 = accs[3];
                for (int ow = 0; ow < Wo; ++ow) {
                  const double xv = xr[ow];
                  a0[ow] += wv[0] * xv;
                  a1[ow] += wv[1] * xv;
                  a2[ow] += wv[2] * xv;
                  a3[ow] += wv[3] * xv;
                }
              } else {
                for (int b = 0; b < nb; ++b)
                  for (int ow = 0; ow < Wo; ++ow) accs[b][ow] += wv[b] * xr[ow];
              }
            } else {
              for (int b = 0; b < nb; ++b)
                for (int ow = 0; ow < Wo; ++ow) accs[b][ow] += wv[b] * xr[ow * stride];
            }
          }
        }
      }
      for (int b = 0; b < nb; ++b)
        std::copy(accs[b], accs[b] + Wo,
                  out + (static_cast<size_t>(co0 + b) * Ho + oh) * Wo);
    }
  }
}

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad) {
  if (x.shape().size() != 3) throw ConfigError("conv2d: input must be [C,H,W]");
  if (w.shape().size() != 4) throw ConfigError("conv2d: weight must be [Cout,Cin,k,k]");
  const int Cin = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  const int Cout = w.shape()[0], k = w.shape()[2];
  if (w.shape()[1] != Cin)
    throw ConfigError("conv2d: channel mismatch, input has " + std::to_string(Cin) +
                      " channels, weight expects " + std::to_string(w.shape()[1]));
  if (w.shape()[3] != k || (k != 1 && k != 3)) throw ConfigError("conv2d: kernel must be 1x1 or 3x3");
  if (stride < 1 || pad < 0) throw ConfigError("conv2d: bad stride/pad");
  if ((H + 2 * pad - k) % stride != 0 || (W + 2 * pad - k) % stride != 0 ||
      H + 2 * pad - k < 0 || W + 2 * pad - k < 0)
    throw ConfigError("conv2d: non-integral output size");
  const int Ho = (H + 2 * pad - k) / stride + 1;
  const int Wo = (W + 2 * pad - k) / stride + 1;

  std::vector<double> out(static_cast<size_t>(Cout) * Ho * Wo);
  std::vector<double> scratch(static_cast<size_t>(Cin) * (H + 2 * pad) * (W + 2 * pad));
  conv2d_forward_raw(x.data().data(), w.data().data(), out.data(), Cin, H, W, Cout, k, stride,
                     pad, scratch.data());
  detail::check_finite(out, "conv2d");

  Shape oshape{Cout, Ho, Wo};
  if (!x.requires_grad() && !w.requires_grad()) return make_leaf(std::move(oshape), std::move(out));

  return make_tracked(std::move(oshape), std::move(out), {x, w},
                      [Cin, H, W, Cout, k, stride, pad, Ho, Wo](Node& nd) {
    Node& nx = *nd.inputs[0];
    Node& nw = *nd.inputs[1];
    const int Hp = H + 2 * pad, Wp = W + 2 * pad;
    const double* g = nd.grad.data();
    std::vector<double> scratch(static_cast<size_t>(Hp) * Wp);
    if (nx.requires_grad) {
      nx.ensure_grad();
      if (stride == 1) {
        // padded-row gather: 4 input channels per pass share every grad load
        std::vector<double> rows(static_cast<size_t>(Wp) * 4);
        double* accs[4];
        for (int b = 0; b < 4; ++b) accs[b] = rows.data() + static_cast<size_t>(b) * Wp;
        for (int ci0 = 0; ci0 < Cin; ci0 += 4) {
          const int nb = std::min(4, Cin - ci0);
          for (int hp = 0; hp < Hp; ++hp) {
            for (int b = 0; b < nb; ++b) std::fill(accs[b], accs[b] + Wp, 0.0);
            for (int co = 0; co < Cout; ++co) {
              const double* gc = g + static_cast<size_t>(co) * Ho * Wo;
              for (int kh = 0; kh < k; ++kh) {
                const int oh = hp - kh;
                if (oh < 0 || oh >= Ho) continue;
                const double* grow = gc + static_cast<size_t>(oh) * Wo;
                for (int kw = 0; kw < k; ++kw) {
                  double wv[4];
                  for (int b = 0; b < nb; ++b)
                    wv[b] = nw.value[((static_cast<size_t>(co) * Cin + ci0 + b) * k + kh) * k + kw];
                  if (nb == 4) {
                    double* __restrict__ a0 = accs[0] + kw;
                    double* __restrict__ a1 = accs[1] + kw;
                    double* __restrict__ a2 = accs[2] + kw;
                    double* __restrict__ a3 = accs[3] + kw;
                    for (int ow = 0; ow < Wo; ++ow) {
                      const double gv = grow[ow];
                      a0[ow] += wv[0] * gv;
                      a1[ow] += wv[1] * gv;
                      a2[ow] += wv[2] * gv;
                      a3[ow] += wv[3] * gv;
                    }
                  } else {
                    for (int b = 0; b < nb; ++b) {
                      double* a = accs[b] + kw;
                      for (int ow = 0; ow < Wo; ++ow) a[ow] += wv[b] * grow[ow];
                    }
                  }
                }
              }
            }
            const int h = hp - pad;
            if (h < 0 || h >= H) continue;
            for (int b = 0; b < nb; ++b) {
              double* dxr = nx.grad.data() + (static_cast<size_t>(ci0 + b) * H + h) * W;
              const double* a = accs[b] + pad;
              for (int w2 = 0; w2 < W; ++w2) dxr[w2] += a[w2];
            }
          }
        }
      } else {
        for (int ci = 0; ci < Cin; ++ci) {
          std::fill(scratch.begin(), scratch.end(), 0.0);
          for (int co = 0; co < Cout; ++co) {
            const double* wc = nw.value.data() + (static_cast<size_t>(co) * Cin + ci) * k * k;
            const double* gc = g + static_cast<size_t>(co) * Ho * Wo;
            for (int kh = 0; kh < k; ++kh)
              for (int kw = 0; kw < k; ++kw) {
                const double wv = wc[kh * k + kw];
                for (int oh = 0; oh < Ho; ++oh) {
                  double* drow = scratch.data() + (oh * stride + kh) * Wp + kw;
                  const double* grow = gc + oh * Wo;
                  for (int ow = 0; ow < Wo; ++ow) drow[ow * stride] += wv * grow[ow];
                }
              }
          }
          double* dxc = nx.grad.data() + static_cast<size_t>(ci) * H * W;
          for (int h = 0; h < H; ++h)
            for (int w2 = 0; w2 < W; ++w2) dxc[h * W + w2] += scratch[(h + pad) * Wp + (w2 + pad)];
        }
      }
    }
    if (nw.requires_grad) {
      nw.ensure_grad();
      for (int ci = 0; ci < Cin; ++ci) {
        pad_channel(nx.value.data() + static_cast<size_t>(ci) * H * W, H, W, pad, scratch.data());
        for (int co = 0; co < Cout; ++co) {
          double* dwc = nw.grad.data() + (static_cast<size_t>(co) * Cin + ci) * k * k;
          const double* gc = g + static_cast<size_t>(co) * Ho * Wo;
          if (stride == 1 && k == 3) {
            // all nine taps in one pass over the image; grad loads shared
            double acc[9] = {0};
            for (int oh = 0; oh < Ho; ++oh) {
              const double* grow = gc + static_cast<size_t>(oh) * Wo;
              const double* r0 = scratch.data() + static_cast<size_t>(oh) * Wp;
              const double* r1 = r0 + Wp;
              const double* r2 = r1 + Wp;
              for (int ow = 0; ow < Wo; ++ow) {
                const double gv = grow[ow];
                acc[0] += gv * r0[ow];
                acc[1] += gv * r0[ow + 1];
                acc[2] += gv * r0[ow + 2];
                acc[3] += gv * r1[ow];
                acc[4] += gv * r1[ow + 1];
                acc[5] += gv * r1[ow + 2];
                acc[6] += gv * r2[ow];
                acc[7] += gv * r2[ow + 1];
                acc[8] += gv * r2[ow + 2];
              }
            }
            for (int t = 0; t < 9; ++t) dwc[t] += acc[t];
          } else {
            for (int kh = 0; kh < k; ++kh)
              for (int kw = 0; kw < k; ++kw) {
                double acc = 0.0;
                for (int oh = 0; oh < Ho; ++oh) {
                  const double* xrow = scratch.data() + (oh * stride + kh) * Wp + kw;
                  const double* grow = gc + oh * Wo;
                  for (int ow = 0; ow < Wo; ++ow) acc += grow[ow] * xrow[ow * stride];
                }
                dwc[kh * k + kw] += acc;
              }
          }
        }
      }
    }
  });
}

Tensor bias_add(const Tensor& x, const Tensor& b) {
  if (x.shape().size() != 3 || b.shape().size() != 1 || b.shape()[0] != x.shape()[0])
    throw ConfigError("bias_add: expected [C,H,W] and [C]");
  const int C = x.shape()[0];
  const int S = x.shape()[1] * x.shape()[2];
  std::vector<double> out(x.data().size());
  for (int c = 0; c < C; ++c) {
    const double bv = b.data()[c];
    const double* px = x.data().data() + static_cast<size_t>(c) * S;
    double* po = out.data() + static_cast<size_t>(c) * S;
    for (int i = 0; i < S; ++i) po[i] = px[i] + bv;
  }
  detail::check_finite(out, "bias_add");
  if (!x.requires_grad() && !b.requires_grad()) return make_leaf(x.shape(), std::move(out));
  return make_tracked(x.shape(), std::move(out), {x, b}, [C, S](Node& nd) {
    Node& nx = *nd.inputs[0];
    Node& nb = *nd.inputs[1];
    if (nx.requires_grad) {
      nx.ensure_grad();
      for (size_t i = 0; i < nd.grad.size(); ++i) nx.grad[i] += nd.grad[i];
    }
    if (nb.requires_grad) {
      nb.ensure_grad();
      for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        const double* g = nd.grad.data() + static_cast<size_t>(c) * S;
        for (int i = 0; i < S; ++i) acc += g[i];
        nb.grad[c] += acc;
      }
    }
  });
}

Tensor pool2x(const Tensor& x) {
  if (x.shape().size() != 3) throw ConfigError("pool2x: input must be [C,H,W]");
  const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  if (H % 2 != 0 || W % 2 != 0) throw ConfigError("pool2x: spatial dims must be even");
  const int Ho = H / 2, Wo = W / 2;
  std::vector<double> out(static_cast<size_t>(C) * Ho * Wo);
  for (int c = 0; c < C; ++c) {
    const double* px = x.data().data() + static_cast<size_t>(c) * H * W;
    double* po = out.data() + static_cast<size_t>(c) * Ho * Wo;
    for (int oh = 0; oh < Ho; ++oh)
      for (int ow = 0; ow < Wo; ++ow)
        po[oh * Wo + ow] = 0.25 * (px[2 * oh * W + 2 * ow] + px[2 * oh * W + 2 * ow + 1] +
                                   px[(2 * oh + 1) * W + 2 * ow] + px[(2 * oh + 1) * W + 2 * ow + 1]);
  }
  if (!x.requires_grad()) return make_leaf({C, Ho, Wo}, std::move(out));
  return make_tracked({C, Ho, Wo}, std::move(out), {x}, [C, H, W, Ho, Wo](Node& nd) {
    Node& nx = *nd.inputs[0];
    nx.ensure_grad();
    for (int c = 0; c < C; ++c) {
      const double* g = nd.grad.data() + static_cast<size_t>(c) * Ho * Wo;
      double* dx = nx.grad.data() + static_cast<size_t>(c) * H * W;
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow) {
          const double gv = 0.25 * g[oh * Wo + ow];
          dx[2 * oh * W + 2 * ow] += gv;
          dx[2 * oh * W + 2 * ow + 1] += gv;
          dx[(2 * oh + 1) * W + 2 * ow] += gv;
          dx[(2 * oh + 1) * W + 2 * ow + 1] += gv;
        }
    }
  });
}

Tensor upsample2x(const Tensor& x) {
  if (x.shape().size() != 3) throw ConfigError("upsample2x: input must be [C,H,W]");
  const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  const int Ho = H * 2, Wo = W * 2;
  std::vector<double> out(static_cast<size_t>(C) * Ho * Wo);
  for (int c = 0; c < C; ++c) {
    const double* px = x.data().data() + static_cast<size_t>(c) * H * W;
    double* po = out.data() + static_cast<size_t>(c) * Ho * Wo;
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        const double v = px[h * W + w];
        po[2 * h * Wo + 2 * w] = v;
        po[2 * h * Wo + 2 * w + 1] = v;
        po[(2 * h + 1) * Wo + 2 * w] = v;
        po[(2 * h + 1) * Wo + 2 * w + 1] = v;
      }
  }
  if (!x.requires_grad()) return make_leaf({C, Ho, Wo}, std::move(out));
  return make_tracked({C, Ho, Wo}, std::move(out), {x}, [C, H, W, Ho, Wo](Node& nd) {
    Node& nx = *nd.inputs[0];
    nx.ensure_grad();
    for (int c = 0; c < C; ++c) {
      const double* g = nd.grad.data() + static_cast<size_t>(c) * Ho * Wo;
      double* dx = nx.grad.data() + static_cast<size_t>(c) * H * W;
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
          dx[h * W + w] += g[2 * h * Wo + 2 * w] + g[2 * h * Wo + 2 * w + 1] +
                           g[(2 * h + 1) * Wo + 2 * w] + g[(2 * h + 1) * Wo + 2 * w + 1];
    }
  });
}

Tensor dropout(const Tensor& x, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: ratio must be in [0, 1)");
  if (p == 0.0) return x;
  const size_t n = x.data().size();
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(n);
  for (size_t i = 0; i < n; ++i) mask[i] = rng.next_uniform() >= p ? keep_scale : 0.0;
  std::vector<double> out(n);
  const double* px = x.data().data();
  for (size_t i = 0; i < n; ++i) out[i] = px[i] * mask[i];
  if (!x.requires_grad()) return make_leaf(x.shape(), std::move(out));
  return make_tracked(x.shape(), std::move(out), {x}, [mask = std::move(mask)](Node& nd) {
    Node& nx = *nd.inputs[0];
    nx.ensure_grad();
    for (size_t i = 0; i < nd.grad.size(); ++i) nx.grad[i] += nd.grad[i] * mask[i];
  });
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

static void reject_non_finite(const Tensor& t, const char* op) {
  for (double v : t.data())
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input");
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  check_same_shape(pred, target, "mse_loss");
  reject_non_finite(pred, "mse_loss");
  reject_non_finite(target, "mse_loss");
  const size_t n = pred.data().size();
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double d = pred.data()[i] - target.data()[i];
    acc += d * d;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> out{acc * inv_n};
  if (!pred.requires_grad() && !target.requires_grad())
    return make_leaf({1}, std::move(out));
  return make_tracked({1}, std::move(out), {pred, target}, [inv_n](Node& nd) {
    Node& np = *nd.inputs[0];
    Node& nt = *nd.inputs[1];
    const double g = nd.grad[0];
    for (size_t i = 0; i < np.value.size(); ++i) {
      const double d = 2.0 * inv_n * (np.value[i] - nt.value[i]) * g;
      if (np.requires_grad) {
        np.ensure_grad();
        np.grad[i] += d;
      }
      if (nt.requires_grad) {
        nt.ensure_grad();
        nt.grad[i] -= d;
      }
    }
  });
}

Tensor cross_entropy_loss(const Tensor& logits, const std::vector<int>& target) {
  if (logits.shape().empty()) throw ConfigError("cross_entropy_loss: logits must be [C, ...]");
  reject_non_finite(logits, "cross_entropy_loss");
  const int C = logits.shape()[0];
  const size_t npos = logits.data().size() / C;
  if (target.size() != npos)
    throw ConfigError("cross_entropy_loss: target size " + std::to_string(target.size()) +
                      " does not match " + std::to_string(npos) + " positions");
  // layout is [C, spatial...]: class c at position s lives at c*npos + s
  std::vector<double> probs(logits.data().size());
  const double* pl = logits.data().data();
  double loss = 0.0;
  for (size_t s = 0; s < npos; ++s) {
    const int t = target[s];
    if (t < 0 || t >= C) throw ConfigError("cross_entropy_loss: class index out of range");
    double mx = pl[s];
    for (int c = 1; c < C; ++c) mx = std::max(mx, pl[c * npos + s]);
    double z = 0.0;
    for (int c = 0; c < C; ++c) z += std::exp(pl[c * npos + s] - mx);
    const double logz = std::log(z) + mx;
    for (int c = 0; c < C; ++c) probs[c * npos + s] = std::exp(pl[c * npos + s] - logz);
    loss -= pl[t * npos + s] - logz;
  }
  const double inv_n = 1.0 / static_cast<double>(npos);
  std::vector<double> out{loss * inv_n};
  if (!logits.requires_grad()) return make_leaf({1}, std::move(out));
  return make_tracked({1}, std::move(out), {logits},
                      [probs = std::move(probs), target, C, npos, inv_n](Node& nd) {
    Node& nl = *nd.inputs[0];
    nl.ensure_grad();
    const double g = nd.grad[0] * inv_n;
    for (size_t s = 0; s < npos; ++s)
      for (int c = 0; c < C; ++c)
        nl.grad[c * npos + s] += g * (probs[c * npos + s] - (c == target[s] ? 1.0 : 0.0));
  });
}

Tensor kl_loss(const Tensor& pred, const Tensor& target) {
  check_same_shape(pred, target, "kl_loss");
  reject_non_finite(pred, "kl_loss");
  reject_non_finite(target, "kl_loss");
  if (pred.shape().empty()) throw ConfigError("kl_loss: input must be [C, ...]");
  const int C = pred.shape()[0];
  const size_t npos = pred.data().size() / C;
  constexpr double kEps = 1e-12;
  double loss = 0.0;
  for (size_t i = 0; i < pred.data().size(); ++i) {
    const double t = target.data()[i];
    if (t > 0.0) loss += t * (std::log(std::max(t, kEps)) - std::log(std::max(pred.data()[i], kEps)));
  }
  const double inv_n = 1.0 / static_cast<double>(npos);
  std::vector<double> out{loss * inv_n};
  if (!pred.requires_grad() && !target.requires_grad()) return make_leaf({1}, std::move(out));
  return make_tracked({1}, std::move(out), {pred, target}, [inv_n](Node& nd) {
    Node& np = *nd.inputs[0];
    Node& nt = *nd.inputs[1];
    constexpr double kEps = 1e-12;
    const double g = nd.grad[0] * inv_n;
    if (np.requires_grad) {
      np.ensure_grad();
      for (size_t i = 0; i < np.value.size(); ++i) {
        const double t = nt.value[i];
        if (t > 0.0) np.grad[i] -= g * t / std::max(np.value[i], kEps);
      }
    }
    if (nt.requires_grad) {
      nt.ensure_grad();
      for (size_t i = 0; i < nt.value.size(); ++i) {
        const double t = nt.value[i];
        if (t > 0.0)
          nt.grad[i] += g * (std::log(std::max(t, kEps)) - std::log(std::max(np.value[i], kEps)) + 1.0);
      }
    }
  });
}

Tensor kl_softmax_loss(const Tensor& teacher_logits, const Tensor& student_logits,
                       double temperature) {
  check_same_shape(teacher_logits, student_logits, "kl_softmax_loss");
  reject_non_finite(teacher_logits, "kl_softmax_loss");
  reject_non_finite(student_logits, "kl_softmax_loss");
  if (temperature <= 0.0) throw ConfigError("kl_softmax_loss: temperature must be positive");
  const int C = teacher_logits.shape()[0];
  const size_t npos = teacher_logits.data().size() / C;

  auto softmax_cols = [&](const double* l, std::vector<double>& p) {
    for (size_t s = 0; s < npos; ++s) {
      double mx = l[s] / temperature;
      for (int c = 1; c < C; ++c) mx = std::max(mx, l[c * npos + s] / temperature);
      double z = 0.0;
      for (int c = 0; c < C; ++c) z += std::exp(l[c * npos + s] / temperature - mx);
      for (int c = 0; c < C; ++c) p[c * npos + s] = std::exp(l[c * npos + s] / temperature - mx) / z;
    }
  };
  std::vector<double> p(teacher_logits.data().size()), q(student_logits.data().size());
  softmax_cols(teacher_logits.data().data(), p);
  softmax_cols(student_logits.data().data(), q);

  constexpr double kEps = 1e-12;
  double loss = 0.0;
  std::vector<double> kl_pos(npos, 0.0);
  for (size_t s = 0; s < npos; ++s) {
    double acc = 0.0;
    for (int c = 0; c < C; ++c) {
      const double pc = p[c * npos + s];
      if (pc > 0.0)
        acc += pc * (std::log(std::max(pc, kEps)) - std::log(std::max(q[c * npos + s], kEps)));
    }
    kl_pos[s] = acc;
    loss += acc;
  }
  const double inv_n = 1.0 / static_cast<double>(npos);
  std::vector<double> out{loss * inv_n};
  if (!teacher_logits.requires_grad() && !student_logits.requires_grad())
    return make_leaf({1}, std::move(out));
  return make_tracked(
      {1}, std::move(out), {teacher_logits, student_logits},
      [p = std::move(p), q = std::move(q), kl_pos = std::move(kl_pos), C, npos, inv_n,
       temperature](Node& nd) {
        Node& ntl = *nd.inputs[0];
        Node& nsl = *nd.inputs[1];
        constexpr double kEps = 1e-12;
        const double g = nd.grad[0] * inv_n / temperature;
        if (nsl.requires_grad) {
          nsl.ensure_grad();
          for (size_t i = 0; i < nsl.value.size(); ++i) nsl.grad[i] += g * (q[i] - p[i]);
        }
        if (ntl.requires_grad) {
          ntl.ensure_grad();
          for (size_t s = 0; s < npos; ++s)
            for (int c = 0; c < C; ++c) {
              const double pc = p[c * npos + s];
              const double lr = std::log(std::max(pc, kEps)) - std::log(std::max(q[c * npos + s], kEps));
              ntl.grad[c * npos + s] += g * pc * (lr - kl_pos[s]);
            }
        }
      });
}

// ---------------------------------------------------------------------------
// backward / gradcheck
// ---------------------------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) throw ConfigError("backward: loss must be a scalar");
  if (!loss.requires_grad()) return;

  // iterative post-order DFS: topological order with inputs before consumers
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [nd, idx] = stack.back();
    if (idx < nd->inputs.size()) {
      Node* in = nd->inputs[idx++].get();
      if (in->requires_grad && !visited.count(in)) {
        visited.insert(in);
        stack.emplace_back(in, 0);
      }
    } else {
      order.push_back(nd);
      stack.pop_back();
    }
  }

  // interior adjoints are scratch per pass; only leaf grads accumulate
  for (Node* nd : order)
    if (nd->backward_fn && !nd->grad.empty()) std::fill(nd->grad.begin(), nd->grad.end(), 0.0);

  Node* root = loss.node().get();
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* nd = *it;
    if (nd->backward_fn && !nd->grad.empty()) nd->backward_fn(*nd);
  }
}

double gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  Tensor xt = x.detach(true);
  Tensor loss = f(xt);
  if (loss.numel() != 1) throw ConfigError("gradcheck: f must be scalar-valued");
  backward(loss);
  std::vector<double> g_ad(xt.numel(), 0.0);
  if (xt.has_grad()) std::copy(xt.grad().begin(), xt.grad().end(), g_ad.begin());

  double max_err = 0.0;
  std::vector<double> base(x.data().begin(), x.data().end());
  for (int64_t i = 0; i < x.numel(); ++i) {
    std::vector<double> vp = base, vm = base;
    vp[i] += eps;
    vm[i] -= eps;
    const double fp = f(Tensor(x.shape(), std::move(vp))).item();
    const double fm = f(Tensor(x.shape(), std::move(vm))).item();
    const double g_fd = (fp - fm) / (2.0 * eps);
    const double denom = std::max({std::abs(g_ad[i]), std::abs(g_fd), 1e-8});
    max_err = std::max(max_err, std::abs(g_ad[i] - g_fd) / denom);
  }
  return max_err;
}

}  // namespace uet
