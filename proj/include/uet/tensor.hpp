#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "uet/rng.hpp"

namespace uet {

// Config / usage errors -> CLI exit code 1.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
// Numerical failures (divergence, non-finite values) -> CLI exit code 2.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// One record of the implicit compute graph. Nodes are immutable after the
// forward op that created them; backward_fn reads this->grad and accumulates
// into the inputs' grads.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated on first use, same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->inputs.empty(); }

  std::span<const double> data() const { return node_->value; }
  std::span<double> mutable_data() { return node_->value; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

  double item() const;

  // value copy with no graph attached
  Tensor detach(bool requires_grad = false) const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// --- elementwise ---
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor relu(const Tensor& a);

// --- structured ---
// x: [Cin,H,W], w: [Cout,Cin,k,k], k in {1,3}
Tensor conv2d(const Tensor& x, const Tensor& w, int stride = 1, int pad = 0);
// b: [C] broadcast over spatial dims of x: [C,H,W]
Tensor bias_add(const Tensor& x, const Tensor& b);
Tensor pool2x(const Tensor& x);      // 2x2 mean pooling
Tensor upsample2x(const Tensor& x);  // nearest neighbor

// inverted dropout: kept elements scaled by 1/(1-p); p == 0 is the identity
Tensor dropout(const Tensor& x, double p, Rng& rng);

// --- losses (scalar outputs) ---
Tensor mse_loss(const Tensor& pred, const Tensor& target);
// logits: [C, ...], target: flat class-index map of length numel/ C
Tensor cross_entropy_loss(const Tensor& logits, const std::vector<int>& target);
// pred/target: probability maps [C, ...]; KL(target || pred) averaged over positions
Tensor kl_loss(const Tensor& pred, const Tensor& target);
// KL(softmax(t/T) || softmax(s/T)) averaged over positions
Tensor kl_softmax_loss(const Tensor& teacher_logits, const Tensor& student_logits,
                       double temperature);

// --- autodiff ---
void backward(const Tensor& loss);

// max over coordinates of |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8)
double gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                 double eps = 1e-5);

namespace detail {
bool any_tracked(const std::vector<Tensor>& inputs);
Tensor make_leaf(Shape shape, std::vector<double> value, bool requires_grad = false);
Tensor make_tracked(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                    std::function<void(Node&)> backward_fn);
void check_finite(const std::vector<double>& v, const char* op);
}  // namespace detail

}  // namespace uet
