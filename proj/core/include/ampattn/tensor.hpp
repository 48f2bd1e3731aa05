#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ampattn/rng.hpp"

namespace ampattn {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;     // empty until first accumulation
  bool requires_grad = false;   // set on leaves the caller wants gradients for
  bool needs_grad = false;      // true for such leaves and anything computed from them
};
}  // namespace detail

/// Dense row-major tensor of doubles. Handles share storage: copying a Tensor
/// copies a reference, not the data. All training math is double precision.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  /// Uniform in [-bound, bound].
  static Tensor uniform(Shape shape, double bound, Rng& rng, bool requires_grad = true);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int extent(int axis) const { return impl_->shape[axis]; }
  int64_t size() const { return static_cast<int64_t>(impl_->data.size()); }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> data() { return impl_->data; }
  double operator()(int i) const { return impl_->data[i]; }
  double& operator()(int i) { return impl_->data[i]; }
  double at2(int i, int j) const;       // rank-2 accessor
  double& at2(int i, int j);
  /// Value of a single-element tensor.
  double value() const;

  bool requires_grad() const { return impl_->requires_grad; }
  bool needs_grad() const { return impl_->needs_grad; }
  void set_requires_grad(bool rg);

  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient buffer, allocated (zero-filled) on first access.
  std::span<double> grad();
  std::span<const double> grad() const { return impl_->grad; }
  void zero_grad();

  /// Deep copy (fresh storage, no grad).
  Tensor clone() const;
  /// Overwrite this tensor's data from another of identical shape.
  void copy_from(const Tensor& other);

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  detail::TensorImpl* impl() const { return impl_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Define-by-run autodiff tape. Each forward op appends one node; backward()
/// walks nodes in exact reverse construction order (which is a topological
/// order by construction).
///
/// Gradient contract: backward() re-seeds every node output's gradient from
/// scratch but *accumulates* into leaf gradients. Calling backward() twice on
/// the same graph without zeroing leaf grads therefore doubles them; callers
/// zero leaf grads between steps.
///
/// Broadcast rule for binary elementwise ops (add/sub/mul/div): shapes are
/// aligned from the trailing axis; each axis pair must be equal or have one
/// side equal to 1. Gradients sum over broadcast axes, so the rule is
/// symmetric under differentiation.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // --- matrix ops (rank 2) ---
  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor transpose(const Tensor& a);
  Tensor concat_cols(const std::vector<Tensor>& parts);
  Tensor concat_rows(const std::vector<Tensor>& parts);
  /// Rows [r0, r1) as a (r1-r0) x n tensor; gradient scatters back.
  Tensor rows(const Tensor& a, int r0, int r1);
  Tensor row(const Tensor& a, int r) { return rows(a, r, r + 1); }
  /// Same elements, new shape (element count must match); gradient passes
  /// through flat.
  Tensor reshape(const Tensor& a, Shape shape);

  // --- elementwise, broadcasting ---
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor div(const Tensor& a, const Tensor& b);

  // --- elementwise, unary ---
  Tensor scale(const Tensor& a, double c);
  Tensor add_scalar(const Tensor& a, double c);
  Tensor neg(const Tensor& a);
  Tensor square(const Tensor& a);
  Tensor tanh(const Tensor& a);
  Tensor sigmoid(const Tensor& a);
  Tensor relu(const Tensor& a);
  Tensor exp(const Tensor& a);
  Tensor log(const Tensor& a);
  /// max(a, lo); gradient is 1 where a > lo, 0 where clamped.
  Tensor clamp_min(const Tensor& a, double lo);

  // --- softmax / loss ---
  /// Softmax over the last axis, max-subtracted for stability.
  Tensor softmax_rows(const Tensor& a);
  /// -log softmax(logits)[label] via log-sum-exp; logits is 1 x n.
  Tensor cross_entropy(const Tensor& logits, int label);

  // --- reductions ---
  Tensor sum(const Tensor& a);
  Tensor mean(const Tensor& a);
  /// Max over all elements. Ties route the gradient to the first maximal
  /// element in row-major scan order.
  Tensor max(const Tensor& a);
  Tensor sum_axis(const Tensor& a, int axis);   // rank-2; axis 0 -> 1 x n, axis 1 -> m x 1
  Tensor mean_axis(const Tensor& a, int axis);
  Tensor max_axis(const Tensor& a, int axis);   // first-maximal tie rule per slice

  /// Extension point for fused ops (conv, batch-norm, pooling). `backward`
  /// reads output.grad() and accumulates into the inputs' grads.
  Tensor make_op(const char* kind, std::vector<Tensor> inputs, Tensor output,
                 std::function<void()> backward);

  /// Reverse pass from a single-element loss. Non-scalar loss is an error.
  void backward(const Tensor& loss);

  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    const char* kind;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward_fn;
  };

  Tensor unary(const char* kind, const Tensor& a,
               const std::function<double(double)>& f,
               const std::function<double(double, double)>& df);  // df(x, y)
  Tensor binary(const char* kind, const Tensor& a, const Tensor& b,
                const std::function<double(double, double)>& f,
                const std::function<double(double, double, double)>& dfa,
                const std::function<double(double, double, double)>& dfb);  // d(a,b,y)

  std::vector<Node> nodes_;
};

}  // namespace ampattn
