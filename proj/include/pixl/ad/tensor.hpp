#pragma once

// Dense real tensors with a define-by-run tape for reverse-mode
// differentiation. Each op result keeps shared pointers to its inputs and a
// closure that pushes its gradient back to them; backward() walks the graph in
// reverse topological order.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <vector>

#include "pixl/error.hpp"

namespace pixl::ad {

// Element type of the engine. Single precision unless built with
// PIXL_AD_DOUBLE, which the gradient-check tool uses to take rounding noise
// out of whole-model finite differences.
#ifdef PIXL_AD_DOUBLE
using real = double;
#else
using real = float;
#endif

using Shape = std::vector<int>;

inline size_t numel(const Shape& s) {
  size_t n = 1;
  for (int d : s) n *= size_t(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) out += (i ? ", " : "") + std::to_string(s[i]);
  return out + "]";
}

struct TensorImpl {
  Shape shape;
  std::vector<real> value;
  std::vector<real> grad;  // empty until something flows into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(TensorImpl&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  std::vector<real>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.f);
    return grad;
  }
};

// Gradient recording is on by default; NoGrad turns it off for a scope.
inline bool& grad_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

class NoGrad {
 public:
  NoGrad() : prev_(grad_enabled()) { grad_enabled() = false; }
  ~NoGrad() { grad_enabled() = prev_; }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;

 private:
  bool prev_;
};

// Finite-value assertion after every forward op. On in debug builds.
inline bool& check_finite() {
#ifdef NDEBUG
  static bool on = false;
#else
  static bool on = true;
#endif
  return on;
}

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return from(shape, std::vector<real>(ad::numel(shape), 0.f), requires_grad);
  }
  static Tensor full(Shape shape, real v, bool requires_grad = false) {
    return from(shape, std::vector<real>(ad::numel(shape), v), requires_grad);
  }
  static Tensor from(Shape shape, std::vector<real> values, bool requires_grad = false) {
    for (int d : shape) require(d > 0, "tensor dimensions must be positive: " + shape_str(shape));
    require(values.size() == ad::numel(shape), "tensor payload of " + std::to_string(values.size()) +
                                               " values does not fill " + shape_str(shape));
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->value = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
  }
  template <typename T>
    requires(!std::is_same_v<T, real>)
  static Tensor from(Shape shape, const std::vector<T>& values, bool requires_grad = false) {
    return from(std::move(shape), std::vector<real>(values.begin(), values.end()), requires_grad);
  }
  static Tensor scalar(real v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

  bool defined() const { return bool(impl_); }
  const Shape& shape() const { return impl_->shape; }
  int ndim() const { return int(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[size_t(i < 0 ? i + ndim() : i)]; }
  size_t numel() const { return impl_->value.size(); }

  std::span<real> data() { return impl_->value; }
  std::span<const real> data() const { return impl_->value; }
  const std::vector<real>& values() const { return impl_->value; }
  std::vector<float> values_f32() const { return {impl_->value.begin(), impl_->value.end()}; }
  std::span<real> grad() { return impl_->ensure_grad(); }
  bool has_grad() const { return !impl_->grad.empty(); }
  real item() const {
    require(numel() == 1, "item() on tensor of shape " + shape_str(shape()));
    return impl_->value[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool r) { impl_->requires_grad = r; }
  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.f);
  }
  // Same values, no history.
  Tensor detach() const { return from(shape(), impl_->value, false); }

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

namespace detail {

// Builds an op result. The graph edge is only recorded when gradients are
// enabled and some input needs them.
inline Tensor make_result(const char* op, Shape shape, std::vector<real> value,
                          const std::vector<Tensor>& inputs,
                          std::function<void(TensorImpl&)> backward) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->value = std::move(value);
  impl->op = op;
  if (check_finite())
    for (real v : impl->value)
      if (!std::isfinite(v)) throw InvariantError(std::string("non-finite value produced by ") + op);
  bool needs = false;
  if (grad_enabled())
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  if (needs) {
    impl->requires_grad = true;
    for (const auto& t : inputs) impl->inputs.push_back(t.ptr());
    impl->backward_fn = std::move(backward);
  }
  return Tensor(std::move(impl));
}

// Gradient buffer of an input if it participates, else nullptr.
inline real* grad_of(TensorImpl& node, size_t i) {
  auto& in = *node.inputs[i];
  return in.requires_grad ? in.ensure_grad().data() : nullptr;
}

}  // namespace detail

/// Accumulates d(loss)/d(x) into every reachable tensor that requires
/// gradients. Leaf gradients accumulate across calls; intermediate ones are
/// reset each call.
inline void backward(const Tensor& loss) {
  require(loss.numel() == 1, "backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<TensorImpl*, size_t>> stack{{loss.impl(), 0}};
  seen.insert(loss.impl());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      TensorImpl* child = node->inputs[next++].get();
      if (child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.push_back({child, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (auto* n : order)
    if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.f);
  loss.impl()->ensure_grad()[0] += 1.f;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if (!(*it)->is_leaf()) (*it)->backward_fn(**it);
}

}  // namespace pixl::ad
