#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dida/error.hpp"

namespace dida {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Thread-local flag; ops built while disabled record no graph.
bool grad_enabled();
void set_grad_enabled(bool on);

class NoGradGuard {
 public:
  NoGradGuard() : prev_(grad_enabled()) { set_grad_enabled(false); }
  ~NoGradGuard() { set_grad_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  bool requires_grad = false;
  // Lazily sized to value.size() on first write.
  std::vector<T> grad;
  std::vector<std::shared_ptr<Node<T>>> parents;
  // Reads this->grad and accumulates into parents' grads.
  std::function<void(Node<T>&)> backprop;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

}  // namespace detail

// Reverse-mode autodiff tensor. Value semantics are shared-handle: copying a
// Tensor aliases the same node. All ops materialize their outputs (no views).
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node<T>> node)
      : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from_vec(Shape shape, std::vector<T> values,
                         bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  // Negative indices count from the back.
  int64_t dim(int i) const;
  int ndim() const;
  int64_t numel() const;

  std::span<const T> data() const;
  // Mutable access to the raw buffer. Intended for leaves (parameters,
  // buffers, input staging); mutating an interior node invalidates its graph.
  std::span<T> raw_data();
  T item() const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const T> grad() const;
  std::span<T> grad_mut();
  void zero_grad();

  // Runs reverse-mode over the graph rooted here. Scalar outputs only.
  // accumulate=false zeroes the grads of every reachable node first.
  void backward(bool accumulate = false);

  // Value copy with no graph and no grad requirement.
  Tensor detach() const;

  std::shared_ptr<detail::Node<T>> node() const { return node_; }

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

namespace detail {

// Shared op-construction path: wires parents/backprop only when grad mode is
// on and some parent requires grad.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value,
                      std::vector<Tensor<T>> parents,
                      std::function<void(Node<T>&)> backprop);

}  // namespace detail

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace dida
