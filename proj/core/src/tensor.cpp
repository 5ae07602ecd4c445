#include "dida/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace dida {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << ")";
  return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  int64_t n = shape_numel(shape);
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->value.assign(static_cast<size_t>(n), T(0));
  node->requires_grad = requires_grad;
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  Tensor<T> t = zeros(std::move(shape), requires_grad);
  auto buf = t.node()->value.data();
  std::fill(buf, buf + t.numel(), value);
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::from_vec(Shape shape, std::vector<T> values,
                              bool requires_grad) {
  int64_t n = shape_numel(shape);
  if (n != static_cast<int64_t>(values.size()))
    throw ShapeError("from_vec: shape " + shape_str(shape) + " wants " +
                     std::to_string(n) + " values, got " +
                     std::to_string(values.size()));
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from_vec({}, {value}, requires_grad);
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  if (!node_) throw ValueError("shape() on undefined tensor");
  return node_->shape;
}

template <typename T>
int64_t Tensor<T>::dim(int i) const {
  const Shape& s = shape();
  int n = static_cast<int>(s.size());
  if (i < 0) i += n;
  if (i < 0 || i >= n)
    throw ShapeError("dim index " + std::to_string(i) + " out of range for " +
                     shape_str(s));
  return s[static_cast<size_t>(i)];
}

template <typename T>
int Tensor<T>::ndim() const {
  return static_cast<int>(shape().size());
}

template <typename T>
int64_t Tensor<T>::numel() const {
  if (!node_) throw ValueError("numel() on undefined tensor");
  return static_cast<int64_t>(node_->value.size());
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  if (!node_) throw ValueError("data() on undefined tensor");
  return {node_->value.data(), node_->value.size()};
}

template <typename T>
std::span<T> Tensor<T>::raw_data() {
  if (!node_) throw ValueError("raw_data() on undefined tensor");
  return {node_->value.data(), node_->value.size()};
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1)
    throw ShapeError("item() wants a single element, shape is " +
                     shape_str(shape()));
  return node_->value[0];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return node_ && node_->grad.size() == node_->value.size() &&
         !node_->value.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!has_grad())
    throw ValueError("grad() requested but no grad has been computed");
  return {node_->grad.data(), node_->grad.size()};
}

template <typename T>
std::span<T> Tensor<T>::grad_mut() {
  if (!node_) throw ValueError("grad_mut() on undefined tensor");
  node_->ensure_grad();
  return {node_->grad.data(), node_->grad.size()};
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!node_) return;
  if (!node_->grad.empty())
    std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  if (!node_) return Tensor<T>();
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = node_->shape;
  node->value = node_->value;
  node->requires_grad = false;
  return Tensor<T>(std::move(node));
}

namespace {

// Iterative post-order DFS; returns nodes with parents-before-children
// reversed, i.e. index 0 is the root, so a forward sweep is reverse-topo.
template <typename T>
std::vector<detail::Node<T>*> topo_from(detail::Node<T>* root) {
  std::vector<detail::Node<T>*> order;
  std::unordered_set<detail::Node<T>*> visited;
  struct Frame {
    detail::Node<T>* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({root, 0});
  visited.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      detail::Node<T>* p = f.node->parents[f.next_parent++].get();
      if (p && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  std::reverse(order.begin(), order.end());
  return order;
}

}  // namespace

template <typename T>
void Tensor<T>::backward(bool accumulate) {
  if (!node_) throw ValueError("backward() on undefined tensor");
  if (numel() != 1)
    throw ShapeError("backward() needs a scalar root, shape is " +
                     shape_str(shape()));
  if (!node_->requires_grad)
    throw ValueError("backward() on a tensor that does not require grad");

  std::vector<detail::Node<T>*> order = topo_from(node_.get());
  if (!accumulate) {
    for (auto* n : order)
      if (!n->grad.empty()) std::fill(n->grad.begin(), n->grad.end(), T(0));
  }
  node_->ensure_grad();
  node_->grad[0] += T(1);
  for (auto* n : order) {
    if (n->backprop && n->requires_grad) {
      n->ensure_grad();
      n->backprop(*n);
    }
  }
}

namespace detail {

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value,
                      std::vector<Tensor<T>> parents,
                      std::function<void(Node<T>&)> backprop) {
  int64_t n = shape_numel(shape);
  if (n != static_cast<int64_t>(value.size()))
    throw ShapeError("make_result: value size does not match shape " +
                     shape_str(shape));
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool need = false;
  if (grad_enabled()) {
    for (const auto& p : parents)
      if (p.defined() && p.requires_grad()) need = true;
  }
  if (need) {
    node->requires_grad = true;
    for (const auto& p : parents)
      if (p.defined()) node->parents.push_back(p.node());
    node->backprop = std::move(backprop);
  }
  return Tensor<T>(std::move(node));
}

template Tensor<float> make_result<float>(Shape, std::vector<float>,
                                          std::vector<Tensor<float>>,
                                          std::function<void(Node<float>&)>);
template Tensor<double> make_result<double>(Shape, std::vector<double>,
                                            std::vector<Tensor<double>>,
                                            std::function<void(Node<double>&)>);

}  // namespace detail

template class Tensor<float>;
template class Tensor<double>;

}  // namespace dida
