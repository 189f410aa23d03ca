#include "nacf/tape.hpp"

#include <cmath>
#include <sstream>

namespace nacf {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <class T>
void check_finite(const Tensor<T>& t, const char* where) {
  for (T v : t.data()) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::NonFinite, std::string("non-finite value in ") + where);
    }
  }
}

template <class T>
Var<T> Tape<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <class T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  check_finite(value, "constant");
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

template <class T>
Var<T> Tape<T>::variable(Tensor<T> value) {
  check_finite(value, "variable");
  Node n;
  n.value = std::move(value);
  n.requires_grad = grad_enabled_;
  return push(std::move(n));
}

template <class T>
Var<T> Tape<T>::parameter(const Parameter<T>& param, std::size_t index) {
  if (auto it = param_nodes_.find(&param); it != param_nodes_.end()) {
    return Var<T>(this, it->second);
  }
  Node n;
  n.external = &param.value;
  n.param_index = index;
  n.requires_grad = grad_enabled_;
  Var<T> v = push(std::move(n));
  param_nodes_.emplace(&param, v.id());
  return v;
}

template <class T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs,
                       BackwardFn backward) {
  return record(std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()),
                std::move(backward));
}

template <class T>
Var<T> Tape<T>::record(Tensor<T> value, std::span<const Var<T>> inputs,
                       BackwardFn backward) {
  bool needs = false;
  for (const auto& in : inputs) {
    if (in.tape() != this) {
      throw Error(ErrorCode::ShapeMismatch, "operands recorded on different tapes");
    }
    needs = needs || nodes_[in.id()].requires_grad;
  }
  Node n;
  n.value = std::move(value);
  n.leaf = false;
  n.requires_grad = grad_enabled_ && needs;
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

template <class T>
Tensor<T>& Tape<T>::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor<T>(value(id).shape());
  return n.grad;
}

template <class T>
void Tape<T>::backward(const Var<T>& loss, T seed) {
  if (nodes_.empty() || loss.tape() != this) {
    throw Error(ErrorCode::EmptyTape, "loss is not recorded on this tape");
  }
  if (value(loss.id()).size() != 1) {
    throw Error(ErrorCode::NotScalar,
                "backward needs a scalar loss, got " + shape_string(value(loss.id()).shape()));
  }
  for (auto& n : nodes_) {
    if (!n.leaf) n.grad = Tensor<T>();
  }
  if (!nodes_[loss.id()].requires_grad) return;
  grad_slot(loss.id())[0] += seed;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.leaf || !n.backward || n.grad.empty()) continue;
    n.backward(*this, id);
  }
  for (const auto& n : nodes_) {
    if (n.leaf && !n.grad.empty()) check_finite(n.grad, "gradient");
  }
}

template <class T>
void Tape<T>::add_parameter_grads(std::span<Tensor<T>> grads) const {
  for (const auto& [param, id] : param_nodes_) {
    const Node& n = nodes_[id];
    if (n.grad.empty()) continue;
    Tensor<T>& dst = grads[n.param_index];
    if (dst.empty()) dst = Tensor<T>(n.grad.shape());
    T* d = dst.raw();
    const T* s = n.grad.raw();
    for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
  }
}

template <class T>
void Tape<T>::clear() {
  nodes_.clear();
  param_nodes_.clear();
}

template class Tape<float>;
template class Tape<double>;
template void check_finite(const Tensor<float>&, const char*);
template void check_finite(const Tensor<double>&, const char*);

}  // namespace nacf
