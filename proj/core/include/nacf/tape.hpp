#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <deque>
#include <unordered_map>
#include <vector>

#include "nacf/tensor.hpp"

namespace nacf {

/// A named trainable tensor. `decay` marks whether weight decay applies.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  bool decay = true;
};

template <class T>
class Tape;

/// Handle to a value recorded on a tape. Cheap to copy; valid while the
/// tape is alive and not cleared.
template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor<T>& value() const { return tape_->value(id_); }
  const Tensor<T>& grad() const { return tape_->grad(id_); }
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Ordered record of executed operations. Reverse-mode differentiation
/// walks the record backwards; intermediates live until `clear()` or
/// destruction. A tape is single-threaded; use one tape per thread.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;
  static constexpr std::size_t kNoParam = std::numeric_limits<std::size_t>::max();

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var<T> constant(Tensor<T> value);
  /// Leaf that receives a gradient. Values of recorded nodes stay at a
  /// stable address until `clear()`.
  Var<T> variable(Tensor<T> value);
  /// Leaf bound to externally owned storage. Repeated binds of the same
  /// parameter return the same node so gradients are accumulated once;
  /// `index` is its slot in the owning store.
  Var<T> parameter(const Parameter<T>& param, std::size_t index);

  /// Appends an operation result. `backward` is dropped when no input
  /// requires a gradient or recording is disabled.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs,
                BackwardFn backward);
  Var<T> record(Tensor<T> value, std::span<const Var<T>> inputs,
                BackwardFn backward);

  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  /// Gradient buffer; empty tensor when nothing flowed into the node.
  const Tensor<T>& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Zero-initialised on first access; used by backward closures.
  Tensor<T>& grad_slot(std::size_t id);

  /// Populates gradients of every leaf that requires one. Intermediate
  /// gradients are recomputed per call; leaf gradients accumulate.
  void backward(const Var<T>& loss, T seed = T{1});

  /// Adds each bound parameter's gradient into `grads[index]`. Meant for
  /// tapes that bind parameters of a single store.
  void add_parameter_grads(std::span<Tensor<T>> grads) const;

  void clear();

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    BackwardFn backward;
    std::size_t param_index = kNoParam;
    bool requires_grad = false;
    bool leaf = true;
  };

  Var<T> push(Node node);

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
  bool grad_enabled_;
};

/// Throws NonFinite when any element is NaN or infinite.
template <class T>
void check_finite(const Tensor<T>& t, const char* where);

}  // namespace nacf
