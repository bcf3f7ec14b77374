#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "mddose/tensor.hpp"

namespace mddose {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  Tape& tape() const;
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so every node's
/// inputs precede it and the backward sweep is a reverse linear scan.
///
/// A tape supports exactly one backward pass; call reset() before recording
/// the next forward pass. Not thread-safe: one tape per forward pass.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Records a value that never receives a gradient.
  Var constant(Tensor value);

  /// Binds a parameter. When p.requires_grad() is set, backward() overwrites
  /// p.grad() with d(loss)/dp (zero if p is not on the loss path).
  Var param(Tensor& p);

  /// Appends the result of a primitive. The backward closure runs only when
  /// some input needs a gradient; it reads grad(self) and accumulates into
  /// the grads of its inputs.
  Var record(Tensor value, std::span<const std::size_t> inputs, BackwardFn backward);

  void backward(const Var& loss);
  void reset();

  const Tensor& value(std::size_t id) const;
  bool needs_grad(std::size_t id) const;
  /// Gradient buffer of a node, allocated (zeroed) on first access.
  std::span<double> grad(std::size_t id);
  std::size_t size() const noexcept { return nodes_.size(); }
  bool backward_done() const noexcept { return backward_done_; }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor* param = nullptr;
    bool needs_grad = false;
    std::vector<double> grad;
    BackwardFn backward;
  };

  void check_recordable() const;

  std::deque<Node> nodes_;  // stable addresses: value() references survive later records
  bool backward_done_ = false;
};

}  // namespace mddose
