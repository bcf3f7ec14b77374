#include "mddose/tape.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace mddose {

Tape& Var::tape() const {
  if (!tape_) throw std::logic_error("Var: unbound handle");
  return *tape_;
}

const Tensor& Var::value() const { return tape().value(id_); }

void Tape::check_recordable() const {
  if (backward_done_) {
    throw std::logic_error("Tape: backward already ran on this tape; reset() before recording a new forward pass");
  }
}

Var Tape::constant(Tensor value) {
  check_recordable();
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Tensor& p) {
  check_recordable();
  Node node;
  node.external = &p;
  if (p.requires_grad()) {
    node.param = &p;
    node.needs_grad = true;
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::span<const std::size_t> inputs, BackwardFn backward) {
  check_recordable();
  Node node;
  node.value = std::move(value);
  for (auto in : inputs) {
    if (in >= nodes_.size()) throw std::logic_error("Tape::record: input node does not precede output");
    node.needs_grad = node.needs_grad || nodes_[in].needs_grad;
  }
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.external ? *n.external : n.value;
}

bool Tape::needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }

std::span<double> Tape::grad(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.empty()) n.grad.assign(value(id).size(), 0.0);
  return n.grad;
}

void Tape::backward(const Var& loss) {
  if (&loss.tape() != this) throw std::logic_error("Tape::backward: loss belongs to another tape");
  if (backward_done_) throw std::logic_error("Tape::backward: second backward pass without a fresh forward pass");
  const Tensor& lv = value(loss.id());
  if (lv.size() != 1) {
    throw std::invalid_argument("Tape::backward: loss must be scalar, got shape " + shape_str(lv.shape()));
  }
  backward_done_ = true;

  for (auto& n : nodes_) {
    if (n.param) n.param->zero_grad();
  }
  if (!nodes_[loss.id()].needs_grad) return;

  grad(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param) {
      auto dst = n.param->grad();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad[k];
    }
  }
}

void Tape::reset() {
  nodes_.clear();
  backward_done_ = false;
}

}  // namespace mddose
