#include "rc3d/tape.hpp"

#include "rc3d/error.hpp"

namespace rc3d {

template <typename T>
void Tape<T>::check_owned(Var<T> v, const char* what) const {
  if (v.tape != this || v.id >= nodes_.size()) {
    throw UsageError(std::string(what) + ": variable is not recorded on this tape");
  }
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  if (backward_done_) throw UsageError("tape must be reset before recording after backward()");
  nodes_.push_back(Node{"leaf", std::move(value), {}, {}, requires_grad});
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::record(std::string op, Tensor<T> value, std::initializer_list<Var<T>> inputs,
                       BackwardFn backward) {
  return record(std::move(op), std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()),
                std::move(backward));
}

template <typename T>
Var<T> Tape<T>::record(std::string op, Tensor<T> value, std::span<const Var<T>> inputs,
                       BackwardFn backward) {
  if (backward_done_) throw UsageError("tape must be reset before recording after backward()");
  Node node{std::move(op), std::move(value), {}, std::move(backward), false};
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    check_owned(in, node.op.c_str());
    node.inputs.push_back(in.id);
    node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
  }
  nodes_.push_back(std::move(node));
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (loss.tape != this || loss.id >= nodes_.size()) {
    throw UsageError("backward: loss is not recorded on this tape");
  }
  if (backward_done_) throw UsageError("backward: tape already consumed; call reset()");
  if (nodes_[loss.id].value.numel() != 1) {
    throw UsageError("backward: loss must be a scalar, got " + nodes_[loss.id].value.shape().str());
  }
  grads_.assign(nodes_.size(), {});
  grads_[loss.id].assign(1, T(1));

  std::vector<std::span<T>> grad_in;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (grads_[i].empty() || !node.requires_grad || !node.backward) continue;
    grad_in.assign(node.inputs.size(), {});
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const std::size_t in = node.inputs[k];
      if (!nodes_[in].requires_grad) continue;
      if (grads_[in].empty()) grads_[in].assign(nodes_[in].value.numel(), T(0));
      grad_in[k] = std::span<T>(grads_[in]);
    }
    node.backward(std::span<const T>(grads_[i]), std::span<std::span<T>>(grad_in));
  }
  backward_done_ = true;
}

template <typename T>
const Tensor<T>& Tape<T>::value(Var<T> v) const {
  check_owned(v, "value");
  return nodes_[v.id].value;
}

template <typename T>
Tensor<T> Tape<T>::grad(Var<T> v) const {
  check_owned(v, "grad");
  const Shape shape = nodes_[v.id].value.shape();
  if (v.id >= grads_.size() || grads_[v.id].empty()) return Tensor<T>::zeros(shape);
  return Tensor<T>(shape, grads_[v.id]);
}

template <typename T>
bool Tape<T>::requires_grad(Var<T> v) const {
  check_owned(v, "requires_grad");
  return nodes_[v.id].requires_grad;
}

template <typename T>
const std::string& Tape<T>::op_name(Var<T> v) const {
  check_owned(v, "op_name");
  return nodes_[v.id].op;
}

template <typename T>
void Tape<T>::reset() {
  nodes_.clear();
  grads_.clear();
  backward_done_ = false;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace rc3d
