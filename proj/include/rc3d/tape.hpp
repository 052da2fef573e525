#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "rc3d/tensor.hpp"

namespace rc3d {

template <typename T>
class Tape;

// Handle to a value recorded on a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  [[nodiscard]] const Tensor<T>& value() const;
  [[nodiscard]] const Shape& shape() const { return value().shape(); }
};

// Reverse-mode record. Nodes are appended in execution order, so the node
// list is a topological order by construction; backward walks it in reverse.
//
// A tape is single-owner and single-threaded. After backward() it accepts no
// further recording until reset().
template <typename T>
class Tape {
 public:
  // Receives the gradient of the node's output and one accumulation buffer
  // per input. Buffers of inputs that need no gradient are empty spans.
  using BackwardFn = std::function<void(std::span<const T> grad_out, std::span<std::span<T>> grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad = true);
  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  Var<T> record(std::string op, Tensor<T> value, std::initializer_list<Var<T>> inputs,
                BackwardFn backward);
  Var<T> record(std::string op, Tensor<T> value, std::span<const Var<T>> inputs,
                BackwardFn backward);

  void backward(Var<T> loss);

  [[nodiscard]] const Tensor<T>& value(Var<T> v) const;
  // Gradient of the last backward() loss wrt v; zeros if v was not reached.
  [[nodiscard]] Tensor<T> grad(Var<T> v) const;
  [[nodiscard]] bool requires_grad(Var<T> v) const;
  [[nodiscard]] const std::string& op_name(Var<T> v) const;

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }
  [[nodiscard]] bool backward_done() const { return backward_done_; }
  void reset();

 private:
  struct Node {
    std::string op;
    Tensor<T> value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  void check_owned(Var<T> v, const char* what) const;

  std::vector<Node> nodes_;
  std::vector<std::vector<T>> grads_;
  bool backward_done_ = false;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(*this);
}

}  // namespace rc3d
