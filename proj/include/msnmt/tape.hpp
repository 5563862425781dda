#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "msnmt/numerics.hpp"

namespace msnmt {

// An activation in the recorded forward pass. The gradient is allocated on
// first use so untouched branches cost nothing during backward.
struct Node {
  Tensor value;
  Tensor grad;

  explicit Node(Tensor v) : value(std::move(v)) {}
  Tensor& grad_ref() {
    if (grad.empty() && !value.empty()) grad = Tensor(value.rows(), value.cols());
    return grad;
  }
  bool has_grad() const noexcept { return !grad.empty(); }
};

using Var = std::shared_ptr<Node>;

inline Var make_var(Tensor t) { return std::make_shared<Node>(std::move(t)); }

// Ordered list of layer-level backward closures. Forward code appends one
// entry per layer application; backward replays them newest-first.
class Tape {
 public:
  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }
  void backward();
  void clear() { steps_.clear(); }
  std::size_t size() const noexcept { return steps_.size(); }

 private:
  std::vector<std::function<void()>> steps_;
};

// y = x W^T (+ b). W is [out x in], x is [B x in].
Var linear(Tape* tape, const Var& x, Parameter& w, Parameter* b = nullptr);

Var tanh(Tape* tape, const Var& x);

Var add(Tape* tape, const Var& a, const Var& b);

Var concat_cols(Tape* tape, const std::vector<Var>& parts);

// Elementwise product with a constant mask (inverted dropout).
Var apply_mask(Tape* tape, const Var& x, const Tensor& mask);

// Row r of the result is row ids[r] of the table.
Var embed(Tape* tape, Parameter& table, std::span<const int> ids);

}  // namespace msnmt
