#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace msnmt {

using Real = double;

// Dense row-major matrix. Vectors are 1 x n row tensors; batched activations
// are B x n with one example per row.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, Real fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<Real> data);

  static Tensor row(std::initializer_list<Real> values);
  static Tensor row(std::span<const Real> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<Real>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  Real& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  Real operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  Real* data() noexcept { return data_.data(); }
  const Real* data() const noexcept { return data_.data(); }
  std::span<Real> values() noexcept { return data_; }
  std::span<const Real> values() const noexcept { return data_; }
  std::span<Real> row_span(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const Real> row_span(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  void fill(Real v);
  void set_zero() { fill(0.0); }
  bool same_shape(const Tensor& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape_str() const;
  bool all_finite() const noexcept;
  Real sum() const noexcept;
  Real squared_norm() const noexcept;

  Tensor& operator+=(const Tensor& o);
  Tensor& operator*=(Real s) noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Real> data_;
};

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, std::size_t rows, std::size_t cols)
      : name(std::move(n)), value(rows, cols), grad(rows, cols) {}

  void zero_grad() { grad.set_zero(); }
};

inline Real sigmoid(Real x) { return 1.0 / (1.0 + std::exp(-x)); }

// C (+)= alpha * op(A) * op(B), where op transposes when the flag is set.
// Without accumulate, C is reshaped and overwritten.
void gemm(const Tensor& a, bool trans_a, const Tensor& b, bool trans_b, Tensor& c,
          Real alpha = 1.0, bool accumulate = false);

// acc[j] += sum_r x(r, j); the row sum is formed before touching acc.
void add_column_sums(const Tensor& x, Tensor& acc);

Tensor matmul(const Tensor& a, const Tensor& b);

struct MatmulGrads {
  Tensor da;
  Tensor db;
};
MatmulGrads matmul_backward(const Tensor& a, const Tensor& b, const Tensor& dc);

enum class Ewise { Tanh, Sigmoid, Add, Mul, Sub };

Tensor ewise(Ewise kind, const Tensor& a);
Tensor ewise(Ewise kind, const Tensor& a, const Tensor& b);

struct EwiseGrads {
  Tensor da;
  Tensor db;  // empty for unary kinds
};
// `out` is the forward result; unary backward is expressed through it.
EwiseGrads ewise_backward(Ewise kind, const Tensor& a, const Tensor* b, const Tensor& out,
                          const Tensor& dout);

// Column-wise concatenation; all parts share the row count.
Tensor concat(std::span<const Tensor> parts);
Tensor concat(std::initializer_list<Tensor> parts);
std::vector<Tensor> split_cols(const Tensor& t, std::span<const std::size_t> widths);

// Row-wise softmax with max subtraction.
Tensor softmax(const Tensor& v);
Tensor softmax_backward(const Tensor& y, const Tensor& dy);

// Central differences over every scalar of every parameter. The loss is
// re-evaluated with each scalar perturbed in place and restored afterwards.
std::vector<Tensor> finite_difference_grad(const std::function<Real()>& loss_fn,
                                           std::span<Parameter* const> params,
                                           Real epsilon = 1e-5);

}  // namespace msnmt
