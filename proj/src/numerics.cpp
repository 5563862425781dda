#include "msnmt/numerics.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "msnmt/errors.hpp"

namespace msnmt {

namespace {

using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

ConstMapMatrix as_eigen(const Tensor& t) {
  return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}
MapMatrix as_eigen(Tensor& t) {
  return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
  }
}

}  // namespace

int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Io:
    case ErrorKind::Alignment:
      return 2;
    case ErrorKind::Numeric:
      return 3;
    case ErrorKind::Compatibility:
      return 4;
    default:
      return 1;
  }
}

Tensor::Tensor(std::size_t rows, std::size_t cols, Real fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<Real> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str());
  }
}

Tensor Tensor::row(std::initializer_list<Real> values) {
  return Tensor(1, values.size(), std::vector<Real>(values));
}

Tensor Tensor::row(std::span<const Real> values) {
  return Tensor(1, values.size(), std::vector<Real>(values.begin(), values.end()));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<Real>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<Real> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(r, c, std::move(data));
}

void Tensor::fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

std::string Tensor::shape_str() const {
  return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
}

Real Tensor::sum() const noexcept { return std::accumulate(data_.begin(), data_.end(), 0.0); }

Real Tensor::squared_norm() const noexcept {
  Real s = 0.0;
  for (Real v : data_) s += v * v;
  return s;
}

Tensor& Tensor::operator+=(const Tensor& o) {
  require_same_shape(*this, o, "add");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(Real s) noexcept {
  for (Real& v : data_) v *= s;
  return *this;
}

void gemm(const Tensor& a, bool trans_a, const Tensor& b, bool trans_b, Tensor& c, Real alpha,
          bool accumulate) {
  const std::size_t m = trans_a ? a.cols() : a.rows();
  const std::size_t ka = trans_a ? a.rows() : a.cols();
  const std::size_t kb = trans_b ? b.cols() : b.rows();
  const std::size_t n = trans_b ? b.rows() : b.cols();
  if (ka != kb) {
    throw DimensionError("matmul: inner dimensions disagree for " + a.shape_str() +
                         (trans_a ? "^T" : "") + " x " + b.shape_str() + (trans_b ? "^T" : ""));
  }
  if (accumulate) {
    if (c.rows() != m || c.cols() != n) {
      throw DimensionError("matmul: accumulator " + c.shape_str() + " does not match result [" +
                           std::to_string(m) + "x" + std::to_string(n) + "]");
    }
  } else if (c.rows() != m || c.cols() != n) {
    c = Tensor(m, n);
  }
  if (m == 0 || n == 0) return;
  auto out = as_eigen(c);
  if (!accumulate) out.setZero();
  if (ka == 0) return;
  const auto ea = as_eigen(a);
  const auto eb = as_eigen(b);
  // Row at a time, each product formed in full before it is added, so an
  // output row never depends on how many other rows share the call.
  Eigen::Matrix<Real, 1, Eigen::Dynamic> tmp(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < m; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    if (!trans_a && !trans_b) {
      tmp.noalias() = ea.row(r) * eb;
    } else if (trans_a && !trans_b) {
      tmp.noalias() = ea.col(r).transpose() * eb;
    } else if (!trans_a && trans_b) {
      tmp.noalias() = ea.row(r) * eb.transpose();
    } else {
      tmp.noalias() = ea.col(r).transpose() * eb.transpose();
    }
    if (alpha != 1.0) tmp *= alpha;
    out.row(r) += tmp;
  }
}

void add_column_sums(const Tensor& x, Tensor& acc) {
  if (acc.size() != x.cols()) {
    throw DimensionError("add_column_sums: " + x.shape_str() + " into " + acc.shape_str());
  }
  std::vector<Real> sums(x.cols(), 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row_span(r);
    for (std::size_t j = 0; j < row.size(); ++j) sums[j] += row[j];
  }
  for (std::size_t j = 0; j < sums.size(); ++j) acc[j] += sums[j];
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tensor c;
  gemm(a, false, b, false, c);
  return c;
}

MatmulGrads matmul_backward(const Tensor& a, const Tensor& b, const Tensor& dc) {
  MatmulGrads g;
  gemm(dc, false, b, true, g.da);
  gemm(a, true, dc, false, g.db);
  return g;
}

Tensor ewise(Ewise kind, const Tensor& a) {
  Tensor out(a.rows(), a.cols());
  switch (kind) {
    case Ewise::Tanh:
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::tanh(a[i]);
      break;
    case Ewise::Sigmoid:
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = sigmoid(a[i]);
      break;
    default:
      throw ArgumentError("ewise: binary kind called with one operand");
  }
  return out;
}

Tensor ewise(Ewise kind, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "ewise");
  Tensor out(a.rows(), a.cols());
  switch (kind) {
    case Ewise::Add:
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
      break;
    case Ewise::Sub:
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
      break;
    case Ewise::Mul:
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
      break;
    default:
      throw ArgumentError("ewise: unary kind called with two operands");
  }
  return out;
}

EwiseGrads ewise_backward(Ewise kind, const Tensor& a, const Tensor* b, const Tensor& out,
                          const Tensor& dout) {
  require_same_shape(out, dout, "ewise_backward");
  EwiseGrads g;
  g.da = Tensor(a.rows(), a.cols());
  switch (kind) {
    case Ewise::Tanh:
      for (std::size_t i = 0; i < a.size(); ++i) g.da[i] = dout[i] * (1.0 - out[i] * out[i]);
      return g;
    case Ewise::Sigmoid:
      for (std::size_t i = 0; i < a.size(); ++i) g.da[i] = dout[i] * out[i] * (1.0 - out[i]);
      return g;
    default:
      break;
  }
  if (b == nullptr) throw ArgumentError("ewise_backward: binary kind needs both operands");
  require_same_shape(a, *b, "ewise_backward");
  g.db = Tensor(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) {
    switch (kind) {
      case Ewise::Add:
        g.da[i] = dout[i];
        g.db[i] = dout[i];
        break;
      case Ewise::Sub:
        g.da[i] = dout[i];
        g.db[i] = -dout[i];
        break;
      case Ewise::Mul:
        g.da[i] = dout[i] * (*b)[i];
        g.db[i] = dout[i] * a[i];
        break;
      default:
        break;
    }
  }
  return g;
}

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw ArgumentError("concat: empty list of parts");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw DimensionError("concat: row count mismatch " + parts.front().shape_str() + " vs " +
                           p.shape_str());
    }
    cols += p.cols();
  }
  Tensor out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    Real* dst = out.data() + r * cols;
    for (const auto& p : parts) {
      auto src = p.row_span(r);
      dst = std::copy(src.begin(), src.end(), dst);
    }
  }
  return out;
}

Tensor concat(std::initializer_list<Tensor> parts) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()));
}

std::vector<Tensor> split_cols(const Tensor& t, std::span<const std::size_t> widths) {
  const std::size_t total = std::accumulate(widths.begin(), widths.end(), std::size_t{0});
  if (total != t.cols()) {
    throw DimensionError("split: widths sum to " + std::to_string(total) + " but tensor is " +
                         t.shape_str());
  }
  std::vector<Tensor> out;
  out.reserve(widths.size());
  std::size_t offset = 0;
  for (std::size_t w : widths) {
    Tensor part(t.rows(), w);
    for (std::size_t r = 0; r < t.rows(); ++r) {
      auto src = t.row_span(r).subspan(offset, w);
      std::copy(src.begin(), src.end(), part.row_span(r).begin());
    }
    out.push_back(std::move(part));
    offset += w;
  }
  return out;
}

Tensor softmax(const Tensor& v) {
  if (v.empty()) throw ArgumentError("softmax: empty input");
  Tensor out(v.rows(), v.cols());
  for (std::size_t r = 0; r < v.rows(); ++r) {
    auto in = v.row_span(r);
    auto o = out.row_span(r);
    const Real mx = *std::max_element(in.begin(), in.end());
    Real z = 0.0;
    for (std::size_t i = 0; i < in.size(); ++i) {
      o[i] = std::exp(in[i] - mx);
      z += o[i];
    }
    for (Real& x : o) x /= z;
  }
  return out;
}

Tensor softmax_backward(const Tensor& y, const Tensor& dy) {
  require_same_shape(y, dy, "softmax_backward");
  Tensor dx(y.rows(), y.cols());
  for (std::size_t r = 0; r < y.rows(); ++r) {
    Real dot = 0.0;
    for (std::size_t i = 0; i < y.cols(); ++i) dot += y(r, i) * dy(r, i);
    for (std::size_t i = 0; i < y.cols(); ++i) dx(r, i) = y(r, i) * (dy(r, i) - dot);
  }
  return dx;
}

std::vector<Tensor> finite_difference_grad(const std::function<Real()>& loss_fn,
                                           std::span<Parameter* const> params, Real epsilon) {
  if (!(epsilon > 0.0)) throw ArgumentError("finite_difference_grad: epsilon must be positive");
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (Parameter* p : params) {
    Tensor g(p->value.rows(), p->value.cols());
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const Real saved = p->value[i];
      p->value[i] = saved + epsilon;
      const Real plus = loss_fn();
      p->value[i] = saved - epsilon;
      const Real minus = loss_fn();
      p->value[i] = saved;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        throw NumericError("finite_difference_grad: non-finite loss while perturbing " + p->name);
      }
      g[i] = (plus - minus) / (2.0 * epsilon);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

}  // namespace msnmt
