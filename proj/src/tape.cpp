#include "msnmt/tape.hpp"

#include <cmath>
#include <string>

#include "msnmt/errors.hpp"

namespace msnmt {

void Tape::backward() {
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  steps_.clear();
}

Var linear(Tape* tape, const Var& x, Parameter& w, Parameter* b) {
  Tensor y;
  gemm(x->value, false, w.value, true, y);
  if (b != nullptr) {
    if (b->value.size() != y.cols()) {
      throw DimensionError("linear: bias " + b->value.shape_str() + " does not match output " +
                           y.shape_str());
    }
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto row = y.row_span(r);
      for (std::size_t j = 0; j < row.size(); ++j) row[j] += b->value[j];
    }
  }
  Var out = make_var(std::move(y));
  if (tape != nullptr) {
    tape->record([x, out, &w, b] {
      if (!out->has_grad()) return;
      const Tensor& dy = out->grad;
      gemm(dy, true, x->value, false, w.grad, 1.0, true);
      gemm(dy, false, w.value, false, x->grad_ref(), 1.0, true);
      if (b != nullptr) add_column_sums(dy, b->grad);
    });
  }
  return out;
}

Var tanh(Tape* tape, const Var& x) {
  Var out = make_var(ewise(Ewise::Tanh, x->value));
  if (tape != nullptr) {
    tape->record([x, out] {
      if (!out->has_grad()) return;
      Tensor& dx = x->grad_ref();
      for (std::size_t i = 0; i < dx.size(); ++i) {
        const Real y = out->value[i];
        dx[i] += out->grad[i] * (1.0 - y * y);
      }
    });
  }
  return out;
}

Var add(Tape* tape, const Var& a, const Var& b) {
  Var out = make_var(ewise(Ewise::Add, a->value, b->value));
  if (tape != nullptr) {
    tape->record([a, b, out] {
      if (!out->has_grad()) return;
      a->grad_ref() += out->grad;
      b->grad_ref() += out->grad;
    });
  }
  return out;
}

Var concat_cols(Tape* tape, const std::vector<Var>& parts) {
  std::vector<Tensor> values;
  values.reserve(parts.size());
  for (const auto& p : parts) values.push_back(p->value);
  Var out = make_var(concat(values));
  if (tape != nullptr) {
    tape->record([parts, out] {
      if (!out->has_grad()) return;
      std::size_t offset = 0;
      const Tensor& g = out->grad;
      for (const auto& p : parts) {
        Tensor& dp = p->grad_ref();
        const std::size_t w = p->value.cols();
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t j = 0; j < w; ++j) dp(r, j) += g(r, offset + j);
        offset += w;
      }
    });
  }
  return out;
}

Var apply_mask(Tape* tape, const Var& x, const Tensor& mask) {
  Var out = make_var(ewise(Ewise::Mul, x->value, mask));
  if (tape != nullptr) {
    tape->record([x, out, mask] {
      if (!out->has_grad()) return;
      Tensor& dx = x->grad_ref();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += out->grad[i] * mask[i];
    });
  }
  return out;
}

Var embed(Tape* tape, Parameter& table, std::span<const int> ids) {
  const std::size_t dim = table.value.cols();
  Tensor y(ids.size(), dim);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const int id = ids[r];
    if (id < 0 || static_cast<std::size_t>(id) >= table.value.rows()) {
      throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(table.value.rows()) + " for " + table.name);
    }
    auto src = table.value.row_span(static_cast<std::size_t>(id));
    std::copy(src.begin(), src.end(), y.row_span(r).begin());
  }
  Var out = make_var(std::move(y));
  if (tape != nullptr) {
    std::vector<int> kept(ids.begin(), ids.end());
    tape->record([out, &table, kept = std::move(kept)] {
      if (!out->has_grad()) return;
      for (std::size_t r = 0; r < kept.size(); ++r) {
        auto g = out->grad.row_span(r);
        auto dst = table.grad.row_span(static_cast<std::size_t>(kept[r]));
        for (std::size_t j = 0; j < g.size(); ++j) dst[j] += g[j];
      }
    });
  }
  return out;
}

}  // namespace msnmt
