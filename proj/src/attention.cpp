#include "msnmt/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "msnmt/errors.hpp"

namespace msnmt {

namespace {

struct RowCore {
  std::vector<Real> z;  // tanh(W_p h)
  Real sig = 0.0;       // sigmoid(v_p . z)
  std::vector<Real> g;  // W_a^T h, so that score(s) = g . h_s
  std::vector<Real> gauss;
  AttentionTrace trace;
};

void check_radius(int radius) {
  if (radius < 1) {
    throw ArgumentError("attention window radius must be >= 1 (sigma = D/2), got " +
                        std::to_string(radius));
  }
}

void position_core(std::span<const Real> h, const AttentionParams& p, std::size_t source_len,
                   RowCore& core) {
  const std::size_t d = h.size();
  if (p.w_p.value.cols() != d || p.v_p.value.size() != p.w_p.value.rows()) {
    throw DimensionError("predict_position: hidden size " + std::to_string(d) +
                         " vs W_p " + p.w_p.value.shape_str());
  }
  if (source_len == 0) throw ArgumentError("predict_position: empty source");
  const std::size_t rows = p.w_p.value.rows();
  core.z.assign(rows, 0.0);
  Real a = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    auto w = p.w_p.value.row_span(i);
    Real acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += w[j] * h[j];
    core.z[i] = std::tanh(acc);
    a += p.v_p.value[i] * core.z[i];
  }
  core.sig = sigmoid(a);
  core.trace.position = static_cast<Real>(source_len) * core.sig;
}

// `row(s)` yields the top encoder hidden state at original position s.
template <class RowFn>
void window_core(std::span<const Real> h, RowFn&& row, std::size_t source_len, int radius,
                 const Tensor& w_a, RowCore& core) {
  check_radius(radius);
  const std::size_t d = h.size();
  if (w_a.rows() != d || w_a.cols() != d) {
    throw DimensionError("window_weights: W_a " + w_a.shape_str() + " vs hidden size " +
                         std::to_string(d));
  }
  if (source_len == 0) throw ArgumentError("window_weights: empty source");
  AttentionTrace& tr = core.trace;
  const Real p = tr.position;
  const long centre = static_cast<long>(std::floor(p));
  const long lo = std::max<long>(0, centre - radius);
  const long hi = std::min<long>(static_cast<long>(source_len) - 1, centre + radius);
  if (lo > hi) throw ArgumentError("window_weights: position outside sentence");
  tr.first = static_cast<std::size_t>(lo);
  tr.last = static_cast<std::size_t>(hi);

  core.g.assign(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    auto w = w_a.row_span(i);
    for (std::size_t j = 0; j < d; ++j) core.g[j] += h[i] * w[j];
  }

  const std::size_t n = tr.window_size();
  tr.align.assign(n, 0.0);
  Real mx = -std::numeric_limits<Real>::infinity();
  for (std::size_t k = 0; k < n; ++k) {
    auto hs = row(tr.first + k);
    Real sc = 0.0;
    for (std::size_t j = 0; j < d; ++j) sc += core.g[j] * hs[j];
    tr.align[k] = sc;
    mx = std::max(mx, sc);
  }
  Real z = 0.0;
  for (Real& v : tr.align) {
    v = std::exp(v - mx);
    z += v;
  }
  for (Real& v : tr.align) v /= z;

  const Real sigma = radius / 2.0;
  core.gauss.assign(n, 0.0);
  tr.weights.assign(n, 0.0);
  tr.context = Tensor(1, d);
  for (std::size_t k = 0; k < n; ++k) {
    const Real s = static_cast<Real>(tr.first + k);
    core.gauss[k] = std::exp(-(s - p) * (s - p) / (2.0 * sigma * sigma));
    tr.weights[k] = tr.align[k] * core.gauss[k];
    auto hs = row(tr.first + k);
    for (std::size_t j = 0; j < d; ++j) tr.context[j] += tr.weights[k] * hs[j];
  }
}

void check_row_vector(const Tensor& h, const char* op) {
  if (h.rows() != 1) throw DimensionError(std::string(op) + ": expected a row vector, got " +
                                          h.shape_str());
}

}  // namespace

Real predict_position(const Tensor& h, const AttentionParams& params, std::size_t source_len) {
  check_row_vector(h, "predict_position");
  RowCore core;
  position_core(h.row_span(0), params, source_len, core);
  return core.trace.position;
}

AttentionTrace window_weights(const Tensor& h, const Tensor& top_seq, Real position, int radius,
                              const Tensor& w_a) {
  check_row_vector(h, "window_weights");
  if (top_seq.cols() != h.cols()) {
    throw DimensionError("window_weights: sequence " + top_seq.shape_str() + " vs query " +
                         h.shape_str());
  }
  RowCore core;
  core.trace.position = position;
  window_core(h.row_span(0), [&](std::size_t s) { return top_seq.row_span(s); },
              top_seq.rows(), radius, w_a, core);
  return std::move(core.trace);
}

Tensor context_vector(const AttentionTrace& trace, const Tensor& top_seq) {
  Tensor c(1, top_seq.cols());
  for (std::size_t k = 0; k < trace.weights.size(); ++k) {
    const std::size_t s = trace.first + k;
    if (s >= top_seq.rows()) throw DimensionError("context_vector: window exceeds sequence");
    for (std::size_t j = 0; j < c.cols(); ++j) c[j] += trace.weights[k] * top_seq(s, j);
  }
  return c;
}

Tensor attentional_hidden(const Tensor& h, std::span<const Tensor> contexts,
                          const OutputProjection& proj) {
  if (contexts.empty() || contexts.size() != proj.contexts() ||
      proj.w.value.cols() != h.cols() * (contexts.size() + 1)) {
    throw DimensionError("attentional_hidden: " + std::to_string(contexts.size()) +
                         " contexts for projection " + proj.w.value.shape_str());
  }
  std::vector<Tensor> parts;
  parts.reserve(contexts.size() + 1);
  parts.push_back(h);
  parts.insert(parts.end(), contexts.begin(), contexts.end());
  Tensor pre;
  gemm(concat(parts), false, proj.w.value, true, pre);
  return ewise(Ewise::Tanh, pre);
}

MultiAttendResult multi_attend(const Tensor& h, const Tensor& enc1_seq, const Tensor& enc2_seq,
                               const AttentionParams& params1, const AttentionParams& params2,
                               const OutputProjection& proj, int radius) {
  if (enc1_seq.rows() == 0 || enc2_seq.rows() == 0) {
    throw ArgumentError("multi_attend: empty source sequence");
  }
  MultiAttendResult r;
  r.trace1 = window_weights(h, enc1_seq, predict_position(h, params1, enc1_seq.rows()), radius,
                            params1.w_a.value);
  r.trace2 = window_weights(h, enc2_seq, predict_position(h, params2, enc2_seq.rows()), radius,
                            params2.w_a.value);
  const Tensor contexts[] = {r.trace1.context, r.trace2.context};
  r.h_tilde = attentional_hidden(h, contexts, proj);
  return r;
}

Var attend(Tape* tape, const Var& h, const EncoderOutput& enc, AttentionParams& params,
           int radius, std::vector<AttentionTrace>* traces) {
  check_radius(radius);
  const std::size_t batch = h->value.rows();
  const std::size_t d = h->value.cols();
  if (batch != enc.batch()) {
    throw DimensionError("attend: decoder batch " + std::to_string(batch) +
                         " vs encoder batch " + std::to_string(enc.batch()));
  }
  std::vector<RowCore> cores(batch);
  Tensor ctx(batch, d);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t len = enc.lengths[b];
    auto hrow = h->value.row_span(b);
    position_core(hrow, params, len, cores[b]);
    window_core(
        hrow, [&](std::size_t s) { return enc.top_steps[enc.step_for(b, s)]->value.row_span(b); },
        len, radius, params.w_a.value, cores[b]);
    auto c = cores[b].trace.context.row_span(0);
    std::copy(c.begin(), c.end(), ctx.row_span(b).begin());
  }
  if (traces != nullptr) {
    traces->clear();
    for (const auto& core : cores) traces->push_back(core.trace);
  }
  Var out = make_var(std::move(ctx));
  if (tape != nullptr) {
    tape->record([h, out, enc, &params, cores = std::move(cores), radius, d] {
      if (!out->has_grad()) return;
      const Real sigma2 = (radius / 2.0) * (radius / 2.0);
      Tensor& dh_all = h->grad_ref();
      // Parameter gradients are summed over the batch before being added.
      Tensor g_wa(d, d), g_wp(d, d), g_vp(1, d);
      for (std::size_t b = 0; b < cores.size(); ++b) {
        const RowCore& core = cores[b];
        const AttentionTrace& tr = core.trace;
        const std::size_t len = enc.lengths[b];
        auto dctx = out->grad.row_span(b);
        auto hrow = h->value.row_span(b);
        auto dh = dh_all.row_span(b);
        const std::size_t n = tr.window_size();
        std::vector<Real> dalign(n);
        Real dp = 0.0;
        Real dot = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t s = tr.first + k;
          const Var& step = enc.top_steps[enc.step_for(b, s)];
          auto hs = step->value.row_span(b);
          auto dhs = step->grad_ref().row_span(b);
          Real dw = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            dw += dctx[j] * hs[j];
            dhs[j] += tr.weights[k] * dctx[j];
          }
          dalign[k] = dw * core.gauss[k];
          dp += dw * tr.align[k] * core.gauss[k] * (static_cast<Real>(s) - tr.position) / sigma2;
          dot += tr.align[k] * dalign[k];
        }
        std::vector<Real> dg(d, 0.0);
        for (std::size_t k = 0; k < n; ++k) {
          const Real dscore = tr.align[k] * (dalign[k] - dot);
          const Var& step = enc.top_steps[enc.step_for(b, tr.first + k)];
          auto hs = step->value.row_span(b);
          auto dhs = step->grad.row_span(b);
          for (std::size_t j = 0; j < d; ++j) {
            dg[j] += dscore * hs[j];
            dhs[j] += dscore * core.g[j];
          }
        }
        for (std::size_t i = 0; i < d; ++i) {
          auto w = params.w_a.value.row_span(i);
          auto gw = g_wa.row_span(i);
          Real acc = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            acc += w[j] * dg[j];
            gw[j] += hrow[i] * dg[j];
          }
          dh[i] += acc;
        }
        const Real da = dp * static_cast<Real>(len) * core.sig * (1.0 - core.sig);
        for (std::size_t i = 0; i < core.z.size(); ++i) {
          g_vp[i] += da * core.z[i];
          const Real dpre = da * params.v_p.value[i] * (1.0 - core.z[i] * core.z[i]);
          auto w = params.w_p.value.row_span(i);
          auto gw = g_wp.row_span(i);
          for (std::size_t j = 0; j < d; ++j) {
            gw[j] += dpre * hrow[j];
            dh[j] += dpre * w[j];
          }
        }
      }
      params.w_a.grad += g_wa;
      params.w_p.grad += g_wp;
      params.v_p.grad += g_vp;
    });
  }
  return out;
}

Var attentional_hidden(Tape* tape, const Var& h, const std::vector<Var>& contexts,
                       OutputProjection& proj) {
  if (contexts.empty() || contexts.size() != proj.contexts() ||
      proj.w.value.cols() != h->value.cols() * (contexts.size() + 1)) {
    throw DimensionError("attentional_hidden: " + std::to_string(contexts.size()) +
                         " contexts for projection " + proj.w.value.shape_str());
  }
  std::vector<Var> parts;
  parts.reserve(contexts.size() + 1);
  parts.push_back(h);
  parts.insert(parts.end(), contexts.begin(), contexts.end());
  return tanh(tape, linear(tape, concat_cols(tape, parts), proj.w));
}

}  // namespace msnmt
