#include "msnmt/recurrent.hpp"

#include <cmath>

#include "msnmt/errors.hpp"

namespace msnmt {

LstmParams::LstmParams(const std::string& prefix, std::size_t input_size, std::size_t hidden)
    : w_x(prefix + ".Wx", 4 * hidden, input_size),
      w_h(prefix + ".Wh", 4 * hidden, hidden),
      b(prefix + ".b", 1, 4 * hidden) {}

LayerState zero_state(std::size_t batch, std::size_t hidden) {
  return {make_var(Tensor(batch, hidden)), make_var(Tensor(batch, hidden))};
}

StateStack zero_stack(std::size_t layers, std::size_t batch, std::size_t hidden) {
  StateStack s;
  s.reserve(layers);
  for (std::size_t l = 0; l < layers; ++l) s.push_back(zero_state(batch, hidden));
  return s;
}

namespace {

struct CellCache {
  Tensor gates;   // activated i, f, o, u, [B x 4d]
  Tensor tanh_c;  // tanh(c'), [B x d]
};

}  // namespace

LayerState lstm_cell(Tape* tape, const Var& x, const LayerState& prev, LstmParams& params,
                     std::span<const char> active) {
  const std::size_t d = params.hidden();
  const std::size_t batch = x->value.rows();
  if (x->value.cols() != params.input_size()) {
    throw DimensionError("lstm_cell: input " + x->value.shape_str() + " vs Wx " +
                         params.w_x.value.shape_str());
  }
  if (prev.h->value.rows() != batch || prev.h->value.cols() != d ||
      !prev.c->value.same_shape(prev.h->value)) {
    throw DimensionError("lstm_cell: previous state " + prev.h->value.shape_str() + "/" +
                         prev.c->value.shape_str() + " incompatible with batch " +
                         std::to_string(batch) + " and hidden " + std::to_string(d));
  }
  if (!active.empty() && active.size() != batch) {
    throw DimensionError("lstm_cell: activity mask length does not match batch");
  }

  CellCache cache;
  gemm(x->value, false, params.w_x.value, true, cache.gates);
  gemm(prev.h->value, false, params.w_h.value, true, cache.gates, 1.0, true);

  Tensor h_next(batch, d);
  Tensor c_next(batch, d);
  cache.tanh_c = Tensor(batch, d);
  for (std::size_t r = 0; r < batch; ++r) {
    auto g = cache.gates.row_span(r);
    for (std::size_t j = 0; j < 4 * d; ++j) g[j] += params.b.value[j];
    for (std::size_t j = 0; j < 3 * d; ++j) g[j] = sigmoid(g[j]);
    for (std::size_t j = 3 * d; j < 4 * d; ++j) g[j] = std::tanh(g[j]);
    const bool on = active.empty() || active[r] != 0;
    for (std::size_t j = 0; j < d; ++j) {
      if (!on) {
        c_next(r, j) = prev.c->value(r, j);
        h_next(r, j) = prev.h->value(r, j);
        continue;
      }
      const Real c = g[d + j] * prev.c->value(r, j) + g[j] * g[3 * d + j];
      const Real tc = std::tanh(c);
      c_next(r, j) = c;
      cache.tanh_c(r, j) = tc;
      h_next(r, j) = g[2 * d + j] * tc;
    }
  }

  LayerState next{make_var(std::move(h_next)), make_var(std::move(c_next))};
  if (tape != nullptr) {
    std::vector<char> act(active.begin(), active.end());
    tape->record([x, prev, next, &params, cache = std::move(cache), act = std::move(act), d,
                  batch] {
      if (!next.h->has_grad() && !next.c->has_grad()) return;
      const Tensor* dh = next.h->has_grad() ? &next.h->grad : nullptr;
      const Tensor* dc = next.c->has_grad() ? &next.c->grad : nullptr;
      Tensor& dh_prev = prev.h->grad_ref();
      Tensor& dc_prev = prev.c->grad_ref();
      Tensor dgates(batch, 4 * d);
      for (std::size_t r = 0; r < batch; ++r) {
        const bool on = act.empty() || act[r] != 0;
        auto g = cache.gates.row_span(r);
        auto dg = dgates.row_span(r);
        for (std::size_t j = 0; j < d; ++j) {
          const Real dhv = dh != nullptr ? (*dh)(r, j) : 0.0;
          const Real dcv = dc != nullptr ? (*dc)(r, j) : 0.0;
          if (!on) {
            dh_prev(r, j) += dhv;
            dc_prev(r, j) += dcv;
            continue;
          }
          const Real i = g[j], f = g[d + j], o = g[2 * d + j], u = g[3 * d + j];
          const Real tc = cache.tanh_c(r, j);
          const Real dc_total = dcv + dhv * o * (1.0 - tc * tc);
          dg[j] = dc_total * u * i * (1.0 - i);
          dg[d + j] = dc_total * prev.c->value(r, j) * f * (1.0 - f);
          dg[2 * d + j] = dhv * tc * o * (1.0 - o);
          dg[3 * d + j] = dc_total * i * (1.0 - u * u);
          dc_prev(r, j) += dc_total * f;
        }
      }
      gemm(dgates, true, x->value, false, params.w_x.grad, 1.0, true);
      gemm(dgates, true, prev.h->value, false, params.w_h.grad, 1.0, true);
      add_column_sums(dgates, params.b.grad);
      gemm(dgates, false, params.w_x.value, false, x->grad_ref(), 1.0, true);
      gemm(dgates, false, params.w_h.value, false, dh_prev, 1.0, true);
    });
  }
  return next;
}

StateStack stack_step(Tape* tape, const Var& x, const StateStack& prev,
                      std::span<LstmParams> layers, std::span<const Tensor> dropout_masks,
                      std::span<const char> active) {
  if (prev.size() != layers.size()) {
    throw DimensionError("stack_step: " + std::to_string(prev.size()) + " states for " +
                         std::to_string(layers.size()) + " layers");
  }
  if (!dropout_masks.empty() && dropout_masks.size() != layers.size()) {
    throw DimensionError("stack_step: expected one dropout mask per layer");
  }
  StateStack next;
  next.reserve(layers.size());
  Var input = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (!dropout_masks.empty()) {
      if (!dropout_masks[l].same_shape(input->value)) {
        throw DimensionError("stack_step: dropout mask " + dropout_masks[l].shape_str() +
                             " does not match layer input " + input->value.shape_str());
      }
      input = apply_mask(tape, input, dropout_masks[l]);
    }
    next.push_back(lstm_cell(tape, input, prev[l], layers[l], active));
    input = next.back().h;
  }
  return next;
}

Tensor EncoderOutput::top_seq(std::size_t b) const {
  const std::size_t len = lengths.at(b);
  const std::size_t d = top_steps.front()->value.cols();
  Tensor out(len, d);
  for (std::size_t s = 0; s < len; ++s) {
    auto src = top_steps[step_for(b, s)]->value.row_span(b);
    std::copy(src.begin(), src.end(), out.row_span(s).begin());
  }
  return out;
}

EncoderOutput encode(Tape* tape, const SourceBatch& batch, Parameter& embed_table,
                     std::span<LstmParams> layers, const MaskSource& masks) {
  const std::size_t n = batch.ids.size();
  if (n == 0 || batch.lengths.size() != n) throw ArgumentError("encode: empty batch");
  if (layers.empty()) throw ArgumentError("encode: no layers");
  std::size_t steps = 0;
  for (std::size_t b = 0; b < n; ++b) {
    if (batch.lengths[b] == 0) throw ArgumentError("encode: empty source sequence");
    if (batch.ids[b].size() < batch.lengths[b]) {
      throw DimensionError("encode: row shorter than its recorded length");
    }
    steps = std::max(steps, batch.lengths[b]);
  }
  const std::size_t d = layers.front().hidden();

  EncoderOutput out;
  out.lengths = batch.lengths;
  out.top_steps.reserve(steps);
  StateStack state = zero_stack(layers.size(), n, d);
  std::vector<int> column(n);
  std::vector<char> active(n);
  bool all_active = true;
  for (std::size_t t = 0; t < steps; ++t) {
    all_active = true;
    for (std::size_t b = 0; b < n; ++b) {
      active[b] = t < batch.lengths[b] ? 1 : 0;
      all_active = all_active && active[b] != 0;
      column[b] = t < batch.ids[b].size() ? batch.ids[b][t] : 0;
    }
    Var x = embed(tape, embed_table, column);
    std::vector<Tensor> step_masks;
    if (masks) step_masks = masks(t, n);
    state = stack_step(tape, x, state, layers, step_masks,
                       all_active ? std::span<const char>{} : std::span<const char>(active));
    out.top_steps.push_back(state.back().h);
  }
  out.final = std::move(state);
  return out;
}

}  // namespace msnmt
