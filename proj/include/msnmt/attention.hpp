#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "msnmt/numerics.hpp"
#include "msnmt/recurrent.hpp"
#include "msnmt/tape.hpp"

namespace msnmt {

// Local attention with a predicted centre position. One set per encoder.
struct AttentionParams {
  Parameter w_p;  // [d x d]
  Parameter v_p;  // [1 x d]
  Parameter w_a;  // [d x d], score(h_t, h_s) = h_t^T W_a h_s

  AttentionParams() = default;
  AttentionParams(const std::string& prefix, std::size_t hidden)
      : w_p(prefix + ".Wp", hidden, hidden),
        v_p(prefix + ".vp", 1, hidden),
        w_a(prefix + ".Wa", hidden, hidden) {}
  std::vector<Parameter*> parameters() { return {&w_p, &v_p, &w_a}; }
};

// W_c of the attentional layer: [d x 2d] for one source, [d x 3d] for two.
struct OutputProjection {
  Parameter w;

  OutputProjection() = default;
  OutputProjection(const std::string& name, std::size_t hidden, std::size_t contexts)
      : w(name, hidden, (contexts + 1) * hidden) {}
  std::size_t contexts() const noexcept {
    return w.value.rows() == 0 ? 0 : w.value.cols() / w.value.rows() - 1;
  }
};

struct AttentionTrace {
  Real position = 0.0;     // p_t
  std::size_t first = 0;   // window start, inclusive
  std::size_t last = 0;    // window end, inclusive
  std::vector<Real> align;    // softmax of scores over the window
  std::vector<Real> weights;  // align times the Gaussian factor, a_t(s)
  Tensor context;             // [1 x d]

  std::size_t window_size() const noexcept { return last - first + 1; }
};

// p_t = S * sigmoid(v_p^T tanh(W_p h_t)); `h` is [1 x d].
Real predict_position(const Tensor& h, const AttentionParams& params, std::size_t source_len);

// Window membership uses floor(p_t) clamped to the sentence; the Gaussian
// uses the real-valued p_t with sigma = D / 2. `top_seq` is [S x d].
AttentionTrace window_weights(const Tensor& h, const Tensor& top_seq, Real position, int radius,
                              const Tensor& w_a);

Tensor context_vector(const AttentionTrace& trace, const Tensor& top_seq);

// tanh(W_c [h_t; c_1; ...]).
Tensor attentional_hidden(const Tensor& h, std::span<const Tensor> contexts,
                          const OutputProjection& proj);

struct MultiAttendResult {
  Tensor h_tilde;
  AttentionTrace trace1;
  AttentionTrace trace2;
};

MultiAttendResult multi_attend(const Tensor& h, const Tensor& enc1_seq, const Tensor& enc2_seq,
                               const AttentionParams& params1, const AttentionParams& params2,
                               const OutputProjection& proj, int radius);

// Batched, tape-aware form used by the model. Reads the top encoder layer,
// one window per batch row. Traces are filled only when `traces` is non-null.
Var attend(Tape* tape, const Var& h, const EncoderOutput& enc, AttentionParams& params,
           int radius, std::vector<AttentionTrace>* traces = nullptr);

Var attentional_hidden(Tape* tape, const Var& h, const std::vector<Var>& contexts,
                       OutputProjection& proj);

}  // namespace msnmt
