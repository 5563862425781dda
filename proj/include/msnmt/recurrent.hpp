#pragma once

#include <span>
#include <string>
#include <vector>

#include "msnmt/numerics.hpp"
#include "msnmt/tape.hpp"

namespace msnmt {

// Gate blocks are stacked in the order input, forget, output, update.
struct LstmParams {
  Parameter w_x;  // [4d x d_in]
  Parameter w_h;  // [4d x d]
  Parameter b;    // [1 x 4d]

  LstmParams() = default;
  LstmParams(const std::string& prefix, std::size_t input_size, std::size_t hidden);

  std::size_t hidden() const noexcept { return w_h.value.cols(); }
  std::size_t input_size() const noexcept { return w_x.value.cols(); }
  std::vector<Parameter*> parameters() { return {&w_x, &w_h, &b}; }
};

struct LayerState {
  Var h;
  Var c;
};

using StateStack = std::vector<LayerState>;

LayerState zero_state(std::size_t batch, std::size_t hidden);
StateStack zero_stack(std::size_t layers, std::size_t batch, std::size_t hidden);

// One LSTM step over a batch. Rows whose `active` flag is 0 carry `prev`
// through unchanged (padding inside a right-padded batch).
LayerState lstm_cell(Tape* tape, const Var& x, const LayerState& prev, LstmParams& params,
                     std::span<const char> active = {});

// Bottom-up application of lstm_cell. Masks, when given, scale each layer's
// input (non-recurrent connections only).
StateStack stack_step(Tape* tape, const Var& x, const StateStack& prev,
                      std::span<LstmParams> layers, std::span<const Tensor> dropout_masks = {},
                      std::span<const char> active = {});

// Supplies a fresh per-layer dropout mask set for each time step; returns an
// empty vector when dropout is off.
using MaskSource = std::function<std::vector<Tensor>(std::size_t step, std::size_t batch)>;

// Padded batch of source ids, already reversed per sentence and right-padded.
struct SourceBatch {
  std::vector<std::vector<int>> ids;  // [B][T_max]
  std::vector<std::size_t> lengths;   // true lengths
};

struct EncoderOutput {
  StateStack final;
  // top_steps[j] holds the top-layer h after consuming reversed position j.
  std::vector<Var> top_steps;
  std::vector<std::size_t> lengths;

  std::size_t batch() const noexcept { return lengths.size(); }
  // Step index holding original (unreversed) position s of example b.
  std::size_t step_for(std::size_t b, std::size_t s) const { return lengths[b] - 1 - s; }
  // Top-layer hidden sequence of example b in original word order, [S_b x d].
  Tensor top_seq(std::size_t b) const;
};

EncoderOutput encode(Tape* tape, const SourceBatch& batch, Parameter& embed_table,
                     std::span<LstmParams> layers, const MaskSource& masks = {});

}  // namespace msnmt
