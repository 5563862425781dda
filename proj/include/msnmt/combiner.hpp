#pragma once

#include <string>
#include <vector>

#include "msnmt/recurrent.hpp"

namespace msnmt {

enum class CombineMethod { Basic, ChildSum };

// h = tanh(W_c [h1; h2]), c = c1 + c2.
struct BasicCombinerParams {
  Parameter w_c;  // [d x 2d]

  BasicCombinerParams() = default;
  BasicCombinerParams(const std::string& prefix, std::size_t hidden)
      : w_c(prefix + ".Wc", hidden, 2 * hidden) {}
  std::vector<Parameter*> parameters() { return {&w_c}; }
};

// LSTM-style merge where each incoming cell keeps its own forget gate.
// Matrices prefixed w1 read encoder 1's hidden state, w2 encoder 2's.
struct ChildSumCombinerParams {
  Parameter w1_i, w2_i, w1_f, w2_f, w1_o, w2_o, w1_u, w2_u;  // each [d x d]

  ChildSumCombinerParams() = default;
  ChildSumCombinerParams(const std::string& prefix, std::size_t hidden);
  std::vector<Parameter*> parameters() {
    return {&w1_i, &w2_i, &w1_f, &w2_f, &w1_o, &w2_o, &w1_u, &w2_u};
  }
};

LayerState basic_combine(Tape* tape, const LayerState& s1, const LayerState& s2,
                         BasicCombinerParams& p);

LayerState childsum_combine(Tape* tape, const LayerState& s1, const LayerState& s2,
                            ChildSumCombinerParams& p);

// Per-layer combiner weights; only the vector matching the method is used.
struct CombinerLayers {
  CombineMethod method = CombineMethod::Basic;
  std::vector<BasicCombinerParams> basic;
  std::vector<ChildSumCombinerParams> childsum;

  CombinerLayers() = default;
  CombinerLayers(CombineMethod m, std::size_t layers, std::size_t hidden);
  std::size_t layers() const noexcept {
    return method == CombineMethod::Basic ? basic.size() : childsum.size();
  }
  std::vector<Parameter*> parameters();
};

StateStack combine_stacks(Tape* tape, const StateStack& e1, const StateStack& e2,
                          CombinerLayers& params);

}  // namespace msnmt
