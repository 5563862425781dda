#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "msnmt/data.hpp"
#include "msnmt/model.hpp"

namespace msnmt {

struct DecodeOptions {
  std::size_t beam = 8;
  std::size_t max_len = 0;  // 0 selects 2 x (longer source) + 5
  bool length_normalize = true;
  bool want_traces = false;
};

// Attention traces of one decoder step, one per encoder (second is unused in
// single-source models).
using StepTraces = std::array<AttentionTrace, 2>;

struct DecodeResult {
  std::vector<int> tokens;  // without </s>
  Real log_prob = 0.0;      // includes the </s> step when finished
  Real score = 0.0;         // ranking score (per-token average when normalizing)
  bool finished = false;
  std::vector<StepTraces> traces;  // one entry per decoder step taken
};

// Sources are id sequences in encoder order (already reversed).
DecodeResult beam_decode(ModelParams& params, std::span<const int> src1,
                         std::optional<std::span<const int>> src2, const DecodeOptions& opts);

// Argmax chain; the reference for beam 1.
DecodeResult greedy_decode(ModelParams& params, std::span<const int> src1,
                           std::optional<std::span<const int>> src2, std::size_t max_len);

struct Translator {
  ModelParams params;
  Vocabulary src1;
  Vocabulary src2;  // unused by single-source models
  Vocabulary tgt;
};

// Loads a checkpoint and the vocabularies written next to it, checking their
// hashes against the checkpoint.
Translator load_translator(const std::filesystem::path& checkpoint);

// One output line per input line. The optional attention dump is a TSV with
// columns sentence, target_pos, encoder, source_pos, weight, align.
void translate_file(Translator& model, std::span<const std::filesystem::path> inputs,
                    const std::filesystem::path& output, const DecodeOptions& opts,
                    const std::optional<std::filesystem::path>& attention_tsv = std::nullopt);

}  // namespace msnmt
