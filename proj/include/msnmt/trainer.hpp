#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "msnmt/model.hpp"

namespace msnmt {

struct TrainConfig {
  int epochs = 15;
  Real lr0 = 1.0;            // 0.7 for attention models
  int halve_after_epoch = 10;
  Real clip_threshold = 5.0;
  std::size_t batch_size = 128;
  Real init_range = 0.1;     // 0.08 for attention models
  std::uint64_t seed = 1;

  void validate() const;
};

// lr0 through halve_after_epoch, then halved at every later epoch boundary.
Real lr_at(int epoch, const TrainConfig& cfg);

struct ClipResult {
  Real norm = 0.0;   // global L2 norm before rescaling
  Real scale = 1.0;  // factor applied to every gradient
};

// Rescales all gradients jointly so that their global norm is at most threshold.
ClipResult clip_rescale(std::span<Parameter* const> params, Real threshold);

// value -= lr * grad, then grad = 0.
void sgd_step(std::span<Parameter* const> params, Real lr);

struct EpochRecord {
  int epoch = 0;
  Real lr = 0.0;
  Real train_nll = 0.0;  // per predicted token, dropout active
  Real dev_ppl = 0.0;
  Real grad_scale_rate = 0.0;  // fraction of steps where clipping fired
  Real grad_norm_mean = 0.0;
  Real grad_norm_max = 0.0;
  std::size_t steps = 0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::filesystem::path best_checkpoint;
};

struct TrainSetup {
  ModelConfig model;  // vocabulary sizes are filled in from the corpus
  TrainConfig train;
  std::vector<std::filesystem::path> train_paths;  // src1[, src2], tgt
  std::vector<std::filesystem::path> dev_paths;
  std::filesystem::path out_dir;
  std::size_t max_len = 50;
  std::size_t src_vocab_max = 50000;
  std::size_t tgt_vocab_max = 50000;
  // Continue from this checkpoint (written by an earlier run into out_dir).
  std::optional<std::filesystem::path> resume_from;
  // Stop after this epoch even if cfg.epochs is larger; the schedule still
  // uses cfg.epochs.
  std::optional<int> stop_after_epoch;
  std::ostream* log = nullptr;
  std::function<void(int epoch, std::size_t step)> on_step;
};

struct EvalResult {
  Real total_nll = 0.0;
  std::size_t tokens = 0;
  Real perplexity() const { return msnmt::perplexity(total_nll, tokens); }
};

// Eval-mode loss over examples in their given order.
EvalResult evaluate(ModelParams& params, std::span<const Example> examples,
                    std::size_t batch_size);

// Reads corpora, builds and saves vocabularies, trains, and writes
// checkpoint-epochN, `best`, report.tsv and timing.tsv into out_dir.
TrainReport train(const TrainSetup& setup);

}  // namespace msnmt
