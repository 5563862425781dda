#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msnmt/attention.hpp"
#include "msnmt/combiner.hpp"
#include "msnmt/data.hpp"
#include "msnmt/recurrent.hpp"

namespace msnmt {

enum class ModelMode { Single, MultiBasic, MultiChildSum };

std::string to_string(ModelMode mode);
ModelMode parse_mode(std::string_view text);

struct ModelConfig {
  ModelMode mode = ModelMode::Single;
  bool attention = false;
  std::size_t layers = 4;
  std::size_t hidden = 1000;
  std::size_t src1_vocab = 0;
  std::size_t src2_vocab = 0;
  std::size_t tgt_vocab = 0;
  int window = 10;  // D
  Real dropout = 0.2;
  int pad_id = kPadId;
  int bos_id = kBosId;
  int eos_id = kEosId;

  bool multi() const noexcept { return mode != ModelMode::Single; }
  std::size_t sources() const noexcept { return multi() ? 2 : 1; }
  // Throws ValidationError listing every violated constraint.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

class ModelParams {
 public:
  explicit ModelParams(const ModelConfig& config);

  const ModelConfig& config() const noexcept { return config_; }

  // Every learned tensor, each exactly once, in a fixed order.
  std::vector<Parameter*> registry();
  std::vector<const Parameter*> registry() const;
  Parameter* find(std::string_view name);
  std::size_t parameter_count() const;
  void zero_grads();

  Parameter src_embed[2];
  Parameter tgt_embed;
  std::vector<LstmParams> encoder[2];
  std::vector<LstmParams> decoder;
  CombinerLayers combiner;
  AttentionParams attn[2];
  OutputProjection attn_out;
  Parameter softmax_w;  // [V_tgt x d]
  Parameter softmax_b;  // [1 x V_tgt]

 private:
  ModelConfig config_;
};

// Closed-form count of learned scalars for a configuration.
std::size_t expected_parameter_count(const ModelConfig& config);

// Weights i.i.d. uniform in [-range, range]; bias vectors zero.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed, Real range);

struct LossResult {
  Real total_nll = 0.0;
  std::size_t predicted_tokens = 0;
};

// Teacher-forced negative log-likelihood summed over every unmasked target
// position. With a tape, the backward pass for this batch is recorded.
LossResult forward_loss(const Batch& batch, ModelParams& params, bool train_mode,
                        std::uint64_t rng_seed, Tape* tape = nullptr);

// Replays the tape with d(total_nll) = 1; gradients are batch sums.
void backward(Tape& tape, ModelParams& params);

Real perplexity(Real total_nll, std::size_t predicted_tokens);

// Inference-side pieces shared with the decoder.
struct EncodedSources {
  EncoderOutput enc1;
  std::optional<EncoderOutput> enc2;
  StateStack init;
};

struct DecoderState {
  StateStack stack;
  Var feed;  // previous attentional hidden vector; null without attention
};

struct StepOutput {
  Tensor log_probs;  // [B x V_tgt]
  DecoderState next;
  std::vector<AttentionTrace> traces[2];
};

EncodedSources encode_sources(ModelParams& params, const SourceBatch& src1,
                              const SourceBatch* src2);
DecoderState initial_decoder_state(const ModelParams& params, const EncodedSources& enc);
StepOutput decoder_step(ModelParams& params, const EncodedSources& enc, const DecoderState& state,
                        std::span<const int> input_ids, bool want_traces);

// Checkpoints: versioned binary with config, vocabulary hashes, the epoch
// counter and every named parameter. Written to a temp file then renamed.
struct Checkpoint {
  ModelConfig config;
  std::uint64_t vocab_hash[3] = {0, 0, 0};  // src1, src2, tgt
  std::uint32_t epoch = 0;
};

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const Checkpoint& meta);
// Returns metadata and parameters; throws IoError on malformed input.
std::pair<Checkpoint, ModelParams> load_checkpoint(const std::filesystem::path& path);

}  // namespace msnmt
