#include "msnmt/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "msnmt/errors.hpp"
#include "msnmt/rng.hpp"

namespace msnmt {

std::string to_string(ModelMode mode) {
  switch (mode) {
    case ModelMode::Single:
      return "single";
    case ModelMode::MultiBasic:
      return "multi-basic";
    case ModelMode::MultiChildSum:
      return "multi-childsum";
  }
  return "?";
}

ModelMode parse_mode(std::string_view text) {
  if (text == "single") return ModelMode::Single;
  if (text == "multi-basic") return ModelMode::MultiBasic;
  if (text == "multi-childsum") return ModelMode::MultiChildSum;
  throw ValidationError("mode must be one of single, multi-basic, multi-childsum; got '" +
                        std::string(text) + "'");
}

void ModelConfig::validate() const {
  std::vector<std::string> problems;
  if (layers < 1) problems.push_back("layers must be >= 1");
  if (hidden < 1) problems.push_back("hidden must be >= 1");
  if (attention && window < 1) problems.push_back("window (D) must be >= 1 with attention");
  if (src1_vocab < 1) problems.push_back("source-1 vocabulary is empty");
  if (multi() && src2_vocab < 1) problems.push_back("multi-source modes need a source-2 vocabulary");
  if (tgt_vocab < 1) problems.push_back("target vocabulary is empty");
  if (!(dropout >= 0.0 && dropout < 1.0)) problems.push_back("dropout must lie in [0, 1)");
  const auto in_target = [&](int id) { return id >= 0 && static_cast<std::size_t>(id) < tgt_vocab; };
  if (tgt_vocab >= 1 && (!in_target(bos_id) || !in_target(eos_id))) {
    problems.push_back("start/end symbols fall outside the target vocabulary");
  }
  if (problems.empty()) return;
  std::string msg = "invalid model configuration:";
  for (const auto& p : problems) msg += "\n  - " + p;
  throw ValidationError(msg);
}

ModelParams::ModelParams(const ModelConfig& config) : config_(config) {
  config_.validate();
  const std::size_t d = config.hidden;
  const std::size_t vocab[2] = {config.src1_vocab, config.src2_vocab};
  for (std::size_t k = 0; k < config.sources(); ++k) {
    const std::string src = "src" + std::to_string(k + 1);
    src_embed[k] = Parameter(src + ".embed", vocab[k], d);
    for (std::size_t l = 0; l < config.layers; ++l) {
      encoder[k].emplace_back(src + ".enc.l" + std::to_string(l), d, d);
    }
  }
  tgt_embed = Parameter("tgt.embed", config.tgt_vocab, d);
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::size_t in = (l == 0 && config.attention) ? 2 * d : d;
    decoder.emplace_back("dec.l" + std::to_string(l), in, d);
  }
  if (config.multi()) {
    combiner = CombinerLayers(
        config.mode == ModelMode::MultiBasic ? CombineMethod::Basic : CombineMethod::ChildSum,
        config.layers, d);
  }
  if (config.attention) {
    for (std::size_t k = 0; k < config.sources(); ++k) {
      attn[k] = AttentionParams("attn" + std::to_string(k + 1), d);
    }
    attn_out = OutputProjection("attn.Wc", d, config.sources());
  }
  softmax_w = Parameter("softmax.W", config.tgt_vocab, d);
  softmax_b = Parameter("softmax.b", 1, config.tgt_vocab);
}

std::vector<Parameter*> ModelParams::registry() {
  std::vector<Parameter*> out;
  for (std::size_t k = 0; k < config_.sources(); ++k) {
    out.push_back(&src_embed[k]);
    for (auto& layer : encoder[k])
      for (Parameter* p : layer.parameters()) out.push_back(p);
  }
  out.push_back(&tgt_embed);
  for (auto& layer : decoder)
    for (Parameter* p : layer.parameters()) out.push_back(p);
  for (Parameter* p : combiner.parameters()) out.push_back(p);
  if (config_.attention) {
    for (std::size_t k = 0; k < config_.sources(); ++k)
      for (Parameter* p : attn[k].parameters()) out.push_back(p);
    out.push_back(&attn_out.w);
  }
  out.push_back(&softmax_w);
  out.push_back(&softmax_b);
  return out;
}

std::vector<const Parameter*> ModelParams::registry() const {
  auto ps = const_cast<ModelParams*>(this)->registry();
  return {ps.begin(), ps.end()};
}

Parameter* ModelParams::find(std::string_view name) {
  for (Parameter* p : registry())
    if (p->name == name) return p;
  return nullptr;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : registry()) n += p->value.size();
  return n;
}

void ModelParams::zero_grads() {
  for (Parameter* p : registry()) p->zero_grad();
}

std::size_t expected_parameter_count(const ModelConfig& c) {
  const std::size_t d = c.hidden;
  const std::size_t lstm = 8 * d * d + 4 * d;
  std::size_t n = c.src1_vocab * d + c.layers * lstm;
  if (c.multi()) n += c.src2_vocab * d + c.layers * lstm;
  n += c.tgt_vocab * d;
  const std::size_t first_in = c.attention ? 2 * d : d;
  n += 4 * d * first_in + 4 * d * d + 4 * d + (c.layers - 1) * lstm;
  if (c.mode == ModelMode::MultiBasic) n += c.layers * 2 * d * d;
  if (c.mode == ModelMode::MultiChildSum) n += c.layers * 8 * d * d;
  if (c.attention) n += c.sources() * (2 * d * d + d) + d * (c.sources() + 1) * d;
  n += c.tgt_vocab * d + c.tgt_vocab;
  return n;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed, Real range) {
  if (!(range > 0.0)) throw ArgumentError("init_params: range must be positive");
  ModelParams params(config);
  Rng rng(seed, "init");
  for (Parameter* p : params.registry()) {
    const bool bias = p->name.ends_with(".b");
    for (Real& v : p->value.values()) v = bias ? 0.0 : rng.uniform(-range, range);
    p->zero_grad();
  }
  return params;
}

namespace {

Tensor dropout_mask(Rng& rng, std::size_t rows, std::size_t cols, Real rate) {
  const Real keep = 1.0 - rate;
  Tensor m(rows, cols);
  for (Real& v : m.values()) v = rng.uniform() < keep ? 1.0 / keep : 0.0;
  return m;
}

// Per-row -log p(gold) over active rows; backward writes (p - onehot) into
// the logits gradient.
Real softmax_nll(Tape* tape, const Var& logits, std::vector<int> gold, std::vector<char> active) {
  Tensor probs = softmax(logits->value);
  Real nll = 0.0;
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    if (!active[r]) continue;
    const auto g = static_cast<std::size_t>(gold[r]);
    if (gold[r] < 0 || g >= probs.cols()) {
      throw VocabularyError("target id " + std::to_string(gold[r]) + " outside vocabulary of size " +
                            std::to_string(probs.cols()));
    }
    // log-sum-exp form keeps tiny probabilities exact
    const auto row = logits->value.row_span(r);
    const Real mx = *std::max_element(row.begin(), row.end());
    Real z = 0.0;
    for (Real v : row) z += std::exp(v - mx);
    nll += -(row[g] - mx - std::log(z));
  }
  if (tape != nullptr) {
    tape->record([logits, probs = std::move(probs), gold = std::move(gold),
                  active = std::move(active)] {
      Tensor& dl = logits->grad_ref();
      for (std::size_t r = 0; r < probs.rows(); ++r) {
        if (!active[r]) continue;
        for (std::size_t j = 0; j < probs.cols(); ++j) dl(r, j) += probs(r, j);
        dl(r, static_cast<std::size_t>(gold[r])) -= 1.0;
      }
    });
  }
  return nll;
}

struct StepCore {
  DecoderState next;
  Var out;  // vector fed to the softmax layer
};

StepCore run_step(Tape* tape, ModelParams& params, const EncoderOutput& enc1,
                  const EncoderOutput* enc2, const DecoderState& state,
                  std::span<const int> input_ids, std::span<const Tensor> layer_masks,
                  std::vector<AttentionTrace>* traces) {
  const ModelConfig& cfg = params.config();
  Var x = embed(tape, params.tgt_embed, input_ids);
  if (cfg.attention) x = concat_cols(tape, {x, state.feed});
  StepCore core;
  core.next.stack = stack_step(tape, x, state.stack, params.decoder, layer_masks);
  Var top = core.next.stack.back().h;
  if (!cfg.attention) {
    core.out = top;
    return core;
  }
  std::vector<Var> contexts;
  contexts.push_back(attend(tape, top, enc1, params.attn[0], cfg.window,
                            traces != nullptr ? &traces[0] : nullptr));
  if (enc2 != nullptr) {
    contexts.push_back(attend(tape, top, *enc2, params.attn[1], cfg.window,
                              traces != nullptr ? &traces[1] : nullptr));
  }
  core.out = attentional_hidden(tape, top, contexts, params.attn_out);
  core.next.feed = core.out;
  return core;
}

void check_batch(const Batch& batch, const ModelConfig& cfg) {
  if (batch.size() == 0) throw ArgumentError("forward_loss: empty batch");
  if (batch.src1.ids.size() != batch.size()) {
    throw DimensionError("forward_loss: source-1 rows do not match target rows");
  }
  if (cfg.multi() != batch.has_src2()) {
    throw ArgumentError(cfg.multi() ? "forward_loss: multi-source model needs source-2"
                                    : "forward_loss: single-source model given source-2");
  }
  if (batch.has_src2() && batch.src2.ids.size() != batch.size()) {
    throw DimensionError("forward_loss: source-2 rows do not match target rows");
  }
}

}  // namespace

LossResult forward_loss(const Batch& batch, ModelParams& params, bool train_mode,
                        std::uint64_t rng_seed, Tape* tape) {
  const ModelConfig& cfg = params.config();
  check_batch(batch, cfg);
  const std::size_t n = batch.size();
  const std::size_t d = cfg.hidden;
  const bool dropout = train_mode && cfg.dropout > 0.0;
  Rng rng(rng_seed, "dropout");

  MaskSource enc_masks;
  if (dropout) {
    enc_masks = [&](std::size_t, std::size_t rows) {
      std::vector<Tensor> m;
      for (std::size_t l = 0; l < cfg.layers; ++l) m.push_back(dropout_mask(rng, rows, d, cfg.dropout));
      return m;
    };
  }
  EncoderOutput enc1 = encode(tape, batch.src1, params.src_embed[0], params.encoder[0], enc_masks);
  std::optional<EncoderOutput> enc2;
  DecoderState state;
  if (cfg.multi()) {
    enc2 = encode(tape, batch.src2, params.src_embed[1], params.encoder[1], enc_masks);
    state.stack = combine_stacks(tape, enc1.final, enc2->final, params.combiner);
  } else {
    state.stack = enc1.final;
  }
  if (cfg.attention) state.feed = make_var(Tensor(n, d));

  const std::size_t steps = batch.tgt.width();
  LossResult result;
  std::vector<int> input(n);
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<int> gold(n);
    std::vector<char> active(n);
    for (std::size_t b = 0; b < n; ++b) {
      input[b] = t == 0 ? cfg.bos_id : batch.tgt.ids[b][t - 1];
      gold[b] = batch.tgt.ids[b][t];
      active[b] = batch.tgt.mask[b][t];
      result.predicted_tokens += active[b] ? 1 : 0;
    }
    std::vector<Tensor> masks;
    if (dropout) {
      for (std::size_t l = 0; l < cfg.layers; ++l) {
        masks.push_back(dropout_mask(rng, n, params.decoder[l].input_size(), cfg.dropout));
      }
    }
    StepCore core = run_step(tape, params, enc1, enc2 ? &*enc2 : nullptr, state, input, masks,
                             nullptr);
    Var out = core.out;
    if (dropout) out = apply_mask(tape, out, dropout_mask(rng, n, d, cfg.dropout));
    Var logits = linear(tape, out, params.softmax_w, &params.softmax_b);
    const Real nll = softmax_nll(tape, logits, std::move(gold), std::move(active));
    if (!std::isfinite(nll)) {
      throw NumericError("non-finite loss at decoder step " + std::to_string(t));
    }
    result.total_nll += nll;
    state = std::move(core.next);
  }
  return result;
}

void backward(Tape& tape, ModelParams& params) {
  tape.backward();
  for (const Parameter* p : params.registry()) {
    if (!p->grad.all_finite()) throw NumericError("non-finite gradient in " + p->name);
  }
}

Real perplexity(Real total_nll, std::size_t predicted_tokens) {
  if (predicted_tokens == 0) throw ArgumentError("perplexity: no predicted tokens");
  return std::exp(total_nll / static_cast<Real>(predicted_tokens));
}

EncodedSources encode_sources(ModelParams& params, const SourceBatch& src1,
                              const SourceBatch* src2) {
  const ModelConfig& cfg = params.config();
  if (cfg.multi() && src2 == nullptr) {
    throw ArgumentError("multi-source model needs a second source sentence");
  }
  if (!cfg.multi() && src2 != nullptr) {
    throw ArgumentError("single-source model given a second source sentence");
  }
  EncodedSources out;
  out.enc1 = encode(nullptr, src1, params.src_embed[0], params.encoder[0]);
  if (src2 != nullptr) {
    out.enc2 = encode(nullptr, *src2, params.src_embed[1], params.encoder[1]);
    out.init = combine_stacks(nullptr, out.enc1.final, out.enc2->final, params.combiner);
  } else {
    out.init = out.enc1.final;
  }
  return out;
}

DecoderState initial_decoder_state(const ModelParams& params, const EncodedSources& enc) {
  DecoderState s;
  s.stack = enc.init;
  if (params.config().attention) {
    s.feed = make_var(Tensor(enc.enc1.batch(), params.config().hidden));
  }
  return s;
}

StepOutput decoder_step(ModelParams& params, const EncodedSources& enc, const DecoderState& state,
                        std::span<const int> input_ids, bool want_traces) {
  StepOutput out;
  StepCore core = run_step(nullptr, params, enc.enc1, enc.enc2 ? &*enc.enc2 : nullptr, state,
                           input_ids, {}, want_traces ? out.traces : nullptr);
  Var logits = linear(nullptr, core.out, params.softmax_w, &params.softmax_b);
  Tensor& lp = logits->value;
  for (std::size_t r = 0; r < lp.rows(); ++r) {
    auto row = lp.row_span(r);
    const Real mx = *std::max_element(row.begin(), row.end());
    Real z = 0.0;
    for (Real v : row) z += std::exp(v - mx);
    const Real lse = mx + std::log(z);
    for (Real& v : row) v -= lse;
  }
  out.log_probs = std::move(lp);
  out.next = std::move(core.next);
  return out;
}

namespace {

constexpr char kMagic[8] = {'M', 'S', 'N', 'M', 'T', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint layout assumes a little-endian host");

template <class T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::string& what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw IoError("truncated checkpoint while reading " + what);
  }
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, const std::string& what) {
  const auto n = get<std::uint32_t>(in, what);
  if (n > (1u << 24)) throw IoError("implausible string length in checkpoint (" + what + ")");
  std::string s(n, '\0');
  if (!in.read(s.data(), n)) throw IoError("truncated checkpoint while reading " + what);
  return s;
}

std::string format_real(Real v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string config_text(const ModelConfig& c) {
  std::ostringstream o;
  o << "mode=" << to_string(c.mode) << '\n'
    << "attention=" << (c.attention ? "local-p" : "none") << '\n'
    << "layers=" << c.layers << '\n'
    << "hidden=" << c.hidden << '\n'
    << "src1_vocab=" << c.src1_vocab << '\n'
    << "src2_vocab=" << c.src2_vocab << '\n'
    << "tgt_vocab=" << c.tgt_vocab << '\n'
    << "window=" << c.window << '\n'
    << "dropout=" << format_real(c.dropout) << '\n'
    << "pad_id=" << c.pad_id << '\n'
    << "bos_id=" << c.bos_id << '\n'
    << "eos_id=" << c.eos_id << '\n';
  return o.str();
}

ModelConfig parse_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("malformed checkpoint config line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto need = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw IoError(std::string("checkpoint config lacks ") + key);
    return it->second;
  };
  ModelConfig c;
  try {
    c.mode = parse_mode(need("mode"));
    c.attention = need("attention") == "local-p";
    c.layers = std::stoul(need("layers"));
    c.hidden = std::stoul(need("hidden"));
    c.src1_vocab = std::stoul(need("src1_vocab"));
    c.src2_vocab = std::stoul(need("src2_vocab"));
    c.tgt_vocab = std::stoul(need("tgt_vocab"));
    c.window = std::stoi(need("window"));
    c.dropout = std::stod(need("dropout"));
    c.pad_id = std::stoi(need("pad_id"));
    c.bos_id = std::stoi(need("bos_id"));
    c.eos_id = std::stoi(need("eos_id"));
  } catch (const std::logic_error& e) {
    throw IoError(std::string("malformed checkpoint config: ") + e.what());
  }
  return c;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const Checkpoint& meta) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    put(out, kVersion);
    put_string(out, config_text(params.config()));
    for (std::uint64_t h : meta.vocab_hash) put(out, h);
    put(out, meta.epoch);
    const auto reg = params.registry();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(reg.size()));
    for (const Parameter* p : reg) {
      put_string(out, p->name);
      put<std::uint64_t>(out, p->value.rows());
      put<std::uint64_t>(out, p->value.cols());
      out.write(reinterpret_cast<const char*>(p->value.data()),
                static_cast<std::streamsize>(p->value.size() * sizeof(Real)));
    }
    out.flush();
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

std::pair<Checkpoint, ModelParams> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw IoError(path.string() + " is not a checkpoint");
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint meta;
  meta.config = parse_config_text(get_string(in, "config"));
  for (auto& h : meta.vocab_hash) h = get<std::uint64_t>(in, "vocabulary hash");
  meta.epoch = get<std::uint32_t>(in, "epoch");
  ModelParams params(meta.config);
  const auto count = get<std::uint32_t>(in, "parameter count");
  const auto reg = params.registry();
  if (count != reg.size()) {
    throw IoError("checkpoint holds " + std::to_string(count) + " parameters, configuration expects " +
                  std::to_string(reg.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = get_string(in, "parameter name");
    Parameter* p = params.find(name);
    if (p == nullptr) throw IoError("checkpoint parameter '" + name + "' unknown to configuration");
    const auto rows = get<std::uint64_t>(in, name);
    const auto cols = get<std::uint64_t>(in, name);
    if (rows != p->value.rows() || cols != p->value.cols()) {
      throw IoError("checkpoint parameter '" + name + "' has shape [" + std::to_string(rows) + "x" +
                    std::to_string(cols) + "], expected " + p->value.shape_str());
    }
    if (!in.read(reinterpret_cast<char*>(p->value.data()),
                 static_cast<std::streamsize>(p->value.size() * sizeof(Real)))) {
      throw IoError("truncated checkpoint in parameter '" + name + "'");
    }
  }
  return {meta, std::move(params)};
}

}  // namespace msnmt
