#include "msnmt/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>

#include "msnmt/errors.hpp"

namespace msnmt {

namespace {

SourceBatch single_row(std::span<const int> ids) {
  if (ids.empty()) throw ArgumentError("decode: empty source sentence");
  SourceBatch b;
  b.ids.emplace_back(ids.begin(), ids.end());
  b.lengths.push_back(ids.size());
  return b;
}

EncoderOutput repeat_rows(const EncoderOutput& enc, std::size_t n) {
  EncoderOutput out;
  out.lengths.assign(n, enc.lengths.front());
  out.top_steps.reserve(enc.top_steps.size());
  for (const Var& step : enc.top_steps) {
    Tensor t(n, step->value.cols());
    for (std::size_t r = 0; r < n; ++r) {
      auto src = step->value.row_span(0);
      std::copy(src.begin(), src.end(), t.row_span(r).begin());
    }
    out.top_steps.push_back(make_var(std::move(t)));
  }
  return out;
}

// Encoder outputs replicated to each live-hypothesis count seen so far.
class EncoderCache {
 public:
  explicit EncoderCache(EncodedSources base) : base_(std::move(base)) {}
  const EncodedSources& base() const { return base_; }
  const EncodedSources& rows(std::size_t n) {
    auto it = cache_.find(n);
    if (it != cache_.end()) return it->second;
    EncodedSources e;
    e.enc1 = repeat_rows(base_.enc1, n);
    if (base_.enc2) e.enc2 = repeat_rows(*base_.enc2, n);
    return cache_.emplace(n, std::move(e)).first->second;
  }

 private:
  EncodedSources base_;
  std::map<std::size_t, EncodedSources> cache_;
};

struct Hyp {
  std::vector<int> tokens;
  Real log_prob = 0.0;
  std::vector<Tensor> h, c;  // per layer, [1 x d]
  Tensor feed;               // [1 x d] or empty
  std::vector<StepTraces> traces;
};

Hyp root_hyp(const ModelParams& params, const EncodedSources& enc) {
  const DecoderState s = initial_decoder_state(params, enc);
  Hyp h;
  for (const auto& layer : s.stack) {
    h.h.push_back(layer.h->value);
    h.c.push_back(layer.c->value);
  }
  if (s.feed) h.feed = s.feed->value;
  return h;
}

DecoderState gather(const std::vector<const Hyp*>& hyps) {
  DecoderState s;
  const std::size_t layers = hyps.front()->h.size();
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t d = hyps.front()->h[l].cols();
    Tensor H(hyps.size(), d), C(hyps.size(), d);
    for (std::size_t r = 0; r < hyps.size(); ++r) {
      std::copy(hyps[r]->h[l].values().begin(), hyps[r]->h[l].values().end(), H.row_span(r).begin());
      std::copy(hyps[r]->c[l].values().begin(), hyps[r]->c[l].values().end(), C.row_span(r).begin());
    }
    s.stack.push_back({make_var(std::move(H)), make_var(std::move(C))});
  }
  if (!hyps.front()->feed.empty()) {
    Tensor F(hyps.size(), hyps.front()->feed.cols());
    for (std::size_t r = 0; r < hyps.size(); ++r) {
      std::copy(hyps[r]->feed.values().begin(), hyps[r]->feed.values().end(),
                F.row_span(r).begin());
    }
    s.feed = make_var(std::move(F));
  }
  return s;
}

Tensor row_of(const Tensor& t, std::size_t r) { return Tensor::row(t.row_span(r)); }

bool emittable(int id, const ModelConfig& cfg) {
  if (id == cfg.eos_id) return true;
  return id != cfg.pad_id && id != cfg.bos_id;
}

std::size_t default_max_len(std::span<const int> src1, std::optional<std::span<const int>> src2) {
  std::size_t longest = src1.size();
  if (src2) longest = std::max(longest, src2->size());
  return 2 * longest + 5;
}

Real rank_score(const Hyp& h, bool finished, bool normalize) {
  if (!normalize) return h.log_prob;
  const std::size_t steps = h.tokens.size() + (finished ? 1 : 0);
  return steps == 0 ? h.log_prob : h.log_prob / static_cast<Real>(steps);
}

DecodeResult to_result(Hyp&& h, bool finished, bool normalize) {
  DecodeResult r;
  r.score = rank_score(h, finished, normalize);
  r.log_prob = h.log_prob;
  r.finished = finished;
  r.tokens = std::move(h.tokens);
  r.traces = std::move(h.traces);
  return r;
}

struct Candidate {
  std::size_t parent;
  int token;
  Real log_prob;
};

}  // namespace

DecodeResult beam_decode(ModelParams& params, std::span<const int> src1,
                         std::optional<std::span<const int>> src2, const DecodeOptions& opts) {
  const ModelConfig& cfg = params.config();
  if (opts.beam < 1) throw ArgumentError("beam_decode: beam must be >= 1");
  if (cfg.multi() && !src2) throw ArgumentError("multi-source model needs a second source");
  if (!cfg.multi() && src2) throw ArgumentError("single-source model given a second source");
  const std::size_t max_len = opts.max_len > 0 ? opts.max_len : default_max_len(src1, src2);

  const SourceBatch b1 = single_row(src1);
  std::optional<SourceBatch> b2;
  if (src2) b2 = single_row(*src2);
  EncoderCache encoders(encode_sources(params, b1, b2 ? &*b2 : nullptr));

  std::vector<Hyp> live;
  live.push_back(root_hyp(params, encoders.base()));
  std::vector<Hyp> finished;

  for (std::size_t t = 0; t <= max_len && !live.empty(); ++t) {
    std::vector<const Hyp*> rows;
    for (const auto& h : live) rows.push_back(&h);
    std::vector<int> inputs;
    for (const auto& h : live) inputs.push_back(h.tokens.empty() ? cfg.bos_id : h.tokens.back());
    StepOutput step = decoder_step(params, encoders.rows(live.size()), gather(rows), inputs,
                                   opts.want_traces);

    std::vector<Candidate> cands;
    for (std::size_t r = 0; r < live.size(); ++r) {
      std::vector<Candidate> row;
      for (std::size_t v = 0; v < step.log_probs.cols(); ++v) {
        const int id = static_cast<int>(v);
        if (!emittable(id, cfg)) continue;
        if (t == max_len && id != cfg.eos_id) continue;  // length cap
        row.push_back({r, id, live[r].log_prob + step.log_probs(r, v)});
      }
      const std::size_t keep = std::min(opts.beam, row.size());
      std::partial_sort(row.begin(), row.begin() + static_cast<long>(keep), row.end(),
                        [](const Candidate& a, const Candidate& b) {
                          return a.log_prob > b.log_prob ||
                                 (a.log_prob == b.log_prob && a.token < b.token);
                        });
      cands.insert(cands.end(), row.begin(), row.begin() + static_cast<long>(keep));
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      return a.log_prob > b.log_prob;
    });
    if (cands.size() > opts.beam) cands.resize(opts.beam);

    std::vector<Hyp> next;
    for (const Candidate& cand : cands) {
      const Hyp& parent = live[cand.parent];
      Hyp h;
      h.tokens = parent.tokens;
      h.log_prob = cand.log_prob;
      h.traces = parent.traces;
      if (opts.want_traces) {
        StepTraces st;
        if (!step.traces[0].empty()) st[0] = step.traces[0].at(cand.parent);
        if (!step.traces[1].empty()) st[1] = step.traces[1].at(cand.parent);
        h.traces.push_back(std::move(st));
      }
      if (cand.token == cfg.eos_id) {
        finished.push_back(std::move(h));
        continue;
      }
      h.tokens.push_back(cand.token);
      for (std::size_t l = 0; l < step.next.stack.size(); ++l) {
        h.h.push_back(row_of(step.next.stack[l].h->value, cand.parent));
        h.c.push_back(row_of(step.next.stack[l].c->value, cand.parent));
      }
      if (step.next.feed) h.feed = row_of(step.next.feed->value, cand.parent);
      next.push_back(std::move(h));
    }
    live = std::move(next);
  }

  auto better = [&](const Hyp& a, const Hyp& b, bool done) {
    return rank_score(a, done, opts.length_normalize) > rank_score(b, done, opts.length_normalize);
  };
  if (!finished.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < finished.size(); ++i)
      if (better(finished[i], finished[best], true)) best = i;
    return to_result(std::move(finished[best]), true, opts.length_normalize);
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < live.size(); ++i)
    if (better(live[i], live[best], false)) best = i;
  return to_result(std::move(live[best]), false, opts.length_normalize);
}

DecodeResult greedy_decode(ModelParams& params, std::span<const int> src1,
                           std::optional<std::span<const int>> src2, std::size_t max_len) {
  const ModelConfig& cfg = params.config();
  if (max_len == 0) max_len = default_max_len(src1, src2);
  const SourceBatch b1 = single_row(src1);
  std::optional<SourceBatch> b2;
  if (src2) b2 = single_row(*src2);
  const EncodedSources enc = encode_sources(params, b1, b2 ? &*b2 : nullptr);
  DecoderState state = initial_decoder_state(params, enc);
  DecodeResult r;
  int prev = cfg.bos_id;
  for (std::size_t t = 0; t <= max_len; ++t) {
    const int input[] = {prev};
    StepOutput step = decoder_step(params, enc, state, input, false);
    int arg = -1;
    Real best = -std::numeric_limits<Real>::infinity();
    for (std::size_t v = 0; v < step.log_probs.cols(); ++v) {
      const int id = static_cast<int>(v);
      if (!emittable(id, cfg) || (t == max_len && id != cfg.eos_id)) continue;
      if (step.log_probs(0, v) > best) {
        best = step.log_probs(0, v);
        arg = id;
      }
    }
    r.log_prob += best;
    if (arg == cfg.eos_id) {
      r.finished = true;
      break;
    }
    r.tokens.push_back(arg);
    prev = arg;
    state = std::move(step.next);
  }
  const std::size_t steps = r.tokens.size() + (r.finished ? 1 : 0);
  r.score = r.log_prob / static_cast<Real>(std::max<std::size_t>(steps, 1));
  return r;
}

Translator load_translator(const std::filesystem::path& checkpoint) {
  auto [meta, params] = load_checkpoint(checkpoint);
  const auto dir = checkpoint.parent_path();
  auto load_checked = [&](const char* name, std::uint64_t expected) {
    Vocabulary v = Vocabulary::load(dir / name);
    if (v.hash() != expected) {
      throw CompatibilityError(std::string("vocabulary ") + (dir / name).string() +
                               " does not match the checkpoint");
    }
    return v;
  };
  Translator t{std::move(params), {}, {}, {}};
  t.src1 = load_checked("src1.vocab", meta.vocab_hash[0]);
  if (meta.config.multi()) t.src2 = load_checked("src2.vocab", meta.vocab_hash[1]);
  t.tgt = load_checked("tgt.vocab", meta.vocab_hash[2]);
  return t;
}

void translate_file(Translator& model, std::span<const std::filesystem::path> inputs,
                    const std::filesystem::path& output, const DecodeOptions& opts,
                    const std::optional<std::filesystem::path>& attention_tsv) {
  const ModelConfig& cfg = model.params.config();
  if (inputs.size() != cfg.sources()) {
    throw CompatibilityError("model " + to_string(cfg.mode) + " expects " +
                             std::to_string(cfg.sources()) + " source file(s), got " +
                             std::to_string(inputs.size()));
  }
  std::vector<std::vector<std::string>> sides;
  for (const auto& p : inputs) sides.push_back(read_lines(p));
  if (sides.size() == 2 && sides[0].size() != sides[1].size()) {
    throw AlignmentError("source files differ in line count: " + std::to_string(sides[0].size()) +
                         " vs " + std::to_string(sides[1].size()));
  }
  std::ofstream out(output, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + output.string());
  std::ofstream tsv;
  DecodeOptions o = opts;
  if (attention_tsv) {
    tsv.open(*attention_tsv, std::ios::binary | std::ios::trunc);
    if (!tsv) throw IoError("cannot write " + attention_tsv->string());
    tsv << "sentence\ttarget_pos\tencoder\tsource_pos\tweight\talign\n";
    o.want_traces = true;
  }
  for (std::size_t i = 0; i < sides[0].size(); ++i) {
    const auto s1 = encode_line(sides[0][i], model.src1, true);
    std::vector<int> s2;
    if (sides.size() == 2) s2 = encode_line(sides[1][i], model.src2, true);
    if (s1.empty() || (sides.size() == 2 && s2.empty())) {
      out << '\n';
      continue;
    }
    const DecodeResult r =
        beam_decode(model.params, s1,
                    sides.size() == 2 ? std::optional<std::span<const int>>(s2) : std::nullopt, o);
    const auto words = decode_ids(r.tokens, model.tgt);
    for (std::size_t w = 0; w < words.size(); ++w) out << (w ? " " : "") << words[w];
    out << '\n';
    if (tsv.is_open()) {
      char buf[128];
      for (std::size_t t = 0; t < r.traces.size(); ++t) {
        for (std::size_t e = 0; e < cfg.sources(); ++e) {
          const AttentionTrace& tr = r.traces[t][e];
          for (std::size_t k = 0; k < tr.weights.size(); ++k) {
            std::snprintf(buf, sizeof buf, "%zu\t%zu\t%zu\t%zu\t%.6g\t%.6g\n", i, t, e + 1,
                          tr.first + k, tr.weights[k], tr.align[k]);
            tsv << buf;
          }
        }
      }
    }
  }
  if (!out) throw IoError("failed writing " + output.string());
}

}  // namespace msnmt
