#include "msnmt/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

#include "msnmt/errors.hpp"
#include "msnmt/rng.hpp"

namespace msnmt {

void TrainConfig::validate() const {
  std::vector<std::string> problems;
  if (epochs < 1) problems.push_back("epochs must be >= 1");
  if (!(lr0 > 0.0)) problems.push_back("lr must be positive");
  if (halve_after_epoch < 1) problems.push_back("halve_after must be >= 1");
  if (!(clip_threshold > 0.0)) problems.push_back("clip must be positive");
  if (batch_size < 1) problems.push_back("batch_size must be >= 1");
  if (!(init_range > 0.0)) problems.push_back("init_range must be positive");
  if (problems.empty()) return;
  std::string msg = "invalid training configuration:";
  for (const auto& p : problems) msg += "\n  - " + p;
  throw ValidationError(msg);
}

Real lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 1 || epoch > cfg.epochs) {
    throw ArgumentError("lr_at: epoch " + std::to_string(epoch) + " outside 1.." +
                        std::to_string(cfg.epochs));
  }
  if (epoch <= cfg.halve_after_epoch) return cfg.lr0;
  return std::ldexp(cfg.lr0, -(epoch - cfg.halve_after_epoch));
}

ClipResult clip_rescale(std::span<Parameter* const> params, Real threshold) {
  Real sq = 0.0;
  for (const Parameter* p : params) sq += p->grad.squared_norm();
  ClipResult r;
  r.norm = std::sqrt(sq);
  if (!std::isfinite(r.norm)) throw NumericError("gradient norm is not finite");
  if (r.norm > threshold) {
    r.scale = threshold / r.norm;
    for (Parameter* p : params) p->grad *= r.scale;
  }
  return r;
}

void sgd_step(std::span<Parameter* const> params, Real lr) {
  for (Parameter* p : params) {
    Real* v = p->value.data();
    const Real* g = p->grad.data();
    for (std::size_t i = 0; i < p->value.size(); ++i) v[i] -= lr * g[i];
    p->zero_grad();
  }
}

EvalResult evaluate(ModelParams& params, std::span<const Example> examples,
                    std::size_t batch_size) {
  EvalResult r;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    std::vector<const Example*> group;
    for (std::size_t i = start; i < std::min(examples.size(), start + batch_size); ++i) {
      group.push_back(&examples[i]);
    }
    const Batch b = make_batch(group, params.config().eos_id);
    const LossResult loss = forward_loss(b, params, false, 0);
    r.total_nll += loss.total_nll;
    r.tokens += loss.predicted_tokens;
  }
  return r;
}

namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

struct Corpora {
  std::vector<Vocabulary> vocabs;  // one per side
  std::vector<Example> train;
  std::vector<Example> dev;
};

Corpora prepare(const TrainSetup& setup, std::ostream* log) {
  const std::size_t sides = setup.train_paths.size();
  if (sides != setup.model.sources() + 1 || setup.dev_paths.size() != sides) {
    throw ValidationError("mode " + to_string(setup.model.mode) + " needs " +
                          std::to_string(setup.model.sources() + 1) +
                          " train and dev files");
  }
  Corpora c;
  ParallelCorpus train = load_parallel(setup.train_paths, setup.max_len);
  if (train.tuples.empty()) throw ArgumentError("training corpus is empty after filtering");
  if (log != nullptr && train.dropped > 0) {
    *log << "[train] dropped " << train.dropped << " training tuples (empty or longer than "
         << setup.max_len << " tokens)\n";
  }
  for (std::size_t k = 0; k < sides; ++k) {
    std::vector<std::string> lines;
    lines.reserve(train.tuples.size());
    for (const auto& t : train.tuples) lines.push_back(t[k]);
    c.vocabs.push_back(build_vocab(lines, k + 1 == sides ? setup.tgt_vocab_max : setup.src_vocab_max));
  }
  std::vector<const Vocabulary*> vp;
  for (const auto& v : c.vocabs) vp.push_back(&v);
  c.train = make_examples(train, vp);
  ParallelCorpus dev = load_parallel(setup.dev_paths, setup.max_len);
  if (dev.tuples.empty()) throw ArgumentError("dev corpus is empty after filtering");
  c.dev = make_examples(dev, vp);
  return c;
}

std::vector<std::string> read_report_rows(const std::filesystem::path& path, int upto_epoch) {
  std::vector<std::string> rows;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.rfind("epoch", 0) == 0) continue;
    if (std::stoi(line) <= upto_epoch) rows.push_back(line);
  }
  return rows;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

TrainReport train(const TrainSetup& setup) {
  setup.train.validate();
  std::ostream* log = setup.log;
  std::error_code ec;
  std::filesystem::create_directories(setup.out_dir, ec);
  if (ec) throw IoError("cannot create " + setup.out_dir.string() + ": " + ec.message());

  Corpora data = prepare(setup, log);
  ModelConfig mcfg = setup.model;
  mcfg.src1_vocab = data.vocabs[0].size();
  mcfg.src2_vocab = mcfg.multi() ? data.vocabs[1].size() : 0;
  mcfg.tgt_vocab = data.vocabs.back().size();

  Checkpoint meta;
  meta.config = mcfg;
  meta.vocab_hash[0] = data.vocabs[0].hash();
  meta.vocab_hash[1] = mcfg.multi() ? data.vocabs[1].hash() : 0;
  meta.vocab_hash[2] = data.vocabs.back().hash();

  data.vocabs[0].save(setup.out_dir / "src1.vocab");
  if (mcfg.multi()) data.vocabs[1].save(setup.out_dir / "src2.vocab");
  data.vocabs.back().save(setup.out_dir / "tgt.vocab");

  std::optional<ModelParams> loaded;
  int start_epoch = 1;
  Real best_ppl = std::numeric_limits<Real>::infinity();
  TrainReport report;
  std::vector<std::string> rows;
  std::vector<std::string> timing_rows;
  if (setup.resume_from) {
    auto [ck, params] = load_checkpoint(*setup.resume_from);
    if (!(ck.config == mcfg)) {
      throw CompatibilityError("checkpoint configuration does not match the requested model");
    }
    for (int k = 0; k < 3; ++k) {
      if (ck.vocab_hash[k] != meta.vocab_hash[k]) {
        throw CompatibilityError("checkpoint vocabularies differ from the training corpus");
      }
    }
    loaded.emplace(std::move(params));
    start_epoch = static_cast<int>(ck.epoch) + 1;
    rows = read_report_rows(setup.out_dir / "report.tsv", static_cast<int>(ck.epoch));
    timing_rows = read_report_rows(setup.out_dir / "timing.tsv", static_cast<int>(ck.epoch));
    std::ifstream best(setup.out_dir / "best");
    std::string name;
    Real ppl = 0.0;
    if (best >> name >> ppl) {
      best_ppl = ppl;
      report.best_checkpoint = setup.out_dir / name;
    }
  }
  ModelParams params = loaded ? std::move(*loaded)
                              : init_params(mcfg, derive_seed(setup.train.seed, "init"),
                                            setup.train.init_range);
  const auto registry = params.registry();
  params.zero_grads();

  if (log != nullptr) {
    *log << "[train] " << to_string(mcfg.mode) << (mcfg.attention ? "+attention" : "")
         << " L=" << mcfg.layers << " d=" << mcfg.hidden << " vocab=" << mcfg.src1_vocab << "/"
         << mcfg.src2_vocab << "/" << mcfg.tgt_vocab << " params=" << params.parameter_count()
         << " train=" << data.train.size() << " dev=" << data.dev.size() << "\n";
  }

  const int last_epoch = std::min(setup.train.epochs, setup.stop_after_epoch.value_or(setup.train.epochs));
  for (int epoch = start_epoch; epoch <= last_epoch; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr_at(epoch, setup.train);
    const auto batches =
        batchify(data.train, setup.train.batch_size,
                 derive_seed(setup.train.seed, "epoch", static_cast<std::uint64_t>(epoch)));
    Real nll = 0.0;
    std::size_t tokens = 0;
    std::size_t clipped = 0;
    Real norm_sum = 0.0;
    for (std::size_t i = 0; i < batches.size(); ++i) {
      Tape tape;
      const auto loss =
          forward_loss(batches[i], params, true,
                       derive_seed(setup.train.seed, "step", static_cast<std::uint64_t>(epoch), i),
                       &tape);
      backward(tape, params);
      const Real inv = 1.0 / static_cast<Real>(batches[i].size());
      for (Parameter* p : registry) p->grad *= inv;
      const ClipResult clip = clip_rescale(registry, setup.train.clip_threshold);
      sgd_step(registry, rec.lr);
      nll += loss.total_nll;
      tokens += loss.predicted_tokens;
      norm_sum += clip.norm;
      rec.grad_norm_max = std::max(rec.grad_norm_max, clip.norm);
      clipped += clip.scale < 1.0 ? 1 : 0;
      ++rec.steps;
      if (setup.on_step) setup.on_step(epoch, i);
    }
    rec.train_nll = nll / static_cast<Real>(tokens);
    rec.grad_norm_mean = norm_sum / static_cast<Real>(rec.steps);
    rec.grad_scale_rate = static_cast<Real>(clipped) / static_cast<Real>(rec.steps);
    rec.dev_ppl = evaluate(params, data.dev, setup.train.batch_size).perplexity();
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    meta.epoch = static_cast<std::uint32_t>(epoch);
    const std::string name = "checkpoint-epoch" + std::to_string(epoch);
    save_checkpoint(setup.out_dir / name, params, meta);
    if (rec.dev_ppl < best_ppl) {
      best_ppl = rec.dev_ppl;
      report.best_checkpoint = setup.out_dir / name;
      write_text_atomic(setup.out_dir / "best", name + "\t" + fmt("%.17g", best_ppl) + "\n");
    }

    rows.push_back(std::to_string(epoch) + "\t" + fmt("%.8g", rec.lr) + "\t" +
                   fmt("%.8g", rec.train_nll) + "\t" + fmt("%.8g", rec.dev_ppl) + "\t" +
                   fmt("%.6g", rec.grad_scale_rate));
    timing_rows.push_back(std::to_string(epoch) + "\t" + fmt("%.3f", rec.seconds));
    std::string text = "epoch\tlr\ttrain_nll\tdev_ppl\tgrad_scale_rate\n";
    for (const auto& r : rows) text += r + "\n";
    write_text_atomic(setup.out_dir / "report.tsv", text);
    std::string timing = "epoch\tseconds\n";
    for (const auto& r : timing_rows) timing += r + "\n";
    write_text_atomic(setup.out_dir / "timing.tsv", timing);

    if (log != nullptr) {
      *log << "[train] epoch " << epoch << " lr=" << rec.lr << " train_ppl="
           << std::exp(rec.train_nll) << " dev_ppl=" << rec.dev_ppl << " |g|mean="
           << rec.grad_norm_mean << " clipped=" << rec.grad_scale_rate << " ("
           << fmt("%.1f", rec.seconds) << "s)\n";
    }
    report.epochs.push_back(rec);
  }
  return report;
}

}  // namespace msnmt
