#include "msnmt/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "msnmt/decoding.hpp"
#include "msnmt/errors.hpp"
#include "msnmt/evaluation.hpp"
#include "msnmt/rng.hpp"
#include "msnmt/synth.hpp"
#include "msnmt/trainer.hpp"

namespace msnmt {

Real GradcheckResult::worst() const {
  Real w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.worst);
  return w;
}

std::vector<std::string> GradcheckResult::failures(Real tolerance) const {
  std::vector<std::string> names;
  for (const auto& e : entries) {
    if (!(e.worst < tolerance)) names.push_back(e.name);
  }
  return names;
}

GradcheckResult run_gradcheck(const GradcheckOptions& opts) {
  ModelConfig cfg = opts.model;
  cfg.validate();
  if (opts.length < 1 || opts.batch < 1) throw ValidationError("gradcheck: length and batch must be >= 1");
  ModelParams params = init_params(cfg, derive_seed(opts.seed, "init"), opts.init_range);

  // Row 0 is full length; the others are shorter so padding is exercised.
  Rng rng(opts.seed, "gradcheck");
  auto draw = [&](std::size_t len, std::size_t vocab) {
    std::vector<int> ids;
    for (std::size_t i = 0; i < len; ++i) {
      ids.push_back(static_cast<int>(kReservedTokens + rng.below(vocab - kReservedTokens)));
    }
    return ids;
  };
  auto length_of = [&](std::size_t row) {
    return row == 0 ? opts.length : 1 + rng.below(opts.length);
  };
  std::vector<Example> examples(opts.batch);
  for (std::size_t b = 0; b < opts.batch; ++b) {
    examples[b].src1 = draw(length_of(b), cfg.src1_vocab);
    if (cfg.multi()) examples[b].src2 = draw(length_of(b), cfg.src2_vocab);
    examples[b].tgt = draw(length_of(b), cfg.tgt_vocab);
  }
  std::vector<const Example*> ptrs;
  for (const auto& e : examples) ptrs.push_back(&e);
  const Batch batch = make_batch(ptrs, cfg.eos_id);

  const bool train_mode = cfg.dropout > 0.0;
  const std::uint64_t step_seed = derive_seed(opts.seed, "step");
  const auto registry = params.registry();
  params.zero_grads();
  {
    Tape tape;
    forward_loss(batch, params, train_mode, step_seed, &tape);
    backward(tape, params);
  }
  if (!opts.corrupt.empty()) {
    Parameter* p = params.find(opts.corrupt);
    if (p == nullptr) throw ArgumentError("gradcheck: no parameter named '" + opts.corrupt + "'");
    for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += 1e-2;
  }
  std::vector<Tensor> analytic;
  for (const Parameter* p : registry) analytic.push_back(p->grad);

  const auto numeric = finite_difference_grad(
      [&] { return forward_loss(batch, params, train_mode, step_seed).total_nll; }, registry,
      opts.epsilon);

  GradcheckResult result;
  for (std::size_t k = 0; k < registry.size(); ++k) {
    GradcheckEntry e;
    e.name = registry[k]->name;
    e.size = registry[k]->value.size();
    for (std::size_t i = 0; i < e.size; ++i) {
      const Real a = analytic[k][i];
      const Real n = numeric[k][i];
      const Real denom = std::max({std::abs(a), std::abs(n), 1e-3});
      e.worst = std::max(e.worst, std::abs(a - n) / denom);
    }
    result.entries.push_back(e);
  }
  return result;
}

namespace {

struct KeySpec {
  std::string name;
  std::string def;  // empty: unset or derived
  std::string help;
  bool flag = false;
};

std::string dashed(std::string s) {
  std::replace(s.begin(), s.end(), '_', '-');
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Flat `key = value` lines; '#' starts a comment.
std::map<std::string, std::string> read_config_file(const std::string& path,
                                                    std::vector<std::string>& errors) {
  std::map<std::string, std::string> values;
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      errors.push_back(path + ":" + std::to_string(lineno) + ": expected key = value");
      continue;
    }
    std::string key = trim(line.substr(0, eq));
    std::replace(key.begin(), key.end(), '-', '_');
    values[key] = trim(line.substr(eq + 1));
  }
  return values;
}

// Holds one subcommand's keys, what the command line set, and the merged view.
class Settings {
 public:
  Settings(CLI::App* sub, std::vector<KeySpec> keys) : keys_(std::move(keys)) {
    sub->add_option("--config", config_path_, "flat key = value file; flags override it");
    for (const auto& k : keys_) {
      const std::string flag = "--" + dashed(k.name);
      if (k.flag) {
        options_[k.name] =
            sub->add_flag(flag + ",!--no-" + dashed(k.name), flags_[k.name], k.help);
      } else {
        options_[k.name] = sub->add_option(flag, cli_[k.name], k.help);
        const bool derived = k.help.find("with attention]") != std::string::npos;
        options_[k.name]->default_str(k.def.empty() ? (derived ? "auto" : "none") : k.def);
      }
    }
  }

  void resolve() {
    std::map<std::string, std::string> file;
    if (!config_path_.empty()) file = read_config_file(config_path_, errors);
    for (const auto& [key, value] : file) {
      const bool known = std::any_of(keys_.begin(), keys_.end(),
                                     [&](const KeySpec& k) { return k.name == key; });
      if (!known) errors.push_back("unknown config key '" + key + "'");
    }
    for (const auto& k : keys_) {
      std::string v = k.def;
      if (options_[k.name]->count() > 0) {
        v = k.flag ? (flags_[k.name] ? "true" : "false") : cli_[k.name];
        explicit_.insert(k.name);
      } else if (auto it = file.find(k.name); it != file.end()) {
        v = it->second;
        explicit_.insert(k.name);
      } else if (k.flag && v.empty()) {
        v = "false";
      }
      values_[k.name] = v;
    }
  }

  bool given(const std::string& key) const { return explicit_.count(key) > 0; }
  bool has(const std::string& key) const { return !values_.at(key).empty(); }
  const std::string& str(const std::string& key) const { return values_.at(key); }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  long long integer(const std::string& key, long long min) {
    const std::string& v = values_.at(key);
    try {
      std::size_t used = 0;
      const long long x = std::stoll(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      if (x < min) {
        errors.push_back(key + ": must be >= " + std::to_string(min) + ", got " + v);
      }
      return x;
    } catch (const std::logic_error&) {
      errors.push_back(key + ": expected an integer, got '" + v + "'");
      return min;
    }
  }

  double real(const std::string& key) {
    const std::string& v = values_.at(key);
    try {
      std::size_t used = 0;
      const double x = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::logic_error&) {
      errors.push_back(key + ": expected a number, got '" + v + "'");
      return 0.0;
    }
  }

  bool boolean(const std::string& key) {
    const std::string& v = values_.at(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    errors.push_back(key + ": expected true or false, got '" + v + "'");
    return false;
  }

  void require(const std::string& key) {
    if (!has(key)) errors.push_back(key + ": required");
  }

  void log(std::ostream& err, const std::string& command) const {
    for (const auto& k : keys_) {
      err << "[config] " << command << "." << k.name << " = "
          << (values_.at(k.name).empty() ? "(unset)" : values_.at(k.name)) << "\n";
    }
  }

  void throw_if_errors() const {
    if (errors.empty()) return;
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw ValidationError(msg);
  }

  std::vector<std::string> errors;

 private:
  std::vector<KeySpec> keys_;
  std::string config_path_;
  std::map<std::string, std::string> cli_;
  std::map<std::string, bool> flags_;
  std::map<std::string, CLI::Option*> options_;
  std::map<std::string, std::string> values_;
  std::set<std::string> explicit_;
};

ModelMode mode_or_error(Settings& s) {
  try {
    return parse_mode(s.str("mode"));
  } catch (const ValidationError& e) {
    s.errors.push_back(e.what());
    return ModelMode::Single;
  }
}

std::vector<KeySpec> model_keys(const std::string& layers, const std::string& hidden) {
  return {
      {"mode", "single", "single | multi-basic | multi-childsum"},
      {"attention", "false", "local-p attention with feed input", true},
      {"layers", layers, "LSTM layers per encoder and decoder"},
      {"hidden", hidden, "hidden and embedding size"},
      {"window", "10", "attention half-width D"},
  };
}

std::vector<KeySpec> train_keys() {
  auto keys = model_keys("4", "1000");
  const std::vector<KeySpec> more = {
      {"dropout", "", "dropout rate [0.2, or 0.3 with attention]"},
      {"epochs", "15", "training epochs"},
      {"lr", "", "initial learning rate [1.0, or 0.7 with attention]"},
      {"halve_after", "10", "halve the learning rate after every epoch past this one"},
      {"clip", "5", "rescale when the per-example gradient norm exceeds this"},
      {"batch_size", "128", "examples per minibatch"},
      {"init_range", "", "uniform init range [0.1, or 0.08 with attention]"},
      {"max_len", "50", "drop training tuples with a side longer than this"},
      {"src_vocab", "50000", "source vocabulary size including 4 reserved tokens"},
      {"tgt_vocab", "50000", "target vocabulary size including 4 reserved tokens"},
      {"train_src1", "", "training source 1"},
      {"train_src2", "", "training source 2 (multi modes)"},
      {"train_tgt", "", "training target"},
      {"dev_src1", "", "dev source 1"},
      {"dev_src2", "", "dev source 2 (multi modes)"},
      {"dev_tgt", "", "dev target"},
      {"out_dir", "", "output directory"},
      {"resume", "", "checkpoint in out_dir to continue from"},
      {"stop_after", "", "stop after this epoch (the schedule still uses epochs)"},
      {"seed", "1", "run seed"},
  };
  keys.insert(keys.end(), more.begin(), more.end());
  return keys;
}

int cmd_train(Settings& s, std::ostream& out, std::ostream& err) {
  TrainSetup setup;
  ModelConfig& m = setup.model;
  TrainConfig& t = setup.train;
  m.mode = mode_or_error(s);
  m.attention = s.boolean("attention");
  m.layers = static_cast<std::size_t>(s.integer("layers", 1));
  m.hidden = static_cast<std::size_t>(s.integer("hidden", 1));
  m.window = static_cast<int>(s.integer("window", 1));
  if (!s.has("dropout")) s.set("dropout", m.attention ? "0.3" : "0.2");
  if (!s.has("lr")) s.set("lr", m.attention ? "0.7" : "1.0");
  if (!s.has("init_range")) s.set("init_range", m.attention ? "0.08" : "0.1");
  m.dropout = s.real("dropout");
  t.epochs = static_cast<int>(s.integer("epochs", 1));
  t.lr0 = s.real("lr");
  t.halve_after_epoch = static_cast<int>(s.integer("halve_after", 1));
  t.clip_threshold = s.real("clip");
  t.batch_size = static_cast<std::size_t>(s.integer("batch_size", 1));
  t.init_range = s.real("init_range");
  t.seed = static_cast<std::uint64_t>(s.integer("seed", 0));
  setup.max_len = static_cast<std::size_t>(s.integer("max_len", 1));
  setup.src_vocab_max = static_cast<std::size_t>(s.integer("src_vocab", 5));
  setup.tgt_vocab_max = static_cast<std::size_t>(s.integer("tgt_vocab", 5));
  if (!(m.dropout >= 0.0 && m.dropout < 1.0)) s.errors.push_back("dropout: must be in [0, 1)");
  if (!(t.lr0 > 0.0)) s.errors.push_back("lr: must be positive");
  if (!(t.clip_threshold > 0.0)) s.errors.push_back("clip: must be positive");
  if (!(t.init_range > 0.0)) s.errors.push_back("init_range: must be positive");
  for (const char* k : {"train_src1", "train_tgt", "dev_src1", "dev_tgt", "out_dir"}) s.require(k);
  if (m.multi()) {
    s.require("train_src2");
    s.require("dev_src2");
  } else {
    for (const char* k : {"train_src2", "dev_src2"}) {
      if (s.has(k)) s.errors.push_back(std::string(k) + ": only used by multi-source modes");
    }
  }
  if (s.has("stop_after")) setup.stop_after_epoch = static_cast<int>(s.integer("stop_after", 1));
  s.log(err, "train");
  s.throw_if_errors();

  setup.train_paths.push_back(s.str("train_src1"));
  setup.dev_paths.push_back(s.str("dev_src1"));
  if (m.multi()) {
    setup.train_paths.push_back(s.str("train_src2"));
    setup.dev_paths.push_back(s.str("dev_src2"));
  }
  setup.train_paths.push_back(s.str("train_tgt"));
  setup.dev_paths.push_back(s.str("dev_tgt"));
  setup.out_dir = s.str("out_dir");
  if (s.has("resume")) setup.resume_from = s.str("resume");
  setup.log = &err;
  // Vocabulary sizes come from the corpus; validate the rest now.
  ModelConfig probe = m;
  probe.src1_vocab = probe.tgt_vocab = kReservedTokens + 1;
  probe.src2_vocab = probe.multi() ? kReservedTokens + 1 : 0;
  probe.validate();
  t.validate();

  const TrainReport report = train(setup);
  out << report.best_checkpoint.string() << "\n";
  return 0;
}

std::filesystem::path resolve_checkpoint(const std::string& arg) {
  std::filesystem::path p = arg;
  if (!std::filesystem::is_directory(p)) return p;
  std::ifstream best(p / "best");
  std::string name;
  if (!(best >> name)) throw IoError("no readable 'best' marker in " + p.string());
  return p / name;
}

int cmd_translate(Settings& s, std::ostream&, std::ostream& err) {
  s.require("checkpoint");
  s.require("src1");
  DecodeOptions o;
  o.beam = static_cast<std::size_t>(s.integer("beam", 1));
  o.max_len = static_cast<std::size_t>(s.integer("max_len", 0));
  o.length_normalize = s.boolean("length_normalize");
  s.integer("seed", 0);
  s.log(err, "translate");
  s.throw_if_errors();

  Translator model = load_translator(resolve_checkpoint(s.str("checkpoint")));
  std::vector<std::filesystem::path> inputs{s.str("src1")};
  if (s.has("src2")) inputs.emplace_back(s.str("src2"));
  std::optional<std::filesystem::path> tsv;
  if (s.has("dump_attention")) {
    if (!model.params.config().attention) {
      throw CompatibilityError("dump_attention: checkpoint has no attention");
    }
    tsv = s.str("dump_attention");
  }
  const std::string output = s.str("output") == "-" ? "/dev/stdout" : s.str("output");
  translate_file(model, inputs, output, o, tsv);
  return 0;
}

int cmd_score(Settings& s, std::ostream& out, std::ostream& err) {
  s.require("hyp");
  s.require("ref");
  const bool lc = s.boolean("lowercase");
  s.integer("seed", 0);
  s.log(err, "score");
  s.throw_if_errors();
  out << format_report(score_files(s.str("hyp"), s.str("ref"), lc)) << "\n";
  return 0;
}

int cmd_gradcheck(Settings& s, std::ostream& out, std::ostream& err) {
  GradcheckOptions o;
  ModelConfig& m = o.model;
  m.mode = mode_or_error(s);
  m.attention = s.boolean("attention");
  m.layers = static_cast<std::size_t>(s.integer("layers", 1));
  m.hidden = static_cast<std::size_t>(s.integer("hidden", 1));
  m.window = static_cast<int>(s.integer("window", 1));
  m.dropout = s.real("dropout");
  const auto vocab = static_cast<std::size_t>(s.integer("vocab", kReservedTokens + 1));
  m.src1_vocab = m.tgt_vocab = vocab;
  m.src2_vocab = m.multi() ? vocab : 0;
  o.length = static_cast<std::size_t>(s.integer("length", 1));
  o.batch = static_cast<std::size_t>(s.integer("batch", 1));
  o.init_range = s.real("init_range");
  o.epsilon = s.real("epsilon");
  o.tolerance = s.real("tolerance");
  o.corrupt = s.str("corrupt_grad");
  o.seed = static_cast<std::uint64_t>(s.integer("seed", 0));
  s.log(err, "gradcheck");
  s.throw_if_errors();

  const GradcheckResult r = run_gradcheck(o);
  char buf[160];
  for (const auto& e : r.entries) {
    std::snprintf(buf, sizeof buf, "%-24s %8zu  %.3e  %s\n", e.name.c_str(), e.size, e.worst,
                  e.worst < o.tolerance ? "ok" : "FAIL");
    out << buf;
  }
  const auto bad = r.failures(o.tolerance);
  std::snprintf(buf, sizeof buf, "worst relative error %.3e (tolerance %.1e)\n", r.worst(),
                o.tolerance);
  out << buf;
  if (bad.empty()) return 0;
  err << "gradcheck failed for:";
  for (const auto& n : bad) err << " " << n;
  err << "\n";
  return exit_code_for(ErrorKind::Numeric);
}

int cmd_synth(Settings& s, std::ostream&, std::ostream& err) {
  SynthOptions o;
  try {
    o.task = parse_synth_task(s.str("task"));
  } catch (const ValidationError& e) {
    s.errors.push_back(e.what());
  }
  s.require("out_dir");
  o.train = static_cast<std::size_t>(s.integer("train", 1));
  o.dev = static_cast<std::size_t>(s.integer("dev", 0));
  o.test = static_cast<std::size_t>(s.integer("test", 0));
  o.words = static_cast<std::size_t>(s.integer("words", 2));
  o.ambiguous = static_cast<std::size_t>(s.integer("ambiguous", 1));
  o.min_len = static_cast<std::size_t>(s.integer("min_len", 1));
  o.max_len = static_cast<std::size_t>(s.integer("max_len", 1));
  o.seed = static_cast<std::uint64_t>(s.integer("seed", 0));
  s.log(err, "synth");
  s.throw_if_errors();
  write_synth(generate_synth(o), s.str("out_dir"));
  err << "[synth] wrote " << o.train << "/" << o.dev << "/" << o.test << " lines to "
      << s.str("out_dir") << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-source neural machine translation"};
  app.name("msnmt");
  app.require_subcommand(1);

  struct Command {
    CLI::App* app;
    std::unique_ptr<Settings> settings;
    int (*run)(Settings&, std::ostream&, std::ostream&);
  };
  std::vector<Command> commands;
  auto add = [&](const char* name, const char* desc, std::vector<KeySpec> keys,
                 int (*run)(Settings&, std::ostream&, std::ostream&)) {
    CLI::App* sub = app.add_subcommand(name, desc);
    commands.push_back({sub, std::make_unique<Settings>(sub, std::move(keys)), run});
  };

  add("train", "train a model", train_keys(), cmd_train);
  add("translate", "decode source file(s) with a checkpoint",
      {{"checkpoint", "", "checkpoint file, or an out dir to use its best checkpoint"},
       {"src1", "", "source 1 file"},
       {"src2", "", "source 2 file (multi modes)"},
       {"output", "-", "output file, - for stdout"},
       {"beam", "8", "beam width"},
       {"max_len", "0", "length cap; 0 means 2 x longer source + 5"},
       {"length_normalize", "true", "rank finished hypotheses by per-token log-probability"},
       {"dump_attention", "", "write attention weights as TSV"},
       {"seed", "1", "run seed (decoding is deterministic)"}},
      cmd_translate);
  add("score", "corpus BLEU of a hypothesis file against one reference",
      {{"hyp", "", "hypothesis file"},
       {"ref", "", "reference file"},
       {"lowercase", "false", "lowercase both sides first", true},
       {"seed", "1", "run seed (scoring is deterministic)"}},
      cmd_score);
  {
    auto keys = model_keys("2", "8");
    const std::vector<KeySpec> more = {
        {"vocab", "20", "vocabulary size of every side"},
        {"length", "5", "longest sequence in the check batch"},
        {"batch", "2", "examples in the check batch"},
        {"dropout", "0", "dropout rate (masks are fixed by the seed)"},
        {"init_range", "0.3", "uniform init range"},
        {"epsilon", "1e-5", "central-difference step"},
        {"tolerance", "1e-4", "largest accepted relative error"},
        {"corrupt_grad", "", "perturb this parameter's analytic gradient (negative control)"},
        {"seed", "1", "run seed"}};
    keys.insert(keys.end(), more.begin(), more.end());
    add("gradcheck", "compare analytic and finite-difference gradients", std::move(keys),
        cmd_gradcheck);
  }
  add("synth", "write a synthetic aligned corpus",
      {{"task", "copy", "copy | triangulate"},
       {"out_dir", "", "output directory"},
       {"train", "500", "training lines"},
       {"dev", "50", "dev lines"},
       {"test", "50", "test lines"},
       {"words", "46", "target word types"},
       {"ambiguous", "10", "triangulate: merged word pairs per source"},
       {"min_len", "3", "shortest sentence"},
       {"max_len", "10", "longest sentence"},
       {"seed", "1", "run seed"}},
      cmd_synth);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  for (auto& c : commands) {
    if (!c.app->parsed()) continue;
    try {
      c.settings->resolve();
      return c.run(*c.settings, out, err);
    } catch (const Error& e) {
      err << "error: " << e.what() << "\n";
      return exit_code_for(e.kind());
    } catch (const std::filesystem::filesystem_error& e) {
      err << "error: " << e.what() << "\n";
      return exit_code_for(ErrorKind::Io);
    }
  }
  return 1;
}

}  // namespace msnmt
