#include "msnmt/synth.hpp"

#include <fstream>

#include "msnmt/data.hpp"
#include "msnmt/errors.hpp"
#include "msnmt/rng.hpp"

namespace msnmt {

SynthTask parse_synth_task(const std::string& s) {
  if (s == "copy") return SynthTask::Copy;
  if (s == "triangulate") return SynthTask::Triangulate;
  throw ValidationError("unknown synth task '" + s + "' (expected copy or triangulate)");
}

void SynthOptions::validate() const {
  std::vector<std::string> problems;
  if (train == 0) problems.push_back("train must be >= 1");
  if (words < 2) problems.push_back("words must be >= 2");
  if (min_len < 1 || min_len > max_len) problems.push_back("need 1 <= min_len <= max_len");
  if (task == SynthTask::Triangulate && 4 * ambiguous > words) {
    problems.push_back("triangulate needs words >= 4 * ambiguous");
  }
  if (task == SynthTask::Triangulate && ambiguous == 0) problems.push_back("ambiguous must be >= 1");
  if (problems.empty()) return;
  std::string msg = "invalid synth options:";
  for (const auto& p : problems) msg += "\n  - " + p;
  throw ValidationError(msg);
}

namespace {

struct Lexicon {
  std::vector<std::string> tgt, src1, src2;  // indexed by target word
};

Lexicon make_lexicon(const SynthOptions& o) {
  Lexicon lx;
  for (std::size_t i = 0; i < o.words; ++i) {
    const std::string w = std::to_string(i);
    if (o.task == SynthTask::Copy) {
      lx.tgt.push_back("w" + w);
      lx.src1.push_back("w" + w);
      lx.src2.push_back("w" + w);
      continue;
    }
    lx.tgt.push_back("e" + w);
    const std::size_t k = o.ambiguous;
    lx.src1.push_back(i < 2 * k ? "a" + std::to_string(i / 2) : "f" + w);
    const bool merged2 = i >= 2 * k && i < 4 * k;
    lx.src2.push_back(merged2 ? "b" + std::to_string((i - 2 * k) / 2) : "g" + w);
  }
  return lx;
}

SynthLine draw_line(const Lexicon& lx, const SynthOptions& o, Rng& rng) {
  const std::size_t len = o.min_len + rng.below(o.max_len - o.min_len + 1);
  SynthLine line;
  for (std::size_t t = 0; t < len; ++t) {
    const std::size_t w = rng.below(lx.tgt.size());
    const char* sep = t == 0 ? "" : " ";
    line.tgt += sep + lx.tgt[w];
    line.src1 += sep + lx.src1[w];
    line.src2 += sep + lx.src2[w];
  }
  return line;
}

void write_side(const std::vector<SynthLine>& lines, std::string SynthLine::*side,
                const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& l : lines) out << l.*side << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

SynthCorpus generate_synth(const SynthOptions& opts) {
  opts.validate();
  const Lexicon lx = make_lexicon(opts);
  Rng rng(opts.seed, "synth");
  SynthCorpus c;
  for (std::size_t i = 0; i < opts.train; ++i) c.train.push_back(draw_line(lx, opts, rng));
  for (std::size_t i = 0; i < opts.dev; ++i) c.dev.push_back(draw_line(lx, opts, rng));
  for (std::size_t i = 0; i < opts.test; ++i) c.test.push_back(draw_line(lx, opts, rng));
  return c;
}

void write_synth(const SynthCorpus& corpus, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const std::pair<const char*, const std::vector<SynthLine>*> splits[] = {
      {"train", &corpus.train}, {"dev", &corpus.dev}, {"test", &corpus.test}};
  for (const auto& [name, lines] : splits) {
    const std::string base = name;
    write_side(*lines, &SynthLine::src1, dir / (base + ".src1"));
    write_side(*lines, &SynthLine::src2, dir / (base + ".src2"));
    write_side(*lines, &SynthLine::tgt, dir / (base + ".tgt"));
  }
}

bool is_ambiguous_token(const std::string& src1_token) {
  return src1_token.size() > 1 && src1_token[0] == 'a';
}

TokenAccuracy ambiguous_accuracy(const std::vector<std::string>& src1,
                                 const std::vector<std::string>& hyps,
                                 const std::vector<std::string>& refs) {
  if (src1.size() != hyps.size() || src1.size() != refs.size()) {
    throw ArgumentError("ambiguous_accuracy: line counts differ");
  }
  TokenAccuracy acc;
  for (std::size_t i = 0; i < src1.size(); ++i) {
    const auto s = tokenize(src1[i]);
    const auto h = tokenize(hyps[i]);
    const auto r = tokenize(refs[i]);
    for (std::size_t t = 0; t < s.size() && t < r.size(); ++t) {
      if (!is_ambiguous_token(s[t])) continue;
      ++acc.total;
      if (t < h.size() && h[t] == r[t]) ++acc.correct;
    }
  }
  return acc;
}

}  // namespace msnmt
