#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace msnmt {

enum class SynthTask { Copy, Triangulate };

SynthTask parse_synth_task(const std::string& s);

struct SynthOptions {
  SynthTask task = SynthTask::Copy;
  std::size_t train = 500;
  std::size_t dev = 50;
  std::size_t test = 50;
  std::size_t words = 46;       // target word types (46 + 4 reserved = 50)
  std::size_t ambiguous = 10;   // triangulate: collapsed pairs per source
  std::size_t min_len = 3;
  std::size_t max_len = 10;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SynthLine {
  std::string src1, src2, tgt;
};

struct SynthCorpus {
  std::vector<SynthLine> train, dev, test;
};

// copy: src2 and tgt repeat src1.
// triangulate: target words e0..; src1 merges the pairs (e0,e1), (e2,e3), ...
// into one token each, src2 merges a disjoint set of pairs taken from words
// that src1 keeps distinct. Each position is resolved by one of the sources.
SynthCorpus generate_synth(const SynthOptions& opts);

// Writes {train,dev,test}.{src1,src2,tgt} into dir.
void write_synth(const SynthCorpus& corpus, const std::filesystem::path& dir);

// Whether a triangulate src1 token stands for two target words.
bool is_ambiguous_token(const std::string& src1_token);

struct TokenAccuracy {
  std::size_t correct = 0;
  std::size_t total = 0;
  double rate() const { return total == 0 ? 0.0 : static_cast<double>(correct) / total; }
};

// Position-wise accuracy of hyps against refs at positions whose src1 token is
// ambiguous. A missing hypothesis position counts as wrong.
TokenAccuracy ambiguous_accuracy(const std::vector<std::string>& src1,
                                 const std::vector<std::string>& hyps,
                                 const std::vector<std::string>& refs);

}  // namespace msnmt
