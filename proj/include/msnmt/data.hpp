#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "msnmt/recurrent.hpp"

namespace msnmt {

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr std::size_t kReservedTokens = 4;

class Vocabulary {
 public:
  Vocabulary();
  // `tokens` are the non-reserved entries; they receive ids 4, 5, ...
  explicit Vocabulary(std::vector<std::string> tokens);

  int id(std::string_view token) const;  // <unk> when absent
  const std::string& token(int id) const;
  bool contains(std::string_view token) const;
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  // FNV-1a over the id-ordered token list; stored in checkpoints.
  std::uint64_t hash() const noexcept;

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

std::vector<std::string> tokenize(std::string_view line);

// Keeps the (max_size - 4) most frequent tokens; equal counts are ordered
// by byte-wise token comparison.
Vocabulary build_vocab(std::istream& lines, std::size_t max_size);
Vocabulary build_vocab(std::span<const std::string> lines, std::size_t max_size);

std::vector<int> encode_line(std::string_view line, const Vocabulary& vocab, bool reverse);
std::vector<std::string> decode_ids(std::span<const int> ids, const Vocabulary& vocab,
                                    bool reverse = false);

struct ParallelCorpus {
  std::vector<std::vector<std::string>> tuples;  // tuples[i][side] = raw line
  std::size_t dropped = 0;
};

std::vector<std::string> read_lines(const std::filesystem::path& path);

// Line i of every file forms one tuple. Tuples with an empty side or a side
// longer than max_len tokens are dropped and counted.
ParallelCorpus load_parallel(std::span<const std::filesystem::path> paths, std::size_t max_len);

// One aligned training example. Sources are stored reversed.
struct Example {
  std::vector<int> src1;
  std::vector<int> src2;  // empty in single-source mode
  std::vector<int> tgt;   // t_1 ... t_n, without framing
};

// `vocabs` holds src1[, src2], tgt in the same side order as the corpus.
std::vector<Example> make_examples(const ParallelCorpus& corpus,
                                   std::span<const Vocabulary* const> vocabs);

struct PaddedSide : SourceBatch {
  std::vector<std::vector<char>> mask;  // true exactly on non-pad positions
  std::size_t width() const noexcept { return ids.empty() ? 0 : ids.front().size(); }
};

// Target rows hold t_1 ... t_n </s>; lengths count the </s>.
struct Batch {
  PaddedSide src1;
  PaddedSide src2;
  PaddedSide tgt;
  std::size_t size() const noexcept { return tgt.ids.size(); }
  bool has_src2() const noexcept { return !src2.ids.empty(); }
};

Batch make_batch(std::span<const Example* const> examples, int eos_id = kEosId);

// Sorts by target length after a seeded shuffle, cuts consecutive groups of
// batch_size, then shuffles the batch order with the same stream.
std::vector<Batch> batchify(std::span<const Example> examples, std::size_t batch_size,
                            std::uint64_t seed);

}  // namespace msnmt
