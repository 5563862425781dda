#include "msnmt/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>

#include "msnmt/errors.hpp"
#include "msnmt/rng.hpp"

namespace msnmt {

namespace {

const std::vector<std::string>& reserved() {
  static const std::vector<std::string> r = {"<pad>", "<s>", "</s>", "<unk>"};
  return r;
}

constexpr std::string_view kVocabHeader =
    "# msnmt vocabulary: ids 0-3 are reserved (<pad> <s> </s> <unk>) and not listed; "
    "the token on file line n (n >= 2) has id n + 2";

bool is_reserved(std::string_view t) {
  const auto& r = reserved();
  return std::find(r.begin(), r.end(), t) != r.end();
}

void count_tokens(std::string_view line, std::map<std::string, std::size_t>& counts) {
  for (auto& t : tokenize(line)) {
    if (!is_reserved(t)) ++counts[std::move(t)];
  }
}

Vocabulary from_counts(const std::map<std::string, std::size_t>& counts, std::size_t max_size) {
  if (max_size <= kReservedTokens) {
    throw ArgumentError("build_vocab: max_size must exceed " + std::to_string(kReservedTokens));
  }
  if (counts.empty()) throw ArgumentError("build_vocab: empty corpus");
  std::vector<std::pair<std::string, std::size_t>> items(counts.begin(), counts.end());
  // std::map iteration is already lexicographic, so a stable sort by count keeps ties ordered.
  std::stable_sort(items.begin(), items.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t keep = std::min(items.size(), max_size - kReservedTokens);
  std::vector<std::string> tokens;
  tokens.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) tokens.push_back(items[i].first);
  return Vocabulary(std::move(tokens));
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) {
  tokens_ = reserved();
  tokens_.insert(tokens_.end(), std::make_move_iterator(tokens.begin()),
                 std::make_move_iterator(tokens.end()));
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw ArgumentError("vocabulary: duplicate token '" + tokens_[i] + "'");
    }
  }
}

int Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of size " +
                          std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.count(std::string(token)) != 0;
}

std::uint64_t Vocabulary::hash() const noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tokens_) {
    for (unsigned char ch : t) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
    h ^= 0xff;  // separator byte that cannot occur in UTF-8
    h *= 0x100000001b3ULL;
  }
  return h;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary " + path.string());
  out << kVocabHeader << '\n';
  for (std::size_t i = kReservedTokens; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
  if (!out) throw IoError("failed writing vocabulary " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read vocabulary " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("#", 0) != 0) {
    throw IoError("vocabulary " + path.string() + " lacks its header line");
  }
  std::vector<std::string> tokens;
  while (std::getline(in, line)) {
    strip_cr(line);
    tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

std::vector<std::string> tokenize(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  auto is_space = [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
  };
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    const std::size_t start = i;
    while (i < line.size() && !is_space(line[i])) ++i;
    if (i > start) out.emplace_back(line.substr(start, i - start));
  }
  return out;
}

Vocabulary build_vocab(std::istream& lines, std::size_t max_size) {
  std::map<std::string, std::size_t> counts;
  std::string line;
  while (std::getline(lines, line)) count_tokens(line, counts);
  return from_counts(counts, max_size);
}

Vocabulary build_vocab(std::span<const std::string> lines, std::size_t max_size) {
  std::map<std::string, std::size_t> counts;
  for (const auto& line : lines) count_tokens(line, counts);
  return from_counts(counts, max_size);
}

std::vector<int> encode_line(std::string_view line, const Vocabulary& vocab, bool reverse) {
  std::vector<int> ids;
  for (const auto& t : tokenize(line)) ids.push_back(vocab.id(t));
  if (reverse) std::reverse(ids.begin(), ids.end());
  return ids;
}

std::vector<std::string> decode_ids(std::span<const int> ids, const Vocabulary& vocab,
                                    bool reverse) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(vocab.token(id));
  if (reverse) std::reverse(out.begin(), out.end());
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    strip_cr(line);
    lines.push_back(std::move(line));
  }
  if (in.bad()) throw IoError("error while reading " + path.string());
  return lines;
}

ParallelCorpus load_parallel(std::span<const std::filesystem::path> paths, std::size_t max_len) {
  if (paths.size() < 2 || paths.size() > 3) {
    throw ArgumentError("load_parallel: expected 2 or 3 files, got " +
                        std::to_string(paths.size()));
  }
  std::vector<std::vector<std::string>> sides;
  for (const auto& p : paths) sides.push_back(read_lines(p));
  for (std::size_t k = 1; k < sides.size(); ++k) {
    if (sides[k].size() != sides[0].size()) {
      throw AlignmentError("line counts differ: " + paths[0].string() + " has " +
                           std::to_string(sides[0].size()) + ", " + paths[k].string() + " has " +
                           std::to_string(sides[k].size()));
    }
  }
  ParallelCorpus corpus;
  for (std::size_t i = 0; i < sides[0].size(); ++i) {
    bool keep = true;
    std::vector<std::string> tuple;
    for (auto& side : sides) {
      const std::size_t n = tokenize(side[i]).size();
      keep = keep && n > 0 && n <= max_len;
      tuple.push_back(std::move(side[i]));
    }
    if (keep) {
      corpus.tuples.push_back(std::move(tuple));
    } else {
      ++corpus.dropped;
    }
  }
  return corpus;
}

std::vector<Example> make_examples(const ParallelCorpus& corpus,
                                   std::span<const Vocabulary* const> vocabs) {
  std::vector<Example> out;
  out.reserve(corpus.tuples.size());
  for (const auto& tuple : corpus.tuples) {
    if (tuple.size() != vocabs.size()) {
      throw ArgumentError("make_examples: " + std::to_string(tuple.size()) + " sides but " +
                          std::to_string(vocabs.size()) + " vocabularies");
    }
    Example ex;
    ex.src1 = encode_line(tuple[0], *vocabs[0], true);
    if (tuple.size() == 3) ex.src2 = encode_line(tuple[1], *vocabs[1], true);
    ex.tgt = encode_line(tuple.back(), *vocabs.back(), false);
    out.push_back(std::move(ex));
  }
  return out;
}

namespace {

PaddedSide pad_side(std::span<const std::vector<int>* const> rows, int append) {
  PaddedSide side;
  std::size_t width = 0;
  for (const auto* r : rows) width = std::max(width, r->size() + (append >= 0 ? 1 : 0));
  for (const auto* r : rows) {
    std::vector<int> ids(*r);
    if (append >= 0) ids.push_back(append);
    const std::size_t len = ids.size();
    std::vector<char> mask(width, 0);
    std::fill(mask.begin(), mask.begin() + static_cast<long>(len), 1);
    ids.resize(width, kPadId);
    side.ids.push_back(std::move(ids));
    side.mask.push_back(std::move(mask));
    side.lengths.push_back(len);
  }
  return side;
}

}  // namespace

Batch make_batch(std::span<const Example* const> examples, int eos_id) {
  std::vector<const std::vector<int>*> s1, s2, t;
  bool two = !examples.empty() && !examples.front()->src2.empty();
  for (const Example* ex : examples) {
    s1.push_back(&ex->src1);
    if (two) s2.push_back(&ex->src2);
    t.push_back(&ex->tgt);
  }
  Batch b;
  b.src1 = pad_side(s1, -1);
  if (two) b.src2 = pad_side(s2, -1);
  b.tgt = pad_side(t, eos_id);
  return b;
}

std::vector<Batch> batchify(std::span<const Example> examples, std::size_t batch_size,
                            std::uint64_t seed) {
  if (batch_size == 0) throw ArgumentError("batchify: batch_size must be >= 1");
  Rng rng(seed, "shuffle");
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return examples[a].tgt.size() < examples[b].tgt.size();
  });
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    std::vector<const Example*> group;
    for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i) {
      group.push_back(&examples[order[i]]);
    }
    batches.push_back(make_batch(group));
  }
  rng.shuffle(batches);
  return batches;
}

}  // namespace msnmt
