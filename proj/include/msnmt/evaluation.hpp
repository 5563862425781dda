#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace msnmt {

using Segment = std::vector<std::string>;

struct BleuReport {
  double bleu = 0.0;                      // 0..100
  std::array<double, 4> precisions{};     // p1..p4 as fractions
  double bp = 1.0;
  double ratio = 0.0;                     // hyp_len / ref_len
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
};

// Corpus-level clipped n-gram counts: (matches, total).
std::pair<std::size_t, std::size_t> modified_precision(const std::vector<Segment>& hyps,
                                                       const std::vector<Segment>& refs, int n);

// Single-reference corpus BLEU with the semantics of Moses' multi-bleu.perl.
BleuReport bleu(const std::vector<Segment>& hyps, const std::vector<Segment>& refs,
                bool lowercase = false);

// Whitespace-tokenized files, one segment per line.
BleuReport score_files(const std::filesystem::path& hyp, const std::filesystem::path& ref,
                       bool lowercase = false);

// "BLEU = 25.20, 60.0/31.2/18.5/11.0 (BP=1.000, ratio=1.010, hyp_len=..., ref_len=...)"
std::string format_report(const BleuReport& r);

}  // namespace msnmt
