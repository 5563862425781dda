#include "msnmt/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>

#include "msnmt/data.hpp"
#include "msnmt/errors.hpp"

namespace msnmt {

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts count_ngrams(const Segment& seg, int n) {
  NgramCounts counts;
  const std::size_t k = static_cast<std::size_t>(n);
  if (seg.size() < k) return counts;
  for (std::size_t i = 0; i + k <= seg.size(); ++i) {
    ++counts[std::vector<std::string>(seg.begin() + static_cast<long>(i),
                                      seg.begin() + static_cast<long>(i + k))];
  }
  return counts;
}

void check_pair(const std::vector<Segment>& hyps, const std::vector<Segment>& refs) {
  if (hyps.size() != refs.size()) {
    throw ArgumentError("bleu: " + std::to_string(hyps.size()) + " hypotheses but " +
                        std::to_string(refs.size()) + " references");
  }
}

// The script maps log(0) to a large negative constant instead of -inf.
double script_log(double x) { return x == 0.0 ? -9999999999.0 : std::log(x); }

Segment lowered(const Segment& s) {
  Segment out = s;
  for (auto& tok : out) {
    for (auto& ch : tok) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  }
  return out;
}

}  // namespace

std::pair<std::size_t, std::size_t> modified_precision(const std::vector<Segment>& hyps,
                                                       const std::vector<Segment>& refs, int n) {
  check_pair(hyps, refs);
  if (n < 1 || n > 4) throw ArgumentError("modified_precision: n must be in 1..4");
  std::size_t matches = 0, total = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const NgramCounts ref = count_ngrams(refs[i], n);
    for (const auto& [gram, count] : count_ngrams(hyps[i], n)) {
      total += count;
      auto it = ref.find(gram);
      if (it != ref.end()) matches += std::min(count, it->second);
    }
  }
  return {matches, total};
}

BleuReport bleu(const std::vector<Segment>& hyps, const std::vector<Segment>& refs,
                bool lowercase) {
  check_pair(hyps, refs);
  if (hyps.empty()) throw ArgumentError("bleu: empty corpus");
  if (lowercase) {
    std::vector<Segment> h, r;
    for (const auto& s : hyps) h.push_back(lowered(s));
    for (const auto& s : refs) r.push_back(lowered(s));
    return bleu(h, r, false);
  }
  BleuReport rep;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    rep.hyp_len += hyps[i].size();
    rep.ref_len += refs[i].size();
  }
  if (rep.hyp_len == 0) throw ArgumentError("bleu: every hypothesis is empty");
  if (rep.ref_len == 0) {
    rep.bp = 0.0;
    rep.hyp_len = 0;
    return rep;
  }
  double log_sum = 0.0;
  for (int n = 1; n <= 4; ++n) {
    const auto [m, t] = modified_precision(hyps, refs, n);
    rep.precisions[static_cast<std::size_t>(n - 1)] =
        t == 0 ? 0.0 : static_cast<double>(m) / static_cast<double>(t);
    log_sum += script_log(rep.precisions[static_cast<std::size_t>(n - 1)]);
  }
  const double c = static_cast<double>(rep.hyp_len);
  const double r = static_cast<double>(rep.ref_len);
  rep.bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  rep.ratio = c / r;
  rep.bleu = 100.0 * rep.bp * std::exp(log_sum / 4.0);
  return rep;
}

BleuReport score_files(const std::filesystem::path& hyp, const std::filesystem::path& ref,
                       bool lowercase) {
  const auto h = read_lines(hyp);
  const auto r = read_lines(ref);
  if (h.size() != r.size()) {
    throw AlignmentError(hyp.string() + " has " + std::to_string(h.size()) + " lines but " +
                         ref.string() + " has " + std::to_string(r.size()));
  }
  std::vector<Segment> hs, rs;
  for (const auto& line : h) hs.push_back(tokenize(line));
  for (const auto& line : r) rs.push_back(tokenize(line));
  return bleu(hs, rs, lowercase);
}

std::string format_report(const BleuReport& r) {
  if (r.ref_len == 0) return "BLEU = 0, 0/0/0/0 (BP=0, ratio=0, hyp_len=0, ref_len=0)";
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "BLEU = %.2f, %.1f/%.1f/%.1f/%.1f (BP=%.3f, ratio=%.3f, hyp_len=%zu, ref_len=%zu)",
                r.bleu, 100.0 * r.precisions[0], 100.0 * r.precisions[1], 100.0 * r.precisions[2],
                100.0 * r.precisions[3], r.bp, r.ratio, r.hyp_len, r.ref_len);
  return buf;
}

}  // namespace msnmt
