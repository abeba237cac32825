#include "lipread/eval.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "lipread/error.h"
#include "lipread/parallel.h"
#include "lipread/rng.h"
#include "lipread/tokenizer.h"

namespace lipread {

EditCounts edit_distance(std::span<const std::string> ref, std::span<const std::string> hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  // cost[i][j] = (edits, insertions+deletions), compared lexicographically.
  struct Cell {
    int edits;
    int indels;
    bool operator<(const Cell& o) const { return edits != o.edits ? edits < o.edits : indels < o.indels; }
  };
  std::vector<Cell> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> Cell& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = {static_cast<int>(i), static_cast<int>(i)};
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = {static_cast<int>(j), static_cast<int>(j)};
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const int sub = ref[i - 1] == hyp[j - 1] ? 0 : 1;
      Cell best{at(i - 1, j - 1).edits + sub, at(i - 1, j - 1).indels};
      const Cell del{at(i - 1, j).edits + 1, at(i - 1, j).indels + 1};
      const Cell ins{at(i, j - 1).edits + 1, at(i, j - 1).indels + 1};
      if (del < best) best = del;
      if (ins < best) best = ins;
      at(i, j) = best;
    }
  }
  // Backtrace preferring substitution/match, then deletion, then insertion.
  EditCounts counts;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    const Cell cur = at(i, j);
    if (i > 0 && j > 0) {
      const int sub = ref[i - 1] == hyp[j - 1] ? 0 : 1;
      const Cell& p = at(i - 1, j - 1);
      if (p.edits + sub == cur.edits && p.indels == cur.indels) {
        counts.substitutions += sub;
        --i;
        --j;
        continue;
      }
    }
    if (i > 0) {
      const Cell& p = at(i - 1, j);
      if (p.edits + 1 == cur.edits && p.indels + 1 == cur.indels) {
        ++counts.deletions;
        --i;
        continue;
      }
    }
    ++counts.insertions;
    --j;
  }
  return counts;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && (text[i] == ' ' || text[i] == '\t' || text[i] == '\n' || text[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < text.size() && !(text[i] == ' ' || text[i] == '\t' || text[i] == '\n' || text[i] == '\r')) ++i;
    if (i > start) words.emplace_back(text.substr(start, i - start));
  }
  return words;
}

std::vector<std::string> split_characters(std::string_view text) { return utf8_chars(text); }

namespace {
double rate(int errors, int length) {
  if (length == 0) return errors == 0 ? 0.0 : std::numeric_limits<double>::infinity();
  return 100.0 * errors / length;
}
}  // namespace

double UttResult::wer() const { return rate(words.errors(), ref_words); }
double UttResult::cer() const { return rate(chars.errors(), ref_chars); }

UttResult score_utterance(std::string id, std::string reference, std::string hypothesis) {
  UttResult r;
  r.id = std::move(id);
  r.reference = std::move(reference);
  r.hypothesis = std::move(hypothesis);
  const auto rw = split_words(r.reference), hw = split_words(r.hypothesis);
  r.words = edit_distance(rw, hw);
  r.ref_words = static_cast<int>(rw.size());
  const auto rc = split_characters(r.reference), hc = split_characters(r.hypothesis);
  r.chars = edit_distance(rc, hc);
  r.ref_chars = static_cast<int>(rc.size());
  return r;
}

double wer(std::span<const UttResult> results) {
  long errors = 0, words = 0;
  for (const auto& r : results) {
    errors += r.words.errors();
    words += r.ref_words;
  }
  if (words == 0) throw std::invalid_argument("wer: no reference words");
  return 100.0 * static_cast<double>(errors) / static_cast<double>(words);
}

double cer(std::span<const UttResult> results) {
  long errors = 0, chars = 0;
  for (const auto& r : results) {
    errors += r.chars.errors();
    chars += r.ref_chars;
  }
  if (chars == 0) throw std::invalid_argument("cer: no reference characters");
  return 100.0 * static_cast<double>(errors) / static_cast<double>(chars);
}

namespace {
// Linear interpolation between closest ranks (R type 7).
double percentile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}
}  // namespace

BootstrapResult bootstrap_ci(std::span<const ErrorCount> counts, int replicates, uint64_t seed, int jobs) {
  if (counts.empty()) throw std::invalid_argument("bootstrap_ci: no utterances");
  if (replicates <= 0) throw std::invalid_argument("bootstrap_ci: replicate count must be positive");
  if (replicates < 100) log_warning("bootstrap_ci: only " + std::to_string(replicates) + " replicates");
  long errors = 0, words = 0;
  for (const auto& [e, w] : counts) {
    errors += e;
    words += w;
  }
  if (words == 0) throw std::invalid_argument("bootstrap_ci: no reference words");

  BootstrapResult result;
  result.wer = 100.0 * static_cast<double>(errors) / static_cast<double>(words);
  result.replicates = replicates;
  result.seed = seed;

  std::vector<double> reps(static_cast<std::size_t>(replicates));
  const std::size_t n = counts.size();
  parallel_for(reps.size(), jobs, [&](std::size_t b) {
    Rng rng = Rng::derive(seed, b);
    long e = 0, w = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& c = counts[rng.uniform_int(n)];
      e += c.first;
      w += c.second;
    }
    // A replicate with no reference words (only empty references drawn)
    // carries no information; count it at the point estimate.
    reps[b] = w > 0 ? 100.0 * static_cast<double>(e) / static_cast<double>(w) : result.wer;
  });
  std::sort(reps.begin(), reps.end());
  result.lo = percentile(reps, 0.025);
  result.hi = percentile(reps, 0.975);
  return result;
}

BootstrapResult bootstrap_ci(std::span<const UttResult> results, int replicates, uint64_t seed, int jobs) {
  std::vector<ErrorCount> counts;
  counts.reserve(results.size());
  for (const auto& r : results) counts.emplace_back(r.words.errors(), r.ref_words);
  return bootstrap_ci(std::span<const ErrorCount>(counts), replicates, seed, jobs);
}

std::array<int, 10> wer_histogram(std::span<const double> wers, double bin_width) {
  std::array<int, 10> bins{};
  for (double w : wers) {
    if (!(w >= 0.0)) throw std::invalid_argument("wer_histogram: negative or NaN WER");
    const double b = std::floor(w / bin_width);
    const int idx = b >= 9.0 ? 9 : static_cast<int>(b);
    ++bins[static_cast<std::size_t>(idx)];
  }
  return bins;
}

namespace {
std::vector<std::pair<std::string, long>> rank_types(std::span<const std::string> tokens) {
  std::unordered_map<std::string, long> freq;
  for (const auto& t : tokens) ++freq[t];
  std::vector<std::pair<std::string, long>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  return ranked;
}
}  // namespace

ZipfCurve zipf_curve(std::span<const std::string> tokens) {
  if (tokens.empty()) throw std::invalid_argument("zipf_curve: empty token stream");
  return zipf_curve_from_counts(rank_types(tokens));
}

ZipfCurve zipf_curve_from_counts(std::vector<std::pair<std::string, long>> counts) {
  if (counts.empty()) throw std::invalid_argument("zipf_curve: empty frequency table");
  for (const auto& [word, c] : counts)
    if (c < 1) throw std::invalid_argument("zipf_curve: non-positive count for '" + word + "'");
  std::sort(counts.begin(), counts.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  ZipfCurve curve;
  curve.ranked = std::move(counts);
  const double top = static_cast<double>(curve.ranked.front().second);
  const std::size_t n = curve.ranked.size();
  curve.relative_frequency.resize(n);
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t r = 0; r < n; ++r) {
    curve.relative_frequency[r] = static_cast<double>(curve.ranked[r].second) / top;
    const double x = std::log(static_cast<double>(r + 1));
    const double y = std::log(curve.relative_frequency[r]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double dn = static_cast<double>(n);
  const double denom = dn * sxx - sx * sx;
  curve.slope = denom > 0.0 ? (dn * sxy - sx * sy) / denom : 0.0;
  return curve;
}

CoverageStats coverage_stats(std::span<const std::string> train_tokens, std::span<const std::string> test_tokens,
                             long top_n) {
  if (train_tokens.empty() || test_tokens.empty()) throw std::invalid_argument("coverage_stats: empty token stream");
  if (top_n < 1) throw std::invalid_argument("coverage_stats: topN must be >= 1");
  const auto ranked = rank_types(train_tokens);
  CoverageStats s;
  s.train_v = static_cast<long>(ranked.size());
  if (top_n > s.train_v) {
    log_warning("coverage_stats: topN " + std::to_string(top_n) + " exceeds training vocabulary " +
                std::to_string(s.train_v) + "; clamped");
    top_n = s.train_v;
  }
  s.top_n = top_n;
  std::unordered_set<std::string> train_v, top_v;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    train_v.insert(ranked[i].first);
    if (static_cast<long>(i) < top_n) top_v.insert(ranked[i].first);
  }
  std::unordered_set<std::string> test_v(test_tokens.begin(), test_tokens.end());
  s.test_v = static_cast<long>(test_v.size());
  s.test_rw = static_cast<long>(test_tokens.size());
  for (const auto& w : test_v) {
    s.test_v_train_v.count += train_v.count(w);
    s.test_v_top_v.count += top_v.count(w);
  }
  for (const auto& w : test_tokens) {
    s.test_rw_train_v.count += train_v.count(w);
    s.test_rw_top_v.count += top_v.count(w);
  }
  auto pct = [](Coverage& c, long base) { c.percent = 100.0 * static_cast<double>(c.count) / static_cast<double>(base); };
  pct(s.test_v_train_v, s.test_v);
  pct(s.test_v_top_v, s.test_v);
  pct(s.test_rw_train_v, s.test_rw);
  pct(s.test_rw_top_v, s.test_rw);
  return s;
}

std::string format_percent(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f%%", decimals, value);
  return buf;
}

}  // namespace lipread
