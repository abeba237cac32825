#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace lipread {

struct EditCounts {
  int substitutions = 0;
  int deletions = 0;
  int insertions = 0;
  int errors() const { return substitutions + deletions + insertions; }
  bool operator==(const EditCounts&) const = default;
};

// Unit-cost Levenshtein alignment. Among minimum-cost alignments the one with
// the fewest insertions+deletions is chosen, which fixes (S, D, I) uniquely.
EditCounts edit_distance(std::span<const std::string> ref, std::span<const std::string> hyp);

std::vector<std::string> split_words(std::string_view text);
// UTF-8 code points, spaces included.
std::vector<std::string> split_characters(std::string_view text);

struct UttResult {
  std::string id;
  std::string reference;
  std::string hypothesis;
  EditCounts words;
  int ref_words = 0;
  EditCounts chars;
  int ref_chars = 0;

  // Percentages; +inf when the reference is empty but errors were made.
  double wer() const;
  double cer() const;
};

UttResult score_utterance(std::string id, std::string reference, std::string hypothesis);

// Pooled corpus rates in percent: 100 * sum(errors) / sum(reference length).
// Not clamped at 100. Throw std::invalid_argument on an empty reference total.
double wer(std::span<const UttResult> results);
double cer(std::span<const UttResult> results);

// (errors, reference words) per utterance; the unit resampled by the bootstrap.
using ErrorCount = std::pair<long, long>;

struct BootstrapResult {
  double wer = 0.0;  // point estimate on the full corpus
  double lo = 0.0;   // 2.5th percentile
  double hi = 0.0;   // 97.5th percentile
  int replicates = 0;
  uint64_t seed = 0;
};

// Percentile bootstrap over utterances. Replicate b draws from an RNG derived
// from (seed, b), so the result is independent of `jobs`.
BootstrapResult bootstrap_ci(std::span<const ErrorCount> counts, int replicates, uint64_t seed, int jobs = 1);
BootstrapResult bootstrap_ci(std::span<const UttResult> results, int replicates = 10000, uint64_t seed = 0,
                             int jobs = 1);

// Ten bins [0,10), ..., [80,90), [90,100]; values above 100 land in the last bin.
std::array<int, 10> wer_histogram(std::span<const double> wers, double bin_width = 10.0);

struct ZipfCurve {
  std::vector<std::pair<std::string, long>> ranked;  // descending frequency, ties alphabetical
  std::vector<double> relative_frequency;            // freq / max freq
  double slope = 0.0;                                // least squares on (log rank, log rel. freq.)
};

ZipfCurve zipf_curve(std::span<const std::string> tokens);
// Same curve from a (type, count) table; counts must be positive.
ZipfCurve zipf_curve_from_counts(std::vector<std::pair<std::string, long>> counts);

struct Coverage {
  long count = 0;
  double percent = 0.0;  // relative to the first operand
};

struct CoverageStats {
  long train_v = 0;
  long test_v = 0;
  long test_rw = 0;
  long top_n = 0;  // effective size of top-v after clamping
  Coverage test_v_train_v;
  Coverage test_v_top_v;
  Coverage test_rw_train_v;
  Coverage test_rw_top_v;
};

CoverageStats coverage_stats(std::span<const std::string> train_tokens, std::span<const std::string> test_tokens,
                             long top_n);

// Formats a percentage like "66.7%" (one decimal).
std::string format_percent(double value, int decimals = 1);

}  // namespace lipread
