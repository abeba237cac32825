#pragma once

#include <limits>
#include <span>
#include <vector>

#include "lipread/tokenizer.h"

namespace lipread {

constexpr double kLogZero = -std::numeric_limits<double>::infinity();

// log(exp(a) + exp(b)) without overflow; exact for -inf operands.
double log_add(double a, double b);

// Row-wise log-softmax outputs of the CTC head, T x V.
class CtcPosterior {
 public:
  CtcPosterior() = default;
  CtcPosterior(int frames, int vocab, std::vector<double> logprobs);
  // Row-wise log-softmax of arbitrary logits.
  static CtcPosterior from_logits(int frames, int vocab, std::span<const double> logits);

  int frames() const { return frames_; }
  int vocab() const { return vocab_; }
  double operator()(int t, int k) const { return logprobs_[static_cast<std::size_t>(t) * vocab_ + k]; }
  const std::vector<double>& logprobs() const { return logprobs_; }

 private:
  int frames_ = 0;
  int vocab_ = 0;
  std::vector<double> logprobs_;
};

// The many-to-one CTC mapping: merge repeats, then drop blanks.
TokenSeq collapse(std::span<const TokenId> path, TokenId blank);

struct CtcLossResult {
  double nll = 0.0;        // -log p(target | x); +inf when unreachable
  bool reachable = true;
  std::vector<double> grad;  // d nll / d logprobs, T x V (zeros if unreachable)
};

// Forward-backward over the 2|y|+1 blank-augmented label sequence, in log
// space. Unreachable targets (too few frames) give +inf and a zero gradient.
CtcLossResult ctc_loss(const CtcPosterior& post, std::span<const TokenId> target, TokenId blank,
                       bool with_grad = true);

// Per-frame argmax (ties toward the lowest id), then collapse.
TokenSeq ctc_greedy(const CtcPosterior& post, TokenId blank);

// Forward variables of a label prefix g: log probability that frames 0..t
// emit exactly g, split by whether frame t is non-blank or blank.
struct PrefixState {
  std::vector<double> nonblank;
  std::vector<double> blank;
  int length = 0;  // |g|
  TokenId last = -1;
};

PrefixState prefix_init(const CtcPosterior& post, TokenId blank);

struct PrefixExtension {
  TokenId token = -1;
  // For regular tokens: log P(emission starts with g·c). For eos: log P(emission == g).
  double log_prob = kLogZero;
  PrefixState state;  // left empty for eos
};

// Extends prefix g (described by `state`) with each candidate. The prefix
// itself is needed only to check consistency with the state.
std::vector<PrefixExtension> prefix_step(const PrefixState& state, std::span<const TokenId> prefix,
                                         std::span<const TokenId> candidates, const CtcPosterior& post,
                                         TokenId blank, TokenId eos);

// log P(emission == g) from g's state.
double prefix_full_logprob(const PrefixState& state);

}  // namespace lipread
