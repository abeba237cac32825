#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lipread/ctc.h"
#include "lipread/lm.h"
#include "lipread/model.h"
#include "lipread/tokenizer.h"

namespace lipread {

struct TokenSpace {
  int size = Vocabulary::kSize;
  TokenId blank = 0;
  TokenId eos = Vocabulary::kSize - 1;
};

// Left-to-right scorer: log p(c | prefix) for every c in the token space.
class SequenceScorer {
 public:
  virtual ~SequenceScorer() = default;
  virtual std::vector<double> next_logprobs(std::span<const TokenId> prefix) const = 0;
};

class ModelAttentionScorer : public SequenceScorer {
 public:
  ModelAttentionScorer(const Model& model, const Tensor& latents) : model_(model), latents_(latents) {}
  std::vector<double> next_logprobs(std::span<const TokenId> prefix) const override {
    return decoder_score_step(model_, latents_, prefix);
  }

 private:
  const Model& model_;
  const Tensor& latents_;
};

class NgramLmScorer : public SequenceScorer {
 public:
  explicit NgramLmScorer(const CharNgramLm& lm) : lm_(lm) {}
  std::vector<double> next_logprobs(std::span<const TokenId> prefix) const override {
    return lm_.distribution(lm_.state_after(prefix));
  }

 private:
  const CharNgramLm& lm_;
};

struct DecodeConfig {
  double lambda = 0.1;
  double beta = 0.4;
  int beam = 10;
  double penalty = 0.0;  // per emitted character
  int max_len = 0;       // 0: number of CTC frames
  void validate() const;
};

// lambda s_ctc + (1 - lambda) s_attn + beta s_lm + penalty length; a term
// whose weight is 0 contributes exactly 0 even if its score is -inf.
double combine(double s_ctc, double s_attn, double s_lm, int length, const DecodeConfig& cfg);

struct Hypothesis {
  TokenSeq prefix;  // without eos
  double s_ctc = 0.0;
  double s_attn = 0.0;
  double s_lm = 0.0;
  double combined = 0.0;
  PrefixState ctc_state;
  bool ended = false;
};

// Scorers a term needs when its weight is non-zero. Absent scorers report 0.
struct DecodeInputs {
  TokenSpace space;
  const CtcPosterior* ctc = nullptr;
  const SequenceScorer* attn = nullptr;
  const SequenceScorer* lm = nullptr;
};

// Label-synchronous search. Every live hypothesis is extended by every regular
// token (while shorter than max_len) and by eos; eos candidates are final, the
// rest are pruned to `beam`. Returns ended hypotheses, best first, ties broken
// by lexicographic prefix.
std::vector<Hypothesis> beam_search(const DecodeInputs& in, const DecodeConfig& cfg);

// Scores every sequence of length <= max_len directly (CTC loss, attention and
// LM chain rule). Throws std::invalid_argument beyond 1e5 sequences.
Hypothesis exhaustive_decode(const DecodeInputs& in, const DecodeConfig& cfg);

// id, rank, combined, s_ctc, s_attn, s_lm, text
void write_nbest(std::ostream& os, const std::string& id, std::span<const Hypothesis> hyps, const Vocabulary& vocab);

}  // namespace lipread
