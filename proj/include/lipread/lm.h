#pragma once

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lipread/tokenizer.h"

namespace lipread {

// Last (order - 1) tokens, padded at sentence start with eos.
struct LmState {
  std::vector<TokenId> context;
  bool operator==(const LmState&) const = default;
};

// Add-k smoothed character n-gram model over the full vocabulary:
//   p(c | h) = (count(h, c) + k) / (count(h) + V k)
// Contexts never seen in training fall back to the uniform distribution,
// which is the same formula with zero counts.
class CharNgramLm {
 public:
  // Each sentence is an encoded label sequence (no eos); eos is appended and
  // the start is padded internally.
  static CharNgramLm train(std::span<const TokenSeq> sentences, int order, double k, int vocab_size, TokenId eos,
                           std::string vocab_hash);

  static CharNgramLm load(const std::string& path);
  // header_comment lines follow the header as '#' comments.
  void save(const std::string& path, const std::string& header_comment = "") const;

  int order() const { return order_; }
  double k() const { return k_; }
  int vocab_size() const { return vocab_size_; }
  TokenId eos() const { return eos_; }
  const std::string& vocab_hash() const { return vocab_hash_; }

  LmState initial_state() const;
  LmState state_after(std::span<const TokenId> prefix) const;
  // log p(token | state) and the state with token appended.
  std::pair<double, LmState> score_step(const LmState& state, TokenId token) const;
  // log p(c | state) for every c.
  std::vector<double> distribution(const LmState& state) const;
  // Sum of step scores over the sentence followed by eos.
  double sentence_logprob(std::span<const TokenId> sentence) const;

 private:
  CharNgramLm() = default;
  int order_ = 1;
  double k_ = 0.1;
  int vocab_size_ = 0;
  TokenId eos_ = 0;
  std::string vocab_hash_;
  std::map<std::vector<TokenId>, std::vector<double>> table_;  // context -> log-probs
};

// Convenience wrapper: normalized text lines, encoded with `vocab`.
CharNgramLm train_charlm(std::span<const std::string> lines, const Vocabulary& vocab, int order = 5, double k = 0.1);

// exp(-mean log p) over every token including each sentence's eos.
double perplexity(const CharNgramLm& lm, std::span<const TokenSeq> sentences);

}  // namespace lipread
