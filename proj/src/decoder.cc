#include "lipread/decoder.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace lipread {
namespace {

bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.combined != b.combined) return a.combined > b.combined;
  return a.prefix < b.prefix;
}

std::vector<TokenId> regular_tokens(const TokenSpace& s) {
  std::vector<TokenId> out;
  for (TokenId c = 0; c < s.size; ++c)
    if (c != s.blank && c != s.eos) out.push_back(c);
  return out;
}

void check_inputs(const DecodeInputs& in, const DecodeConfig& cfg) {
  cfg.validate();
  if (cfg.lambda > 0.0 && !in.ctc) throw std::invalid_argument("decode: lambda > 0 needs CTC posteriors");
  if (cfg.lambda < 1.0 && !in.attn) throw std::invalid_argument("decode: lambda < 1 needs an attention scorer");
  if (cfg.beta > 0.0 && !in.lm) throw std::invalid_argument("decode: beta > 0 needs a language model");
  if (in.ctc && in.ctc->frames() == 0) throw std::invalid_argument("decode: empty latents");
  if (in.ctc && in.ctc->vocab() != in.space.size) throw std::invalid_argument("decode: posterior/vocabulary mismatch");
}

int effective_max_len(const DecodeInputs& in, const DecodeConfig& cfg) {
  if (cfg.max_len > 0) return cfg.max_len;
  if (!in.ctc) throw std::invalid_argument("decode: max_len must be set when no CTC posterior is given");
  return in.ctc->frames();
}

std::vector<double> next_or_zero(const SequenceScorer* s, std::span<const TokenId> prefix, int size) {
  if (!s) return std::vector<double>(static_cast<std::size_t>(size), 0.0);
  std::vector<double> v = s->next_logprobs(prefix);
  if (static_cast<int>(v.size()) != size) throw std::invalid_argument("decode: scorer returned wrong size");
  return v;
}

}  // namespace

void DecodeConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("decode: lambda must lie in [0, 1]");
  if (!(beta >= 0.0)) throw std::invalid_argument("decode: beta must be >= 0");
  if (beam < 1) throw std::invalid_argument("decode: beam must be >= 1");
  if (max_len < 0) throw std::invalid_argument("decode: max_len must be >= 1 (or 0 for automatic)");
  if (!std::isfinite(penalty)) throw std::invalid_argument("decode: penalty must be finite");
}

double combine(double s_ctc, double s_attn, double s_lm, int length, const DecodeConfig& cfg) {
  double s = 0.0;
  if (cfg.lambda != 0.0) s += cfg.lambda * s_ctc;
  if (cfg.lambda != 1.0) s += (1.0 - cfg.lambda) * s_attn;
  if (cfg.beta != 0.0) s += cfg.beta * s_lm;
  if (cfg.penalty != 0.0) s += cfg.penalty * length;
  return s;
}

std::vector<Hypothesis> beam_search(const DecodeInputs& in, const DecodeConfig& cfg) {
  check_inputs(in, cfg);
  const int max_len = effective_max_len(in, cfg);
  const std::vector<TokenId> regular = regular_tokens(in.space);
  const int V = in.space.size;

  std::vector<Hypothesis> live(1), ended;
  if (in.ctc) live[0].ctc_state = prefix_init(*in.ctc, in.space.blank);
  live[0].combined = combine(0, 0, 0, 0, cfg);

  while (!live.empty()) {
    std::vector<Hypothesis> next;
    for (const Hypothesis& h : live) {
      std::vector<TokenId> cands;
      if (static_cast<int>(h.prefix.size()) < max_len) cands = regular;
      cands.push_back(in.space.eos);
      std::vector<PrefixExtension> ext;
      if (in.ctc) ext = prefix_step(h.ctc_state, h.prefix, cands, *in.ctc, in.space.blank, in.space.eos);
      const std::vector<double> attn = next_or_zero(in.attn, h.prefix, V);
      const std::vector<double> lm = next_or_zero(in.lm, h.prefix, V);
      for (std::size_t i = 0; i < cands.size(); ++i) {
        const TokenId c = cands[i];
        Hypothesis n;
        n.prefix = h.prefix;
        n.ended = c == in.space.eos;
        if (!n.ended) n.prefix.push_back(c);
        n.s_ctc = in.ctc ? ext[i].log_prob : 0.0;
        n.s_attn = h.s_attn + attn[static_cast<std::size_t>(c)];
        n.s_lm = h.s_lm + lm[static_cast<std::size_t>(c)];
        n.combined = combine(n.s_ctc, n.s_attn, n.s_lm, static_cast<int>(n.prefix.size()), cfg);
        if (n.ended) {
          ended.push_back(std::move(n));
        } else {
          if (in.ctc) n.ctc_state = std::move(ext[i].state);
          next.push_back(std::move(n));
        }
      }
    }
    std::sort(next.begin(), next.end(), better);
    if (static_cast<int>(next.size()) > cfg.beam) next.resize(static_cast<std::size_t>(cfg.beam));
    live = std::move(next);
  }
  std::sort(ended.begin(), ended.end(), better);
  for (Hypothesis& h : ended) h.ctc_state = PrefixState{};
  return ended;
}

Hypothesis exhaustive_decode(const DecodeInputs& in, const DecodeConfig& cfg) {
  check_inputs(in, cfg);
  const int max_len = effective_max_len(in, cfg);
  const std::vector<TokenId> regular = regular_tokens(in.space);
  double total = 0.0, layer = 1.0;
  for (int l = 0; l <= max_len; ++l) {
    total += layer;
    layer *= static_cast<double>(regular.size());
  }
  if (total > 1e5) throw std::invalid_argument("exhaustive_decode: search space too large");

  auto chain = [&](const SequenceScorer* s, const TokenSeq& seq) {
    if (!s) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i <= seq.size(); ++i) {
      const std::vector<double> p = s->next_logprobs(std::span<const TokenId>(seq.data(), i));
      sum += p[static_cast<std::size_t>(i < seq.size() ? seq[i] : in.space.eos)];
    }
    return sum;
  };

  Hypothesis best;
  bool have = false;
  TokenSeq seq;
  // Depth-first over all sequences up to max_len.
  std::vector<std::size_t> digits;
  while (true) {
    Hypothesis h;
    h.prefix = seq;
    h.ended = true;
    h.s_ctc = in.ctc ? -ctc_loss(*in.ctc, seq, in.space.blank, false).nll : 0.0;
    h.s_attn = chain(in.attn, seq);
    h.s_lm = chain(in.lm, seq);
    h.combined = combine(h.s_ctc, h.s_attn, h.s_lm, static_cast<int>(seq.size()), cfg);
    if (!have || better(h, best)) {
      best = std::move(h);
      have = true;
    }
    if (static_cast<int>(seq.size()) < max_len && !regular.empty()) {
      digits.push_back(0);
      seq.push_back(regular[0]);
      continue;
    }
    while (!digits.empty() && digits.back() + 1 == regular.size()) {
      digits.pop_back();
      seq.pop_back();
    }
    if (digits.empty()) break;
    ++digits.back();
    seq.back() = regular[digits.back()];
  }
  return best;
}

void write_nbest(std::ostream& os, const std::string& id, std::span<const Hypothesis> hyps, const Vocabulary& vocab) {
  char buf[64];
  int rank = 1;
  for (const Hypothesis& h : hyps) {
    os << id << '\t' << rank++;
    for (double v : {h.combined, h.s_ctc, h.s_attn, h.s_lm}) {
      auto res = std::to_chars(buf, buf + sizeof(buf), v);
      os << '\t' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    os << '\t' << decode(h.prefix, vocab) << '\n';
  }
}

}  // namespace lipread
