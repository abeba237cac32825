#include "lipread/ctc.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace lipread {

double log_add(double a, double b) {
  if (a == kLogZero) return b;
  if (b == kLogZero) return a;
  if (a < b) std::swap(a, b);
  return a + std::log1p(std::exp(b - a));
}

CtcPosterior::CtcPosterior(int frames, int vocab, std::vector<double> logprobs)
    : frames_(frames), vocab_(vocab), logprobs_(std::move(logprobs)) {
  if (frames < 0 || vocab <= 0 || logprobs_.size() != static_cast<std::size_t>(frames) * vocab)
    throw std::invalid_argument("CtcPosterior: shape mismatch");
}

CtcPosterior CtcPosterior::from_logits(int frames, int vocab, std::span<const double> logits) {
  if (logits.size() != static_cast<std::size_t>(frames) * vocab)
    throw std::invalid_argument("CtcPosterior::from_logits: shape mismatch");
  std::vector<double> lp(logits.begin(), logits.end());
  for (int t = 0; t < frames; ++t) {
    double* row = lp.data() + static_cast<std::size_t>(t) * vocab;
    const double mx = *std::max_element(row, row + vocab);
    double sum = 0.0;
    for (int k = 0; k < vocab; ++k) sum += std::exp(row[k] - mx);
    const double lse = mx + std::log(sum);
    for (int k = 0; k < vocab; ++k) row[k] -= lse;
  }
  return CtcPosterior(frames, vocab, std::move(lp));
}

TokenSeq collapse(std::span<const TokenId> path, TokenId blank) {
  TokenSeq out;
  TokenId prev = -1;
  for (TokenId id : path) {
    if (id != prev && id != blank) out.push_back(id);
    prev = id;
  }
  return out;
}

CtcLossResult ctc_loss(const CtcPosterior& post, std::span<const TokenId> target, TokenId blank, bool with_grad) {
  const int T = post.frames();
  const int V = post.vocab();
  for (TokenId id : target)
    if (id == blank || id < 0 || id >= V) throw std::invalid_argument("ctc_loss: invalid target id " + std::to_string(id));

  CtcLossResult result;
  if (with_grad) result.grad.assign(static_cast<std::size_t>(T) * V, 0.0);

  int repeats = 0;
  for (std::size_t i = 1; i < target.size(); ++i) repeats += target[i] == target[i - 1];
  if (T == 0 || static_cast<int>(target.size()) + repeats > T) {
    // The empty target is reachable in any T >= 0, including T == 0.
    if (!(target.empty() && T == 0)) {
      result.nll = std::numeric_limits<double>::infinity();
      result.reachable = false;
      return result;
    }
    result.nll = 0.0;
    return result;
  }

  const int S = 2 * static_cast<int>(target.size()) + 1;
  auto label = [&](int s) { return (s % 2 == 0) ? blank : target[static_cast<std::size_t>(s / 2)]; };
  auto can_skip = [&](int s) { return s >= 2 && label(s) != blank && label(s) != label(s - 2); };

  std::vector<double> alpha(static_cast<std::size_t>(T) * S, kLogZero);
  auto A = [&](int t, int s) -> double& { return alpha[static_cast<std::size_t>(t) * S + s]; };
  A(0, 0) = post(0, blank);
  if (S > 1) A(0, 1) = post(0, label(1));
  for (int t = 1; t < T; ++t) {
    for (int s = 0; s < S; ++s) {
      double acc = A(t - 1, s);
      if (s >= 1) acc = log_add(acc, A(t - 1, s - 1));
      if (can_skip(s)) acc = log_add(acc, A(t - 1, s - 2));
      A(t, s) = acc == kLogZero ? kLogZero : acc + post(t, label(s));
    }
  }
  double loglik = A(T - 1, S - 1);
  if (S > 1) loglik = log_add(loglik, A(T - 1, S - 2));
  if (loglik == kLogZero) {
    result.nll = std::numeric_limits<double>::infinity();
    result.reachable = false;
    if (with_grad) std::fill(result.grad.begin(), result.grad.end(), 0.0);
    return result;
  }
  result.nll = -loglik;
  if (!with_grad) return result;

  // beta(t, s): log prob of emitting the rest of the labels from frames t+1..T-1
  // given state s at frame t (emission at t excluded).
  std::vector<double> beta(static_cast<std::size_t>(T) * S, kLogZero);
  auto B = [&](int t, int s) -> double& { return beta[static_cast<std::size_t>(t) * S + s]; };
  B(T - 1, S - 1) = 0.0;
  if (S > 1) B(T - 1, S - 2) = 0.0;
  for (int t = T - 2; t >= 0; --t) {
    for (int s = 0; s < S; ++s) {
      double acc = B(t + 1, s) + post(t + 1, label(s));
      if (s + 1 < S) acc = log_add(acc, B(t + 1, s + 1) + post(t + 1, label(s + 1)));
      if (s + 2 < S && can_skip(s + 2)) acc = log_add(acc, B(t + 1, s + 2) + post(t + 1, label(s + 2)));
      B(t, s) = acc;
    }
  }
  // d(-loglik)/d logprob(t, k) = -occupancy(t, k)
  for (int t = 0; t < T; ++t) {
    for (int s = 0; s < S; ++s) {
      const double occ = A(t, s) + B(t, s);
      if (occ == kLogZero) continue;
      result.grad[static_cast<std::size_t>(t) * V + label(s)] -= std::exp(occ - loglik);
    }
  }
  return result;
}

TokenSeq ctc_greedy(const CtcPosterior& post, TokenId blank) {
  std::vector<TokenId> path(static_cast<std::size_t>(post.frames()));
  for (int t = 0; t < post.frames(); ++t) {
    int best = 0;
    for (int k = 1; k < post.vocab(); ++k)
      if (post(t, k) > post(t, best)) best = k;
    path[static_cast<std::size_t>(t)] = best;
  }
  return collapse(path, blank);
}

PrefixState prefix_init(const CtcPosterior& post, TokenId blank) {
  PrefixState st;
  const auto T = static_cast<std::size_t>(post.frames());
  st.nonblank.assign(T, kLogZero);
  st.blank.assign(T, kLogZero);
  double acc = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    acc += post(static_cast<int>(t), blank);
    st.blank[t] = acc;
  }
  return st;
}

double prefix_full_logprob(const PrefixState& state) {
  if (state.blank.empty()) return state.length == 0 ? 0.0 : kLogZero;
  return log_add(state.nonblank.back(), state.blank.back());
}

std::vector<PrefixExtension> prefix_step(const PrefixState& state, std::span<const TokenId> prefix,
                                         std::span<const TokenId> candidates, const CtcPosterior& post,
                                         TokenId blank, TokenId eos) {
  const int T = post.frames();
  if (state.nonblank.size() != static_cast<std::size_t>(T) || state.blank.size() != static_cast<std::size_t>(T))
    throw std::invalid_argument("prefix_step: state length does not match posterior frames");
  if (state.length != static_cast<int>(prefix.size()) || (!prefix.empty() && prefix.back() != state.last))
    throw std::invalid_argument("prefix_step: state does not describe the given prefix");

  // phi(t): probability mass at frame t from which c may start a new label.
  // For c == last(g) the path must pass through a blank first.
  std::vector<double> phi_any(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) phi_any[static_cast<std::size_t>(t)] = log_add(state.nonblank[t], state.blank[t]);

  std::vector<PrefixExtension> out;
  out.reserve(candidates.size());
  for (TokenId c : candidates) {
    PrefixExtension ext;
    ext.token = c;
    if (c == eos) {
      ext.log_prob = prefix_full_logprob(state);
      out.push_back(std::move(ext));
      continue;
    }
    if (c == blank || c < 0 || c >= post.vocab())
      throw std::invalid_argument("prefix_step: invalid candidate " + std::to_string(c));
    const bool repeat = !prefix.empty() && c == state.last;
    auto phi = [&](int t) { return repeat ? state.blank[static_cast<std::size_t>(t)] : phi_any[static_cast<std::size_t>(t)]; };

    PrefixState& ns = ext.state;
    ns.length = state.length + 1;
    ns.last = c;
    ns.nonblank.assign(static_cast<std::size_t>(T), kLogZero);
    ns.blank.assign(static_cast<std::size_t>(T), kLogZero);
    double psi = kLogZero;
    if (T > 0 && prefix.empty()) {
      ns.nonblank[0] = post(0, c);
      psi = ns.nonblank[0];
    }
    for (int t = 1; t < T; ++t) {
      const auto ut = static_cast<std::size_t>(t);
      const double start = phi(t - 1);
      ns.nonblank[ut] = log_add(ns.nonblank[ut - 1], start);
      if (ns.nonblank[ut] != kLogZero) ns.nonblank[ut] += post(t, c);
      const double stay = log_add(ns.nonblank[ut - 1], ns.blank[ut - 1]);
      ns.blank[ut] = stay == kLogZero ? kLogZero : stay + post(t, blank);
      if (start != kLogZero) psi = log_add(psi, start + post(t, c));
    }
    ext.log_prob = psi;
    out.push_back(std::move(ext));
  }
  return out;
}

}  // namespace lipread
