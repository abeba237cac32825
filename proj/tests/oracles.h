#pragma once

// Independent reference computations shared by unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "lipread/ctc.h"
#include "lipread/rng.h"

namespace oracle {

using lipread::CtcPosterior;
using lipread::TokenId;
using lipread::TokenSeq;

inline double log_sum(const std::vector<double>& xs) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : xs) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

inline CtcPosterior random_posterior(int T, int V, lipread::Rng& rng, double spread = 1.5) {
  std::vector<double> logits(static_cast<std::size_t>(T) * V);
  for (double& v : logits) v = spread * rng.normal();
  return CtcPosterior::from_logits(T, V, logits);
}

// Calls fn(path, logprob) for all V^T frame paths.
inline void for_each_path(const CtcPosterior& post, const std::function<void(const TokenSeq&, double)>& fn) {
  const int T = post.frames(), V = post.vocab();
  TokenSeq path(static_cast<std::size_t>(T), 0);
  while (true) {
    double lp = 0.0;
    for (int t = 0; t < T; ++t) lp += post(t, path[static_cast<std::size_t>(t)]);
    fn(path, lp);
    int t = T - 1;
    while (t >= 0 && path[static_cast<std::size_t>(t)] == V - 1) path[static_cast<std::size_t>(t--)] = 0;
    if (t < 0) break;
    ++path[static_cast<std::size_t>(t)];
  }
}

inline TokenSeq naive_collapse(const TokenSeq& path, TokenId blank) {
  TokenSeq out;
  TokenId prev = -1;
  for (TokenId p : path) {
    if (p != prev && p != blank) out.push_back(p);
    prev = p;
  }
  return out;
}

// log sum over paths whose collapse equals `target`.
inline double ctc_logprob(const CtcPosterior& post, const TokenSeq& target, TokenId blank) {
  std::vector<double> terms;
  for_each_path(post, [&](const TokenSeq& p, double lp) {
    if (naive_collapse(p, blank) == target) terms.push_back(lp);
  });
  return log_sum(terms);
}

// log sum over paths whose collapse starts with `prefix`.
inline double prefix_logprob(const CtcPosterior& post, const TokenSeq& prefix, TokenId blank) {
  std::vector<double> terms;
  for_each_path(post, [&](const TokenSeq& p, double lp) {
    const TokenSeq c = naive_collapse(p, blank);
    if (c.size() >= prefix.size() && std::equal(prefix.begin(), prefix.end(), c.begin())) terms.push_back(lp);
  });
  return log_sum(terms);
}

inline double rel_err(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

}  // namespace oracle
