#include "lipread/lm.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "lipread/error.h"
#include "lipread/io.h"

namespace lipread {

CharNgramLm CharNgramLm::train(std::span<const TokenSeq> sentences, int order, double k, int vocab_size,
                               TokenId eos, std::string vocab_hash) {
  if (sentences.empty()) throw std::invalid_argument("train_charlm: empty corpus");
  if (order < 1) throw std::invalid_argument("train_charlm: order must be >= 1");
  if (!(k > 0.0)) throw std::invalid_argument("train_charlm: smoothing constant must be > 0");
  CharNgramLm lm;
  lm.order_ = order;
  lm.k_ = k;
  lm.vocab_size_ = vocab_size;
  lm.eos_ = eos;
  lm.vocab_hash_ = std::move(vocab_hash);

  std::map<std::vector<TokenId>, std::vector<double>> counts;
  const std::size_t h = static_cast<std::size_t>(order - 1);
  for (const auto& sentence : sentences) {
    std::vector<TokenId> padded(h, eos);
    for (TokenId id : sentence) {
      if (id < 0 || id >= vocab_size) throw std::invalid_argument("train_charlm: token out of range");
      padded.push_back(id);
    }
    padded.push_back(eos);
    for (std::size_t i = h; i < padded.size(); ++i) {
      std::vector<TokenId> ctx(padded.begin() + static_cast<std::ptrdiff_t>(i - h),
                               padded.begin() + static_cast<std::ptrdiff_t>(i));
      auto& row = counts[ctx];
      if (row.empty()) row.assign(static_cast<std::size_t>(vocab_size), 0.0);
      row[static_cast<std::size_t>(padded[i])] += 1.0;
    }
  }
  for (auto& [ctx, row] : counts) {
    double total = 0.0;
    for (double c : row) total += c;
    const double denom = total + vocab_size * k;
    std::vector<double> lp(row.size());
    for (std::size_t c = 0; c < row.size(); ++c) lp[c] = std::log((row[c] + k) / denom);
    lm.table_.emplace(ctx, std::move(lp));
  }
  return lm;
}

LmState CharNgramLm::initial_state() const {
  return LmState{std::vector<TokenId>(static_cast<std::size_t>(order_ - 1), eos_)};
}

LmState CharNgramLm::state_after(std::span<const TokenId> prefix) const {
  LmState st = initial_state();
  for (TokenId id : prefix) st = score_step(st, id).second;
  return st;
}

std::vector<double> CharNgramLm::distribution(const LmState& state) const {
  const auto it = table_.find(state.context);
  if (it != table_.end()) return it->second;
  return std::vector<double>(static_cast<std::size_t>(vocab_size_), -std::log(static_cast<double>(vocab_size_)));
}

std::pair<double, LmState> CharNgramLm::score_step(const LmState& state, TokenId token) const {
  if (token < 0 || token >= vocab_size_) throw std::invalid_argument("lm_score_step: token out of range");
  const auto it = table_.find(state.context);
  const double lp = it != table_.end() ? it->second[static_cast<std::size_t>(token)]
                                       : -std::log(static_cast<double>(vocab_size_));
  LmState next = state;
  if (order_ > 1) {
    next.context.erase(next.context.begin());
    next.context.push_back(token);
  }
  return {lp, std::move(next)};
}

double CharNgramLm::sentence_logprob(std::span<const TokenId> sentence) const {
  LmState st = initial_state();
  double total = 0.0;
  for (TokenId id : sentence) {
    auto [lp, next] = score_step(st, id);
    total += lp;
    st = std::move(next);
  }
  return total + score_step(st, eos_).first;
}

void CharNgramLm::save(const std::string& path, const std::string& header_comment) const {
  std::ostringstream out;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", k_);
  out << "LPLM " << order_ << ' ' << buf << ' ' << vocab_hash_ << '\n';
  out << comment_block(header_comment);
  for (const auto& [ctx, lp] : table_) {
    for (std::size_t i = 0; i < ctx.size(); ++i) out << (i ? " " : "") << ctx[i];
    out << '\t';
    for (std::size_t i = 0; i < lp.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", lp[i]);
      out << (i ? " " : "") << buf;
    }
    out << '\n';
  }
  write_text_file(path, out.str());
}

CharNgramLm CharNgramLm::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open LM file " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty LM file");
  std::istringstream header(line);
  std::string magic;
  CharNgramLm lm;
  header >> magic >> lm.order_ >> lm.k_ >> lm.vocab_hash_;
  if (magic != "LPLM" || !header || lm.order_ < 1) throw DataError(path + ": bad LM header");
  lm.eos_ = Vocabulary::kSize - 1;
  lm.vocab_size_ = Vocabulary::kSize;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError(path + ":" + std::to_string(lineno) + ": missing tab");
    std::vector<TokenId> ctx;
    std::istringstream cs(line.substr(0, tab));
    for (TokenId id; cs >> id;) ctx.push_back(id);
    if (ctx.size() != static_cast<std::size_t>(lm.order_ - 1))
      throw DataError(path + ":" + std::to_string(lineno) + ": context length does not match order");
    std::vector<double> lp;
    lp.reserve(static_cast<std::size_t>(lm.vocab_size_));
    std::istringstream ls(line.substr(tab + 1));
    for (std::string tok; ls >> tok;) lp.push_back(std::strtod(tok.c_str(), nullptr));
    if (lp.size() != static_cast<std::size_t>(lm.vocab_size_))
      throw DataError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(lm.vocab_size_) +
                      " log-probabilities");
    lm.table_.emplace(std::move(ctx), std::move(lp));
  }
  return lm;
}

CharNgramLm train_charlm(std::span<const std::string> lines, const Vocabulary& vocab, int order, double k) {
  std::vector<TokenSeq> sentences;
  sentences.reserve(lines.size());
  for (const auto& line : lines) sentences.push_back(encode(line, vocab));
  return CharNgramLm::train(sentences, order, k, vocab.size(), vocab.eos_id(), vocab.hash());
}

double perplexity(const CharNgramLm& lm, std::span<const TokenSeq> sentences) {
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& s : sentences) {
    total += lm.sentence_logprob(s);
    tokens += s.size() + 1;
  }
  if (tokens == 0) throw std::invalid_argument("perplexity: empty text");
  return std::exp(-total / static_cast<double>(tokens));
}

}  // namespace lipread
