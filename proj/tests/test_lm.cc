#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "lipread/lm.h"

using namespace lipread;

namespace {

CharNgramLm tiny(int order) {
  const std::vector<std::string> lines{"la casa", "la mesa", "el sol"};
  return train_charlm(lines, Vocabulary::canonical(), order, 0.1);
}

}  // namespace

TEST_CASE("distributions are normalized") {
  for (int order : {1, 2, 3, 5}) {
    const CharNgramLm lm = tiny(order);
    for (const TokenSeq& prefix : {TokenSeq{}, encode("la"), encode("la c"), encode("zzz")}) {
      const auto d = lm.distribution(lm.state_after(prefix));
      REQUIRE(d.size() == 37);
      double s = 0.0;
      for (double v : d) s += std::exp(v);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("add-k estimate matches hand counts") {
  const CharNgramLm lm = tiny(2);
  // 'l' is followed by a, a, space and eos in the corpus.
  const LmState st = lm.state_after(encode("l"));
  const auto [lp_a, next] = lm.score_step(st, *Vocabulary::canonical().find("a"));
  CHECK(lp_a == doctest::Approx(std::log((2 + 0.1) / (4 + 37 * 0.1))));
  CHECK(lm.score_step(st, 36).first == doctest::Approx(std::log((1 + 0.1) / (4 + 37 * 0.1))));
  CHECK(lm.score_step(st, 1).first == doctest::Approx(std::log((1 + 0.1) / (4 + 37 * 0.1))));
  CHECK(lm.score_step(st, 5).first == doctest::Approx(std::log(0.1 / (4 + 37 * 0.1))));
  // Sentence start context is eos padding: 'l' starts two of three sentences.
  CHECK(lm.score_step(lm.initial_state(), *Vocabulary::canonical().find("l")).first ==
        doctest::Approx(std::log(2.1 / (3 + 3.7))));
  // unseen context: uniform
  const LmState unseen = lm.state_after(encode("z"));
  CHECK(lm.score_step(unseen, 7).first == doctest::Approx(-std::log(37.0)));
}

TEST_CASE("sentence log-probability is the sum of steps including eos") {
  const CharNgramLm lm = tiny(3);
  const TokenSeq s = encode("la sol");
  LmState st = lm.initial_state();
  double sum = 0.0;
  for (TokenId id : s) {
    auto [lp, next] = lm.score_step(st, id);
    sum += lp;
    st = next;
  }
  sum += lm.score_step(st, 36).first;
  CHECK(lm.sentence_logprob(s) == doctest::Approx(sum).epsilon(1e-14));
  const std::vector<TokenSeq> sents{s};
  CHECK(perplexity(lm, sents) == doctest::Approx(std::exp(-sum / (s.size() + 1))));
}

TEST_CASE("in-domain training lowers perplexity on in-domain text") {
  const std::vector<std::string> train{"la casa es grande", "la casa es roja", "el perro es grande"};
  const CharNgramLm lm = train_charlm(train, Vocabulary::canonical(), 4, 0.1);
  const std::vector<TokenSeq> in{encode("la casa es grande")}, out{encode("xyz qwv")};
  CHECK(perplexity(lm, in) < perplexity(lm, out));
}

TEST_CASE("save/load round trip is exact") {
  const CharNgramLm lm = tiny(3);
  const auto path = (std::filesystem::temp_directory_path() / "lipread_lm_test.txt").string();
  lm.save(path, "order = 3\nnote = test");
  const CharNgramLm back = CharNgramLm::load(path);
  CHECK(back.order() == 3);
  CHECK(back.vocab_hash() == Vocabulary::canonical().hash());
  for (const TokenSeq& prefix : {TokenSeq{}, encode("la"), encode("me"), encode("qq")})
    CHECK(back.distribution(back.state_after(prefix)) == lm.distribution(lm.state_after(prefix)));
  std::filesystem::remove(path);
}

TEST_CASE("bad arguments") {
  const std::vector<std::string> none;
  CHECK_THROWS(train_charlm(none, Vocabulary::canonical()));
  const std::vector<std::string> one{"a"};
  CHECK_THROWS(train_charlm(one, Vocabulary::canonical(), 0));
  CHECK_THROWS(train_charlm(one, Vocabulary::canonical(), 3, 0.0));
}
