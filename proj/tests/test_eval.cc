#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "lipread/eval.h"
#include "lipread/rng.h"

using namespace lipread;

namespace {

std::string one_decimal(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", v);
  return buf;
}

struct Golden {
  const char* ref;
  const char* hyp;
  const char* wer;
  const char* cer;
};

}  // namespace

TEST_CASE("golden WER/CER pairs") {
  const Golden cases[] = {
      {"el chino vino a la escuela de intercambio", "sino vino a la escuela de este cambio", "50.0", "19.5"},
      {"a partir de mañana lunes a las doce de la noche", "a partir de mañana lunes a las doce de la noche", "0.0",
       "0.0"},
      {"estan limpiando tambien el barro y evaluando los destrozos",
       "se esta inspirando tambien el perro y evaluando seis socios", "66.7", "32.8"},
      {"cumplen un mes en prision", "cumple un mes en prision", "20.0", "4.0"},
      {"pena con hasta tres años de prision", "pero esta traslados de prision", "71.4", "28.6"},
      {"y hasta mañana muy buenas noches", "esta mañana muy buenas noches", "33.3", "12.5"},
      {"tu hermano y el mio se encontraron en el metro", "tu hermano y el vino se encontraron en el medio", "20.0",
       "8.7"},
      {"la pelicula que vimos era una comedia", "la pelicula que vimos era una comedia", "0.0", "0.0"},
  };
  for (const auto& g : cases) {
    const UttResult r = score_utterance("x", g.ref, g.hyp);
    CHECK(one_decimal(r.wer()) == g.wer);
    CHECK(one_decimal(r.cer()) == g.cer);
  }
}

namespace {

// Plain Levenshtein distance, no tie-breaking.
int levenshtein(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::vector<int>> d(a.size() + 1, std::vector<int>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = static_cast<int>(i);
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i)
    for (std::size_t j = 1; j <= b.size(); ++j)
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] != b[j - 1])});
  return d[a.size()][b.size()];
}

}  // namespace

TEST_CASE("error totals equal the minimum edit distance") {
  const char* pairs[][2] = {
      {"se le aparece en la cabeza una imagen", "aparece que dice una imagen"},
      {"pena con hasta tres años de prision", "pero esta traslados de prision"},
      {"la pelicula que vimos era una comedia", "la comedia"},
      {"", "hola"},
  };
  for (const auto& p : pairs) {
    const UttResult r = score_utterance("x", p[0], p[1]);
    CHECK(r.words.errors() == levenshtein(split_words(p[0]), split_words(p[1])));
    CHECK(r.chars.errors() == levenshtein(split_characters(p[0]), split_characters(p[1])));
  }
  // 5 of 8 words, 16 of 37 characters
  const UttResult r = score_utterance("x", pairs[0][0], pairs[0][1]);
  CHECK(one_decimal(r.wer()) == "62.5");
  CHECK(one_decimal(r.cer()) == "43.2");
}

TEST_CASE("edit distance counts") {
  auto w = [](const char* s) { return split_words(s); };
  CHECK(edit_distance(w("a b c"), w("a b c")) == EditCounts{0, 0, 0});
  CHECK(edit_distance(w("a b c"), w("a x c")) == EditCounts{1, 0, 0});
  CHECK(edit_distance(w("a b c"), w("a c")) == EditCounts{0, 1, 0});
  CHECK(edit_distance(w("a c"), w("a b c")) == EditCounts{0, 0, 1});
  CHECK(edit_distance(w(""), w("a b")) == EditCounts{0, 0, 2});
  CHECK(edit_distance(w("a b"), w("")) == EditCounts{0, 2, 0});
  // same cost via 2 substitutions or a deletion + insertion: substitutions win
  CHECK(edit_distance(w("a b"), w("b c")) == EditCounts{2, 0, 0});
  CHECK(split_characters("añ b") == std::vector<std::string>{"a", "ñ", " ", "b"});
}

TEST_CASE("rates above 100 and empty references") {
  const UttResult r = score_utterance("x", "a", "b c d");
  CHECK(r.wer() == doctest::Approx(300.0));
  const UttResult e = score_utterance("y", "", "b");
  CHECK(std::isinf(e.wer()));
  CHECK(score_utterance("z", "", "").wer() == 0.0);
  const std::vector<UttResult> both{r, e};
  CHECK(wer(both) == doctest::Approx(400.0));
}

TEST_CASE("pooled rates") {
  const std::vector<UttResult> rs{score_utterance("1", "a b c d", "a b c d"), score_utterance("2", "a b", "a x")};
  CHECK(wer(rs) == doctest::Approx(100.0 / 6.0));
}

TEST_CASE("bootstrap degenerate corpus and determinism") {
  std::vector<ErrorCount> same(30, ErrorCount{1, 4});
  const BootstrapResult b = bootstrap_ci(same, 500, 1);
  CHECK(b.wer == doctest::Approx(25.0));
  CHECK(b.lo == doctest::Approx(25.0));
  CHECK(b.hi == doctest::Approx(25.0));

  Rng rng(3);
  std::vector<ErrorCount> mixed;
  for (int i = 0; i < 40; ++i) mixed.emplace_back(static_cast<long>(rng.uniform_int(5)), 5 + static_cast<long>(rng.uniform_int(5)));
  const BootstrapResult a1 = bootstrap_ci(mixed, 2000, 9, 1);
  const BootstrapResult a4 = bootstrap_ci(mixed, 2000, 9, 4);
  CHECK(a1.lo == a4.lo);
  CHECK(a1.hi == a4.hi);
  CHECK(a1.lo < a1.wer);
  CHECK(a1.wer < a1.hi);
  CHECK_THROWS(bootstrap_ci(mixed, 0, 1));
}

TEST_CASE("histogram agrees with independent binning") {
  Rng rng(4);
  std::vector<double> v;
  for (int i = 0; i < 500; ++i) v.push_back(rng.uniform(0.0, 130.0));
  v.push_back(0.0);
  v.push_back(10.0);
  v.push_back(100.0);
  v.push_back(90.0);
  std::array<int, 10> expect{};
  for (double x : v) {
    int b = 0;
    while (b < 9 && x >= 10.0 * (b + 1)) ++b;
    ++expect[static_cast<std::size_t>(b)];
  }
  CHECK(wer_histogram(v) == expect);
  const std::vector<double> bad{5.0, std::nan("")};
  CHECK_THROWS(wer_histogram(bad));
  const std::vector<double> neg{-1.0};
  CHECK_THROWS(wer_histogram(neg));
}

TEST_CASE("zipf slope of an exact Zipf corpus") {
  std::vector<std::string> toks;
  const int n = 60;  // divisible by 1..6, so counts are exactly 60 / r
  for (int r = 1; r <= 6; ++r)
    for (int k = 0; k < n / r; ++k) toks.push_back("w" + std::to_string(r));
  const ZipfCurve z = zipf_curve(toks);
  CHECK(z.ranked[0].first == "w1");
  CHECK(std::abs(z.slope + 1.0) <= 1e-6);
}

TEST_CASE("zipf ties are alphabetical") {
  const std::vector<std::string> toks{"b", "a", "c", "c"};
  const ZipfCurve z = zipf_curve(toks);
  CHECK(z.ranked[0].first == "c");
  CHECK(z.ranked[1].first == "a");
  CHECK(z.ranked[2].first == "b");
}

TEST_CASE("coverage on the six-token example") {
  const auto train = split_words("a a a b b c");
  const auto test = split_words("a b d");
  const CoverageStats s = coverage_stats(train, test, 2);
  CHECK(s.train_v == 3);
  CHECK(s.test_v == 3);
  CHECK(s.test_rw == 3);
  for (const Coverage* c : {&s.test_v_train_v, &s.test_v_top_v, &s.test_rw_train_v, &s.test_rw_top_v}) {
    CHECK(c->count == 2);
    CHECK(format_percent(c->percent) == "66.7%");
  }
  const CoverageStats clamped = coverage_stats(train, test, 10);
  CHECK(clamped.top_n == 3);
  const CoverageStats self = coverage_stats(train, train, 1);
  CHECK(self.test_v_train_v.percent == 100.0);
  CHECK(self.test_rw_train_v.percent == 100.0);
  CHECK(self.test_rw_top_v.count == 3);
}
