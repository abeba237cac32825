#include <doctest.h>

#include <cmath>
#include <random>

#include "lipread/checkpoint.h"
#include "lipread/error.h"
#include "lipread/model.h"
#include "lipread/trainer.h"
#include "model_fixtures.h"

using namespace lipread;
using namespace lipread::testing;

namespace {

constexpr double kTol = 1e-4;

void check_suite(PosEncoding pe, const std::vector<std::string>& prefixes, double alpha) {
  std::mt19937_64 gen(17);
  Model m = Model::init(tiny_config(pe), 5);
  jitter(m, 6);
  const RoiClip clip = random_clip(4, 12, gen);
  const TokenSeq target{3, 5, 3};
  const GradReport r = model_grad_error(m, clip, target, alpha, prefixes);
  INFO("worst entry " << r.worst_name << " error " << r.worst);
  CHECK(r.checked > 0);
  CHECK(r.worst <= kTol);
}

}  // namespace

TEST_CASE("shapes follow the config") {
  std::mt19937_64 gen(1);
  const Model m = Model::init(ModelConfig{}, 1);
  const RoiClip clip = random_clip(5, 88, gen);
  const Tensor lat = encode_clip(m, clip);
  CHECK(lat.shape() == std::vector<int>{5, 32});
  const CtcPosterior post = ctc_posterior(m, lat);
  CHECK(post.frames() == 5);
  CHECK(post.vocab() == Vocabulary::kSize);
  for (int t = 0; t < 5; ++t) {
    double s = 0.0;
    for (int c = 0; c < post.vocab(); ++c) s += std::exp(post(t, c));
    CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("zero input with zero biases gives zero features before the position code") {
  const ModelConfig cfg = tiny_config();
  const Model m = Model::init(cfg, 2);
  const RoiClip clip(4, 12, 12);
  Graph g(false);
  ParamBinder p(g, m);
  const Tensor& raw = g.value(frontend_forward(p, clip, false));
  for (double v : raw.values()) CHECK(v == 0.0);
  const Tensor& with_pe = g.value(frontend_forward(p, clip, true));
  const Tensor pe = sinusoidal_encoding(4, cfg.d);
  for (std::size_t i = 0; i < pe.size(); ++i) CHECK(with_pe[i] == doctest::Approx(pe[i]).epsilon(1e-15));
}

TEST_CASE("encoder is the identity when every residual branch output is zero") {
  Model m = Model::init(tiny_config(), 3);
  for (auto& p : m.parameters()) {
    const auto& n = p.name;
    const bool branch_out = n.find(".w2") != std::string::npos || n.find(".b2") != std::string::npos ||
                            n.find("att.wo") != std::string::npos || n.find("att.bo") != std::string::npos ||
                            n.find("pw2.") != std::string::npos;
    if (n.rfind("enc.", 0) == 0 && branch_out) p.value.values().assign(p.value.size(), 0.0);
  }
  std::mt19937_64 gen(4);
  const Tensor x = random_tensor({5, 8}, gen);
  Graph g(false);
  ParamBinder p(g, m);
  const Tensor& y = g.value(encoder_forward(p, g.constant(x)));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("frontend gradients match finite differences") { check_suite(PosEncoding::kAbsolute, {"front."}, 0.1); }

TEST_CASE("encoder gradients match finite differences") {
  check_suite(PosEncoding::kAbsolute, {"enc."}, 0.1);
  check_suite(PosEncoding::kRelative, {"enc."}, 0.1);
}

TEST_CASE("decoder gradients match finite differences") { check_suite(PosEncoding::kAbsolute, {"dec."}, 0.1); }

TEST_CASE("hybrid loss gradients match finite differences at every weight") {
  for (double alpha : {0.0, 0.1, 0.5, 1.0}) {
    CAPTURE(alpha);
    check_suite(PosEncoding::kAbsolute, {"front.conv2d2", "enc.0.att", "ctc.", "dec.out"}, alpha);
  }
}

TEST_CASE("hybrid loss weighting") {
  CHECK(hybrid_loss(-2.0, -1.0, 0.1) == doctest::Approx(1.1).epsilon(1e-15));
  CHECK(hybrid_loss(-2.0, -1.0, 1.0) == 2.0);
  CHECK(hybrid_loss(-2.0, -1.0, 0.0) == 1.0);
  CHECK(hybrid_loss(-INFINITY, -1.0, 0.0) == 1.0);
  CHECK_THROWS_AS(hybrid_loss(-2.0, -1.0, 1.5), std::invalid_argument);
}

TEST_CASE("decoder rows are normalized and causal") {
  std::mt19937_64 gen(8);
  Model m = Model::init(tiny_config(), 9);
  jitter(m, 10);
  const Tensor lat = random_tensor({4, 8}, gen);
  const TokenSeq a{4, 7, 9}, b{4, 12, 9};
  const Tensor pa = decoder_forward(m, lat, a), pb = decoder_forward(m, lat, b);
  REQUIRE(pa.rows() == 4);
  for (int r = 0; r < pa.rows(); ++r) {
    double s = 0.0;
    for (int c = 0; c < pa.cols(); ++c) s += std::exp(pa.at(r, c));
    CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
  }
  // Changing the second target only affects rows that can see it.
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < pa.cols(); ++c) CHECK(pa.at(r, c) == pb.at(r, c));
  CHECK(pa.at(2, 9) != pb.at(2, 9));
}

TEST_CASE("incremental decoder step agrees with the full forward") {
  std::mt19937_64 gen(11);
  Model m = Model::init(tiny_config(), 12);
  jitter(m, 13);
  const Tensor lat = random_tensor({4, 8}, gen);
  std::uniform_int_distribution<int> tok(1, Vocabulary::kSize - 2);
  for (int trial = 0; trial < 20; ++trial) {
    TokenSeq full{tok(gen), tok(gen), tok(gen)};
    const Tensor rows = decoder_forward(m, lat, full);
    for (std::size_t len = 0; len <= full.size(); ++len) {
      const TokenSeq prefix(full.begin(), full.begin() + static_cast<std::ptrdiff_t>(len));
      const auto step = decoder_score_step(m, lat, prefix);
      double s = 0.0;
      for (int c = 0; c < rows.cols(); ++c) {
        CHECK(std::abs(step[static_cast<std::size_t>(c)] - rows.at(static_cast<int>(len), c)) <= 1e-9);
        s += std::exp(step[static_cast<std::size_t>(c)]);
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
  CHECK_THROWS(decoder_score_step(m, lat, TokenSeq{3, Vocabulary::kSize - 1}));
}

TEST_CASE("one-cycle schedule endpoints") {
  const long S = 101;
  const double peak = 1e-3;
  CHECK(std::abs(one_cycle_lr(0, S, peak) - peak / 25.0) <= 1e-12);
  CHECK(std::abs(one_cycle_lr(30, S, peak) - peak) <= 1e-12);
  CHECK(std::abs(one_cycle_lr(S - 1, S, peak)) <= 1e-12);
  for (long s = 1; s <= 30; ++s) CHECK(one_cycle_lr(s, S, peak) > one_cycle_lr(s - 1, S, peak));
  for (long s = 31; s < S; ++s) CHECK(one_cycle_lr(s, S, peak) < one_cycle_lr(s - 1, S, peak));
}

TEST_CASE("invalid configs are rejected") {
  ModelConfig cfg = tiny_config();
  cfg.heads = 3;
  CHECK_THROWS_AS(Model::init(cfg, 0), std::invalid_argument);
  cfg = tiny_config();
  cfg.spatial_kernel = 4;
  CHECK_THROWS_AS(Model::init(cfg, 0), std::invalid_argument);
}

TEST_CASE("checkpoint round trip") {
  Model m = Model::init(tiny_config(PosEncoding::kRelative), 14);
  jitter(m, 15);
  const NormStats norm{0.25, 2.0};
  const auto bytes = serialize_checkpoint(m, "0123456789abcdef", norm);
  const Checkpoint ck = parse_checkpoint(bytes, "mem");
  CHECK(ck.vocab_hash == "0123456789abcdef");
  CHECK(ck.norm.mean == 0.25);
  CHECK(ck.norm.variance == 2.0);
  CHECK(ck.model.config().pos_encoding == PosEncoding::kRelative);
  REQUIRE(ck.model.parameters().size() == m.parameters().size());
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    const auto& a = m.parameters()[i].value;
    const auto& b = ck.model.parameters()[i].value;
    REQUIRE(a.shape() == b.shape());
    for (std::size_t j = 0; j < a.size(); ++j) CHECK(b[j] == static_cast<double>(static_cast<float>(a[j])));
  }
  CHECK(serialize_checkpoint(ck.model, ck.vocab_hash, ck.norm) == bytes);
}

TEST_CASE("corrupt checkpoints are data errors") {
  const Model m = Model::init(tiny_config(), 16);
  auto bytes = serialize_checkpoint(m, "0123456789abcdef", {0.0, 1.0});
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(parse_checkpoint(bad, "mem"), DataError);
  bytes.resize(bytes.size() / 2);
  CHECK_THROWS_AS(parse_checkpoint(bytes, "mem"), DataError);
}

TEST_CASE("training is deterministic and lowers the loss") {
  std::mt19937_64 gen(18);
  std::vector<TrainExample> data;
  for (int i = 0; i < 3; ++i) data.push_back({"u" + std::to_string(i), random_clip(6, 14, gen), TokenSeq{3, 4}});
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.lr = 5e-3;
  cfg.seed = 3;
  cfg.augment_cfg.crop = 12;
  auto run = [&] {
    Model m = Model::init(tiny_config(), 19);
    auto stats = train(m, data, cfg);
    return std::make_pair(serialize_checkpoint(m, "00000000000000ff", {0.0, 1.0}), stats);
  };
  const auto [a, stats] = run();
  const auto [b, unused] = run();
  CHECK(a == b);
  REQUIRE(stats.size() == 15);
  CHECK(stats.back().mean_loss < stats.front().mean_loss);
}
