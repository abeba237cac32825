// Acceptance harness: one PASS/FAIL line per criterion. Pass criterion
// numbers as arguments to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "lipread/checkpoint.h"
#include "lipread/cli.h"
#include "lipread/ctc.h"
#include "lipread/decoder.h"
#include "lipread/eval.h"
#include "lipread/io.h"
#include "lipread/lm.h"
#include "lipread/model.h"
#include "lipread/synth.h"
#include "lipread/trainer.h"
#include "model_fixtures.h"
#include "oracles.h"
#include "tempdir.h"
#include "toy_scorers.h"

using namespace lipread;
using namespace lipread::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, int digits = 3) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

// Quiet in-process CLI call.
int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "lipread-cli");
  std::ostringstream sink;
  auto* err = std::cerr.rdbuf(sink.rdbuf());
  auto* out = std::cout.rdbuf(sink.rdbuf());
  const int code = run_cli(args);
  std::cerr.rdbuf(err);
  std::cout.rdbuf(out);
  if (code != 0) std::cerr << "command failed (" << code << "): " << args[1] << "\n" << sink.str();
  return code;
}

// --- 1 -----------------------------------------------------------------------

Outcome ctc_exactness() {
  Rng rng(101);
  const int V = 4;
  double worst_value = 0.0, worst_grad = 0.0;
  int targets = 0;
  std::vector<TokenSeq> ys{{}};
  for (std::size_t i = 0; i < ys.size(); ++i)
    if (ys[i].size() < 3)
      for (TokenId c = 1; c < V; ++c) {
        TokenSeq s = ys[i];
        s.push_back(c);
        ys.push_back(s);
      }
  bool reachability_ok = true;
  for (int T = 1; T <= 5; ++T) {
    std::vector<double> logits(static_cast<std::size_t>(T) * V);
    for (double& v : logits) v = 1.5 * rng.normal();
    const CtcPosterior post = CtcPosterior::from_logits(T, V, logits);
    for (const TokenSeq& y : ys) {
      ++targets;
      const double brute = oracle::ctc_logprob(post, y, 0);
      const CtcLossResult r = ctc_loss(post, y, 0);
      if (!std::isfinite(brute)) {
        reachability_ok = reachability_ok && !r.reachable;
        continue;
      }
      worst_value = std::max(worst_value, std::abs(-r.nll - brute));
      for (std::size_t i = 0; i < logits.size(); ++i) {
        const double analytic = r.grad[i] + std::exp(post.logprobs()[i]);
        const double h = 1e-5;
        auto nll_at = [&](double delta) {
          auto l = logits;
          l[i] += delta;
          return ctc_loss(CtcPosterior::from_logits(T, V, l), y, 0, false).nll;
        };
        worst_grad = std::max(worst_grad, oracle::rel_err(analytic, (nll_at(h) - nll_at(-h)) / (2 * h), 1e-3));
      }
    }
  }
  return {reachability_ok && worst_value <= 1e-9 && worst_grad <= 1e-5,
          std::to_string(targets) + " (T, y) pairs, max |dlog| " + num(worst_value) + ", max grad rel err " +
              num(worst_grad)};
}

// --- 2 -----------------------------------------------------------------------

Outcome prefix_conservation() {
  Rng rng(202);
  const int V = 4;
  const TokenId eos = V;  // eos sits outside the posterior columns
  double worst = 0.0;
  long checked = 0;
  for (int inst = 0; inst < 100; ++inst) {
    const CtcPosterior post = oracle::random_posterior(4, V, rng);
    struct Item {
      TokenSeq g;
      PrefixState s;
      double lp;
    };
    std::vector<Item> stack{{{}, prefix_init(post, 0), 0.0}};
    std::vector<TokenId> cands{1, 2, 3, eos};
    while (!stack.empty()) {
      Item it = std::move(stack.back());
      stack.pop_back();
      const auto ext = prefix_step(it.s, it.g, cands, post, 0, eos);
      double total = 0.0;
      for (const auto& e : ext) total += std::exp(e.log_prob);
      worst = std::max(worst, std::abs(total - std::exp(it.lp)));
      ++checked;
      if (it.g.size() == 3) continue;
      for (const auto& e : ext) {
        if (e.token == eos) continue;
        TokenSeq g = it.g;
        g.push_back(e.token);
        stack.push_back({g, e.state, e.log_prob});
      }
    }
  }
  return {worst <= 1e-9, std::to_string(checked) + " prefixes over 100 posteriors, max deviation " + num(worst)};
}

// --- 3 -----------------------------------------------------------------------

Outcome beam_oracle() {
  const double lambdas[] = {0.0, 0.1, 0.5, 1.0};
  const double betas[] = {0.0, 0.4};
  const TokenSpace space{6, 0, 5};  // blank, four labels, eos
  int agree = 0;
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    std::mt19937_64 gen(3000 + i);
    const CtcPosterior post = random_ctc(4, space.size, gen);
    const TableScorer attn(7000 + i, space.size), lm(9000 + i, space.size);
    DecodeConfig cfg;
    cfg.lambda = lambdas[i % 4];
    cfg.beta = betas[(i / 4) % 2];
    cfg.max_len = 3;
    cfg.beam = 64;  // 4^3
    const DecodeInputs in{space, &post, &attn, &lm};
    const auto nbest = beam_search(in, cfg);
    const Hypothesis ex = exhaustive_decode(in, cfg);
    const double diff = std::abs(nbest.front().combined - ex.combined);
    worst = std::max(worst, diff);
    if (nbest.front().prefix == ex.prefix && diff <= 1e-9) ++agree;
  }
  return {agree == 100, std::to_string(agree) + "/100 instances agree, max score gap " + num(worst)};
}

// --- 4 -----------------------------------------------------------------------

Outcome golden_metrics() {
  struct Row {
    const char *ref, *hyp, *wer, *cer;
  };
  const Row rows[] = {
      {"pena con hasta tres años de prision", "pero esta traslados de prision", "71.4%", "28.6%"},
      {"y hasta mañana muy buenas noches", "esta mañana muy buenas noches", "33.3%", "12.5%"},
      {"tu hermano y el mio se encontraron en el metro", "tu hermano y el vino se encontraron en el medio", "20.0%",
       "8.7%"},
      {"la pelicula que vimos era una comedia", "la pelicula que vimos era una comedia", "0.0%", "0.0%"},
      {"se le aparece en la cabeza una imagen", "aparece que dice una imagen", "75.0%", "45.9%"},
      {"estan limpiando tambien el barro y evaluando los destrozos",
       "se esta inspirando tambien el perro y evaluando seis socios", "66.7%", "32.8%"},
  };
  Outcome o;
  int ok = 0;
  for (const auto& r : rows) {
    const UttResult u = score_utterance("g", r.ref, r.hyp);
    const std::string w = format_percent(u.wer()), c = format_percent(u.cer());
    if (w == r.wer && c == r.cer) {
      ++ok;
    } else {
      o.pass = false;
      o.detail += std::string("; '") + r.ref + "' gives " + w + "/" + c + ", expected " + r.wer + "/" + r.cer;
    }
  }
  o.detail = std::to_string(ok) + "/6 rows exact" + o.detail;
  return o;
}

// --- 5 -----------------------------------------------------------------------

Outcome bootstrap_validity() {
  const std::vector<ErrorCount> same(25, {3, 10});
  const BootstrapResult flat = bootstrap_ci(same, 1000, 1);
  const bool zero_width = flat.lo == flat.hi && flat.lo == flat.wer && flat.wer == 30.0;

  // Each word is wrong with probability p, so the true corpus WER is 100 p.
  const double p = 0.3, truth = 100.0 * p;
  const int corpora = 500, utterances = 100;
  int covered = 0;
  for (int k = 0; k < corpora; ++k) {
    Rng rng = Rng::derive(55, static_cast<uint64_t>(k));
    std::vector<ErrorCount> counts;
    for (int u = 0; u < utterances; ++u) {
      const long words = 5 + static_cast<long>(rng.uniform_int(11));
      long errors = 0;
      for (long w = 0; w < words; ++w) errors += rng.bernoulli(p);
      counts.push_back({errors, words});
    }
    const BootstrapResult b = bootstrap_ci(counts, 2000, static_cast<uint64_t>(k));
    covered += b.lo <= truth && truth <= b.hi;
  }
  const double rate = 100.0 * covered / corpora;
  return {zero_width && rate >= 93.0 && rate <= 97.0,
          std::string("degenerate interval ") + (zero_width ? "zero-width" : "NOT zero-width") + ", coverage " +
              std::to_string(covered) + "/" + std::to_string(corpora) + " = " + num(rate) + "%"};
}

// --- 6 -----------------------------------------------------------------------

Outcome gradient_suite() {
  std::mt19937_64 gen(606);
  const RoiClip clip = random_clip(4, 12, gen);
  const TokenSeq target{3, 5, 3};
  struct Suite {
    const char* name;
    PosEncoding pe;
    std::vector<std::string> prefixes;
    double alpha;
  };
  const Suite suites[] = {
      {"frontend", PosEncoding::kAbsolute, {"front."}, 0.1},
      {"encoder", PosEncoding::kAbsolute, {"enc."}, 0.1},
      {"encoder-relative", PosEncoding::kRelative, {"enc."}, 0.1},
      {"decoder", PosEncoding::kAbsolute, {"dec."}, 0.1},
      {"hybrid a=0", PosEncoding::kAbsolute, {""}, 0.0},
      {"hybrid a=0.1", PosEncoding::kAbsolute, {""}, 0.1},
      {"hybrid a=0.5", PosEncoding::kAbsolute, {""}, 0.5},
      {"hybrid a=1", PosEncoding::kAbsolute, {""}, 1.0},
  };
  Outcome o;
  std::size_t scalars = 0;
  double worst = 0.0;
  for (const auto& s : suites) {
    Model m = Model::init(tiny_config(s.pe), 61);
    jitter(m, 62);
    const GradReport r = model_grad_error(m, clip, target, s.alpha, s.prefixes);
    scalars += r.checked;
    worst = std::max(worst, r.worst);
    if (r.worst > 1e-4 || r.checked == 0) {
      o.pass = false;
      o.detail += std::string("; ") + s.name + " worst " + num(r.worst) + " at " + r.worst_name;
    }
  }
  o.detail = "d=8 T=4 L=3, " + std::to_string(scalars) + " scalars checked, max rel err " + num(worst) + o.detail;
  return o;
}

// --- 7 -----------------------------------------------------------------------

struct Corpus {
  std::vector<TrainExample> examples;
  std::vector<std::string> texts;
};

Corpus load_corpus(const std::string& data_dir) {
  const auto entries = read_manifest(data_dir + "/manifest.tsv");
  std::vector<RoiClip> raw;
  for (const auto& e : entries) raw.push_back(to_clip(read_lrv1(e.frames_path)));
  NormStats norm = fit_norm_stats(raw);
  norm = {static_cast<double>(static_cast<float>(norm.mean)), static_cast<double>(static_cast<float>(norm.variance))};
  Corpus c;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    apply_norm(raw[i], norm);
    c.examples.push_back({entries[i].id, raw[i], encode(entries[i].transcript, Vocabulary::canonical())});
    c.texts.push_back(entries[i].transcript);
  }
  return c;
}

std::vector<std::string> greedy_texts(const Model& m, const Corpus& c) {
  std::vector<std::string> out;
  for (const auto& ex : c.examples) {
    const CtcPosterior post = ctc_posterior(m, encode_clip(m, eval_view(ex.clip)));
    out.push_back(decode(ctc_greedy(post, 0), Vocabulary::canonical()));
  }
  return out;
}

std::vector<UttResult> score_all(const Corpus& c, const std::vector<std::string>& hyps) {
  std::vector<UttResult> rs;
  for (std::size_t i = 0; i < hyps.size(); ++i) rs.push_back(score_utterance(c.examples[i].id, c.texts[i], hyps[i]));
  return rs;
}

Outcome learnability(double budget_s) {
  const auto t0 = Clock::now();
  TempDir dir("accept7");
  if (cli({"synth-data", "--out", dir / "raw", "--utterances", "20", "--noise_std", "0"}) != 0 ||
      cli({"preprocess", "--manifest", dir / "raw/manifest.tsv", "--out", dir / "data"}) != 0)
    return {false, "corpus preparation failed"};
  const Corpus corpus = load_corpus(dir / "data");

  TrainConfig tc;
  tc.epochs = 200;
  tc.alpha = 0.1;
  tc.lr = 2e-3;
  tc.seed = 0;
  double train_cer = 100.0;
  int epochs_run = 0;
  tc.on_epoch = [&](const Model& m, const EpochStats& st) {
    epochs_run = st.epoch;
    if (st.epoch % 5 != 0) return true;
    train_cer = cer(score_all(corpus, greedy_texts(m, corpus)));
    std::clog << "  epoch " << st.epoch << " loss " << num(st.mean_loss) << " greedy CER " << num(train_cer)
              << "% (" << num(seconds_since(t0)) << " s)\n";
    // Leave room for the final decoding pass inside the time budget.
    return train_cer > 5.0 && seconds_since(t0) < budget_s - 60.0;
  };
  Model model = Model::init(ModelConfig{}, tc.seed);
  std::ostringstream epoch_log;
  auto* err = std::cerr.rdbuf(epoch_log.rdbuf());
  try {
    train(model, corpus.examples, tc);
  } catch (...) {
    std::cerr.rdbuf(err);
    throw;
  }
  std::cerr.rdbuf(err);

  const auto greedy = score_all(corpus, greedy_texts(model, corpus));
  train_cer = cer(greedy);
  const CharNgramLm lm = train_charlm(corpus.texts, Vocabulary::canonical(), 5, 0.1);
  const NgramLmScorer lm_scorer(lm);
  const DecodeConfig dc;  // lambda 0.1, beta 0.4, beam 10
  std::vector<std::string> joint_hyps;
  for (const auto& ex : corpus.examples) {
    const Tensor lat = encode_clip(model, eval_view(ex.clip));
    const CtcPosterior post = ctc_posterior(model, lat);
    const ModelAttentionScorer attn(model, lat);
    const auto nbest = beam_search({TokenSpace{}, &post, &attn, &lm_scorer}, dc);
    joint_hyps.push_back(decode(nbest.front().prefix, Vocabulary::canonical()));
  }
  const auto joint = score_all(corpus, joint_hyps);
  const double wg = wer(greedy), wj = wer(joint);
  return {train_cer <= 5.0 && wj < wg,
          std::to_string(epochs_run) + " epochs, training CER " + num(train_cer) + "%, WER greedy " + num(wg) +
              "% vs joint " + num(wj) + "%"};
}

// --- 8 -----------------------------------------------------------------------

struct NbestRow {
  std::string id;
  int rank;
  double combined, s_ctc, s_attn, s_lm;
  std::string text;
};

std::vector<NbestRow> read_nbest(const std::string& path) {
  std::vector<NbestRow> rows;
  std::istringstream in(read_text_file(path));
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    const auto f = split(line, '\t');
    if (f.size() != 7) continue;
    rows.push_back({f[0], std::stoi(f[1]), std::stod(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5]), f[6]});
  }
  return rows;
}

std::vector<std::string> top1(const std::vector<NbestRow>& rows) {
  std::vector<std::string> out;
  for (const auto& r : rows)
    if (r.rank == 1) out.push_back(r.id + "\t" + r.text);
  return out;
}

// Tiny trained model plus two unrelated LMs shared by criteria 8 and 10.
struct SmallRun {
  std::string data, ckpt, lm_a, lm_b;
};

bool small_pipeline(const TempDir& dir, const std::string& jobs, SmallRun& run) {
  run = {dir / "data", dir / "model.lpck", dir / "a.lplm", dir / "b.lplm"};
  write_text_file(dir / "other.txt", "zzz zzz\nqqq\nxyz xyz xyz\n");
  return cli({"synth-data", "--out", dir / "raw", "--utterances", "6", "--max_chars", "10", "--seed", "8",
              "--jobs", jobs}) == 0 &&
         cli({"preprocess", "--manifest", dir / "raw/manifest.tsv", "--out", run.data, "--jobs", jobs}) == 0 &&
         cli({"train", "--data", run.data, "--out", run.ckpt, "--epochs", "2", "--d", "16", "--seed", "8", "--jobs",
              jobs}) == 0 &&
         cli({"lm-train", "--corpus", run.data + "/text", "--out", run.lm_a, "--jobs", jobs}) == 0 &&
         cli({"lm-train", "--corpus", dir / "other.txt", "--out", run.lm_b, "--order", "3", "--jobs", jobs}) == 0;
}

Outcome ablation_semantics() {
  TempDir dir("accept8");
  SmallRun run;
  if (!small_pipeline(dir, "1", run)) return {false, "pipeline failed"};
  auto decode = [&](const std::string& out, std::vector<std::string> extra) {
    std::vector<std::string> args{"decode", "--data", run.data, "--checkpoint", run.ckpt, "--out", out, "--beam", "5"};
    args.insert(args.end(), extra.begin(), extra.end());
    return cli(args) == 0;
  };
  Outcome o;
  const std::string a = dir / "beta0_a.tsv", b = dir / "beta0_b.tsv";
  if (!decode(a, {"--beta", "0", "--lm", run.lm_a}) || !decode(b, {"--beta", "0", "--lm", run.lm_b}))
    return {false, "beta 0 decode failed"};
  const bool invariant = top1(read_nbest(a)) == top1(read_nbest(b)) && !top1(read_nbest(a)).empty();
  o.detail = std::string("beta=0 argmax ") + (invariant ? "invariant" : "CHANGED") + " across LMs";
  o.pass = invariant;

  double worst = 0.0;
  std::size_t rows = 0;
  for (const auto& [name, flag, lambda] : {std::tuple{"lambda=1", "--ctc_only", 1.0}, {"lambda=0", "--attn_only", 0.0}}) {
    const std::string out = dir / (std::string(name) + ".tsv");
    if (!decode(out, {flag, "--lm", run.lm_a})) {
      o.pass = false;
      o.detail += std::string("; ") + name + " run failed";
      continue;
    }
    DecodeConfig cfg;
    cfg.lambda = lambda;
    for (const auto& r : read_nbest(out)) {
      ++rows;
      const double re = combine(r.s_ctc, r.s_attn, r.s_lm, static_cast<int>(utf8_decode(r.text).size()), cfg);
      worst = std::max(worst, (re == r.combined) ? 0.0 : std::abs(re - r.combined));
    }
  }
  o.pass = o.pass && rows > 0 && worst <= 1e-12;
  o.detail += "; lambda 1 and 0 runs complete, " + std::to_string(rows) + " rows recombine within " + num(worst);
  return o;
}

// --- 9 -----------------------------------------------------------------------

Outcome zipf_analysis() {
  // Counts 10^12 / r: exact 1/r up to integer rounding of 1e-10 relative.
  std::vector<std::pair<std::string, long>> exact;
  for (long r = 1; r <= 100; ++r) exact.emplace_back("w" + std::to_string(r), 1000000000000L / r);
  const double s_exact = zipf_curve_from_counts(exact).slope;
  const auto sampled = sample_words(100000, 1.0, 909);
  const double s_sampled = zipf_curve(sampled).slope;

  const auto train = split_words("a a a b b c"), test = split_words("a b d");
  const CoverageStats cs = coverage_stats(train, test, 2);
  bool cov = cs.train_v == 3 && cs.test_v == 3 && cs.test_rw == 3;
  for (const Coverage* c : {&cs.test_v_train_v, &cs.test_v_top_v, &cs.test_rw_train_v, &cs.test_rw_top_v})
    cov = cov && c->count == 2 && format_percent(c->percent) == "66.7%";
  return {std::abs(s_exact + 1.0) <= 1e-6 && std::abs(s_sampled + 1.0) <= 0.1 && cov,
          "exact slope " + num(s_exact, 10) + ", sampled slope " + num(s_sampled) + ", coverage example " +
              (cov ? "matches" : "MISMATCH")};
}

// --- 10 ----------------------------------------------------------------------

std::map<std::string, std::vector<uint8_t>> snapshot(const std::string& root) {
  std::map<std::string, std::vector<uint8_t>> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = read_file_bytes(e.path().string());
  return files;
}

bool full_run(const TempDir& dir, const std::string& jobs) {
  SmallRun run;
  return small_pipeline(dir, jobs, run) &&
         cli({"decode", "--data", run.data, "--checkpoint", run.ckpt, "--lm", run.lm_a, "--out", dir / "nbest.tsv",
              "--jobs", jobs}) == 0 &&
         cli({"evaluate", "--data", run.data, "--hyp", dir / "nbest.tsv", "--out", dir / "report.tsv", "--jobs",
              jobs}) == 0;
}

Outcome determinism() {
  TempDir a("accept10"), b("accept10"), c("accept10");
  if (!full_run(a, "1") || !full_run(b, "1") || !full_run(c, "4")) return {false, "pipeline failed"};
  const auto sa = snapshot(a.str()), sb = snapshot(b.str()), sc = snapshot(c.str());
  Outcome o;
  for (const auto& [other, label] : {std::pair{&sb, "repeat"}, {&sc, "--jobs 4"}}) {
    if (other->size() != sa.size()) {
      o.pass = false;
      o.detail += std::string("; ") + label + " produced a different file set";
      continue;
    }
    for (const auto& [name, bytes] : sa) {
      const auto it = other->find(name);
      if (it == other->end() || it->second != bytes) {
        o.pass = false;
        o.detail += std::string("; ") + label + " differs in " + name;
      }
    }
  }
  o.detail = std::to_string(sa.size()) + " artifacts compared (preprocess, train, lm-train, decode, evaluate)" +
             o.detail;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "CTC exactness", 10, ctc_exactness},
      {2, "prefix-score conservation", 10, prefix_conservation},
      {3, "beam oracle", 60, beam_oracle},
      {4, "golden metrics", 1, golden_metrics},
      {5, "bootstrap validity", 120, bootstrap_validity},
      {6, "gradient suite", 120, gradient_suite},
      {7, "end-to-end learnability", 600, [] { return learnability(600); }},
      {8, "ablation semantics", 600, ablation_semantics},
      {9, "Zipf analysis", 60, zipf_analysis},
      {10, "determinism", 600, determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double t = seconds_since(t0);
    if (t > c.budget_s) {
      o.pass = false;
      o.detail += "; over the " + num(c.budget_s) + " s budget";
    }
    failed += !o.pass;
    std::printf("%s %d %s [%.2f s] %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, t, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
