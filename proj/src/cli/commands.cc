#include <CLI11.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "lipread/checkpoint.h"
#include "lipread/cli.h"
#include "lipread/decoder.h"
#include "lipread/error.h"
#include "lipread/eval.h"
#include "lipread/io.h"
#include "lipread/lm.h"
#include "lipread/model.h"
#include "lipread/parallel.h"
#include "lipread/synth.h"
#include "lipread/trainer.h"

namespace lipread {
namespace {

namespace fs = std::filesystem;

struct OptSpec {
  const char* key;
  bool flag;
  const char* help;
};

struct CommandSpec {
  const char* name;
  const char* help;
  std::vector<OptSpec> options;
};

const std::vector<CommandSpec>& command_specs() {
  static const std::vector<CommandSpec> specs = {
      {"synth-data",
       "Render a synthetic glyph corpus",
       {{"out", false, "output directory"},
        {"utterances", false, "number of utterances (20)"},
        {"min_chars", false, "minimum transcript length (6)"},
        {"max_chars", false, "maximum transcript length (16)"},
        {"frames_per_char", false, "frames per character (3)"},
        {"noise_std", false, "pixel noise standard deviation (8)"},
        {"zipf_exponent", false, "word sampling exponent (1)"},
        {"sentences", false, "file of sentences to render instead of sampling"}}},
      {"preprocess",
       "Align, crop and normalize raw clips",
       {{"manifest", false, "input manifest TSV"},
        {"out", false, "output directory"},
        {"vocab", false, "vocabulary file (canonical if omitted)"},
        {"strip_accents", true, "drop diacritics except on ñ"}}},
      {"train",
       "Train the hybrid CTC/attention model",
       {{"data", false, "preprocessed directory"},
        {"out", false, "checkpoint path"},
        {"vocab", false, "vocabulary file"},
        {"epochs", false, "training epochs (5)"},
        {"lr", false, "peak learning rate (5e-4)"},
        {"alpha", false, "CTC weight in the loss (0.1)"},
        {"d", false, "model width (32)"},
        {"encoder_layers", false, "encoder layers (2)"},
        {"decoder_layers", false, "decoder layers (2)"},
        {"heads", false, "attention heads (2)"},
        {"ffn_dim", false, "feed-forward width (4d)"},
        {"pos_encoding", false, "absolute or relative"},
        {"hflip_prob", false, "horizontal flip probability (0.5)"},
        {"no_augment", true, "disable crop/flip/time-mask augmentation"},
        {"ctc_only", true, "alpha = lambda = 1"},
        {"attn_only", true, "alpha = lambda = 0"}}},
      {"lm-train",
       "Train the character n-gram language model",
       {{"corpus", false, "in-domain text (lines or id<TAB>text)"},
        {"base_corpus", false, "general-domain text counted in as well"},
        {"out", false, "LM path"},
        {"vocab", false, "vocabulary file"},
        {"order", false, "n-gram order (5)"},
        {"k", false, "add-k smoothing constant (0.1)"},
        {"strip_accents", true, "drop diacritics except on ñ"},
        {"no_lm_finetune", true, "use only the base corpus"}}},
      {"decode",
       "Joint CTC/attention/LM beam search",
       {{"data", false, "preprocessed directory"},
        {"checkpoint", false, "model checkpoint"},
        {"lm", false, "language model file"},
        {"out", false, "n-best TSV path"},
        {"vocab", false, "vocabulary file"},
        {"lambda", false, "CTC weight (0.1)"},
        {"beta", false, "LM weight (0.4)"},
        {"beam", false, "beam width (10)"},
        {"penalty", false, "per-character insertion bonus (0)"},
        {"max_len", false, "maximum output length (frames)"},
        {"nbest", false, "hypotheses written per utterance (beam)"},
        {"no_lm", true, "beta = 0"},
        {"ctc_only", true, "lambda = 1"},
        {"attn_only", true, "lambda = 0"}}},
      {"evaluate",
       "Score hypotheses against references",
       {{"ref", false, "reference table (id<TAB>text)"},
        {"data", false, "preprocessed directory; its text file is the reference"},
        {"hyp", false, "n-best TSV from decode"},
        {"out", false, "report path"},
        {"vocab", false, "vocabulary file"},
        {"replicates", false, "bootstrap replicates (1000)"}}},
      {"analyze",
       "WER histogram, Zipf curve and vocabulary coverage",
       {{"ref", false, "reference table"},
        {"hyp", false, "n-best TSV from decode"},
        {"train_text", false, "training transcripts (defaults to ref)"},
        {"out", false, "output directory"},
        {"vocab", false, "vocabulary file"},
        {"top_n", false, "size of the top-v word list (100)"}}},
  };
  return specs;
}

// Shortest round-trip form.
std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string fmt2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

// Settings the command actually used; echoed into artifact headers.
class Used {
 public:
  void put(const std::string& k, const std::string& v) { cfg_.set(k, v); }
  void put(const std::string& k, double v) { cfg_.set(k, fmt(v)); }
  void put(const std::string& k, int v) { cfg_.set(k, std::to_string(v)); }
  void put(const std::string& k, uint64_t v) { cfg_.set(k, std::to_string(v)); }
  void put(const std::string& k, bool v) { cfg_.set(k, v ? "true" : "false"); }
  std::string header(const std::string& command, const std::string& vocab_hash) const {
    return "lipread " + command + "\nvocab_hash = " + vocab_hash + "\n" + cfg_.echo();
  }

 private:
  RunConfig cfg_;
};

Vocabulary load_vocab(const RunConfig& cfg) {
  if (cfg.has("vocab")) return Vocabulary::load(cfg.require("vocab"));
  return Vocabulary::canonical();
}

// Value of "# key = value" among the leading comment lines of a text file.
std::optional<std::string> header_value(const std::string& path, const std::string& key) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  const std::string prefix = "# " + key + " = ";
  while (std::getline(in, line)) {
    if (line.rfind("LPLM ", 0) == 0) continue;
    if (line.empty() || line[0] != '#') break;
    if (line.rfind(prefix, 0) == 0) return line.substr(prefix.size());
  }
  return std::nullopt;
}

void check_hash(const std::string& what, const std::string& found, const Vocabulary& vocab) {
  if (found != vocab.hash())
    throw DataError("vocabulary hash mismatch: " + what + " has " + found + ", expected " + vocab.hash());
}

void check_file_hash(const std::string& path, const Vocabulary& vocab) {
  auto h = header_value(path, "vocab_hash");
  if (!h) throw DataError(path + ": no vocab_hash in header");
  check_hash(path, *h, vocab);
}

int jobs_of(const RunConfig& cfg) {
  const int j = cfg.get_int("jobs", 1);
  if (j < 1) throw UsageError("--jobs must be >= 1");
  return j;
}

// --- synth-data --------------------------------------------------------------

void cmd_synth(const RunConfig& cfg) {
  SynthSpec spec;
  spec.seed = cfg.get_u64("seed", 0);
  spec.utterances = cfg.get_int("utterances", spec.utterances);
  spec.min_chars = cfg.get_int("min_chars", spec.min_chars);
  spec.max_chars = cfg.get_int("max_chars", spec.max_chars);
  spec.frames_per_char = cfg.get_int("frames_per_char", spec.frames_per_char);
  spec.noise_std = cfg.get_double("noise_std", spec.noise_std);
  spec.zipf_exponent = cfg.get_double("zipf_exponent", spec.zipf_exponent);
  Used used;
  if (cfg.has("sentences")) {
    std::istringstream in(read_text_file(cfg.require("sentences")));
    for (std::string line; std::getline(in, line);)
      if (!line.empty() && line[0] != '#') spec.sentences.push_back(line);
    if (spec.sentences.empty()) throw DataError(cfg.require("sentences") + ": no sentences");
    used.put("sentences", static_cast<int>(spec.sentences.size()));
  }
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  used.put("seed", spec.seed);
  used.put("utterances", spec.utterances);
  used.put("min_chars", spec.min_chars);
  used.put("max_chars", spec.max_chars);
  used.put("frames_per_char", spec.frames_per_char);
  used.put("noise_std", spec.noise_std);
  used.put("zipf_exponent", spec.zipf_exponent);
  const auto entries = generate_corpus(spec, cfg.require("out"), jobs_of(cfg),
                                       used.header("synth-data", Vocabulary::canonical().hash()));
  log_info("wrote " + std::to_string(entries.size()) + " utterances to " + cfg.require("out"));
}

// --- preprocess --------------------------------------------------------------

void cmd_preprocess(const RunConfig& cfg) {
  const Vocabulary vocab = load_vocab(cfg);
  const std::string out = cfg.require("out");
  const bool strip = cfg.get_bool("strip_accents", false);
  const auto entries = read_manifest(cfg.require("manifest"));
  if (entries.empty()) throw DataError(cfg.require("manifest") + ": no utterances");

  const std::size_t n = entries.size();
  std::vector<Lrv1Video> videos(n);
  std::vector<std::string> texts(n), errors(n);
  parallel_for(n, jobs_of(cfg), [&](std::size_t i) {
    const ManifestEntry& e = entries[i];
    try {
      const RoiClip raw = to_clip(read_lrv1(e.frames_path));
      const auto marks = read_landmarks_csv(e.landmarks_path);
      if (static_cast<int>(marks.size()) != raw.frames)
        throw DataError(e.landmarks_path + ": " + std::to_string(marks.size()) + " landmark rows for " +
                        std::to_string(raw.frames) + " frames");
      RoiClip roi(raw.frames, kRoiSize, kRoiSize);
      roi.fps = raw.fps;
      for (int t = 0; t < raw.frames; ++t) {
        const auto& lm = marks[static_cast<std::size_t>(t)];
        const SimilarityTransform tr = estimate_similarity(lm, neutral_reference());
        roi.set_frame(t, warp_crop(raw.frame(t), tr, mouth_center(lm, tr), kRoiSize));
      }
      videos[i] = to_lrv1(roi);
      NormalizedText nt = normalize_text(e.transcript, strip, vocab);
      if (!nt.rejected.empty()) {
        std::string list;
        for (const auto& r : nt.rejected) list += (list.empty() ? "" : " ") + r;
        throw DataError(e.id + ": transcript has characters outside the vocabulary: " + list);
      }
      encode(nt.text, vocab);
      texts[i] = nt.text;
    } catch (const DataError& ex) {
      errors[i] = ex.what();
    } catch (const std::invalid_argument& ex) {
      errors[i] = e.id + ": " + ex.what();
    }
  });
  int failed = 0;
  for (const auto& err : errors)
    if (!err.empty()) {
      std::cerr << "error: " << err << "\n";
      ++failed;
    }
  if (failed) throw DataError(std::to_string(failed) + " of " + std::to_string(n) + " utterances failed");

  Used used;
  used.put("strip_accents", strip);
  const std::string header = used.header("preprocess", vocab.hash());
  fs::create_directories(fs::path(out) / "clips");
  std::vector<ManifestEntry> processed(n);
  std::vector<RoiClip> clips(n);
  std::vector<std::pair<std::string, std::string>> rows;
  for (std::size_t i = 0; i < n; ++i) {
    processed[i] = {entries[i].id, "clips/" + entries[i].id + ".lrv", "-", texts[i]};
    write_lrv1((fs::path(out) / processed[i].frames_path).string(), videos[i]);
    clips[i] = to_clip(videos[i]);
    rows.emplace_back(entries[i].id, texts[i]);
  }
  const NormStats stats = fit_norm_stats(clips);
  write_manifest((fs::path(out) / "manifest.tsv").string(), processed, header);
  write_text_table((fs::path(out) / "text").string(), rows, header);
  write_text_file((fs::path(out) / "norm_stats.txt").string(),
                  comment_block(header) + "mean\t" + fmt(stats.mean) + "\nvariance\t" + fmt(stats.variance) + "\n");
  write_text_file((fs::path(out) / "vocab.txt").string(), vocab.serialize());
  log_info("preprocessed " + std::to_string(n) + " utterances into " + out);
}

// --- shared loading ----------------------------------------------------------

struct Processed {
  std::vector<ManifestEntry> entries;
  std::vector<RoiClip> clips;  // raw 8-bit values
};

Processed load_processed(const std::string& dir, const Vocabulary& vocab, int jobs) {
  const std::string manifest = (fs::path(dir) / "manifest.tsv").string();
  check_file_hash(manifest, vocab);
  Processed p;
  p.entries = read_manifest(manifest);
  if (p.entries.empty()) throw DataError(manifest + ": no utterances");
  p.clips.resize(p.entries.size());
  parallel_for(p.entries.size(), jobs, [&](std::size_t i) { p.clips[i] = to_clip(read_lrv1(p.entries[i].frames_path)); });
  return p;
}

NormStats read_norm_stats(const std::string& dir) {
  const std::string path = (fs::path(dir) / "norm_stats.txt").string();
  std::istringstream in(read_text_file(path));
  NormStats s;
  bool mean = false, var = false;
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    const auto f = split(line, '\t');
    if (f.size() != 2) throw DataError(path + ": malformed line");
    if (f[0] == "mean") s.mean = std::stod(f[1]), mean = true;
    if (f[0] == "variance") s.variance = std::stod(f[1]), var = true;
  }
  if (!mean || !var || !(s.variance > 0.0)) throw DataError(path + ": missing or invalid statistics");
  return s;
}

// Checkpoints hold float32 values; round the statistics the same way so
// training and decoding normalize identically.
NormStats as_stored(NormStats s) {
  return {static_cast<double>(static_cast<float>(s.mean)), static_cast<double>(static_cast<float>(s.variance))};
}

struct Weights {
  double alpha, lambda, beta;
};

Weights resolve_weights(const RunConfig& cfg) {
  Weights w{cfg.get_double("alpha", 0.1), cfg.get_double("lambda", 0.1), cfg.get_double("beta", 0.4)};
  const bool ctc_only = cfg.get_bool("ctc_only", false), attn_only = cfg.get_bool("attn_only", false);
  if (ctc_only && attn_only) throw UsageError("--ctc_only and --attn_only are mutually exclusive");
  if (ctc_only) w.alpha = w.lambda = 1.0;
  if (attn_only) w.alpha = w.lambda = 0.0;
  if (cfg.get_bool("no_lm", false)) w.beta = 0.0;
  if (!(w.alpha >= 0 && w.alpha <= 1)) throw UsageError("alpha must lie in [0, 1]");
  if (!(w.lambda >= 0 && w.lambda <= 1)) throw UsageError("lambda must lie in [0, 1]");
  if (!(w.beta >= 0)) throw UsageError("beta must be >= 0");
  return w;
}

// --- train -------------------------------------------------------------------

void cmd_train(const RunConfig& cfg) {
  const Vocabulary vocab = load_vocab(cfg);
  const std::string data_dir = cfg.require("data"), out = cfg.require("out");
  const Processed data = load_processed(data_dir, vocab, jobs_of(cfg));
  const NormStats norm = as_stored(read_norm_stats(data_dir));

  ModelConfig mc;
  mc.d = cfg.get_int("d", mc.d);
  mc.encoder_layers = cfg.get_int("encoder_layers", mc.encoder_layers);
  mc.decoder_layers = cfg.get_int("decoder_layers", mc.decoder_layers);
  mc.heads = cfg.get_int("heads", mc.heads);
  mc.ffn_dim = cfg.get_int("ffn_dim", mc.ffn());
  const std::string pe = cfg.get("pos_encoding", "absolute");
  if (pe == "relative")
    mc.pos_encoding = PosEncoding::kRelative;
  else if (pe != "absolute")
    throw UsageError("pos_encoding must be absolute or relative");
  try {
    mc.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  const Weights w = resolve_weights(cfg);
  TrainConfig tc;
  tc.epochs = cfg.get_int("epochs", tc.epochs);
  tc.lr = cfg.get_double("lr", tc.lr);
  tc.alpha = w.alpha;
  tc.seed = cfg.get_u64("seed", 0);
  tc.augment = !cfg.get_bool("no_augment", false);
  tc.augment_cfg.hflip_prob = cfg.get_double("hflip_prob", tc.augment_cfg.hflip_prob);
  if (tc.epochs < 1) throw UsageError("epochs must be >= 1");
  if (!(tc.lr > 0)) throw UsageError("lr must be positive");

  std::vector<TrainExample> examples;
  for (std::size_t i = 0; i < data.entries.size(); ++i) {
    RoiClip c = data.clips[i];
    apply_norm(c, norm);
    examples.push_back({data.entries[i].id, std::move(c), encode(data.entries[i].transcript, vocab)});
  }

  Used used;
  used.put("seed", tc.seed);
  used.put("epochs", tc.epochs);
  used.put("lr", tc.lr);
  used.put("alpha", tc.alpha);
  used.put("augment", tc.augment);
  used.put("hflip_prob", tc.augment_cfg.hflip_prob);
  used.put("d", mc.d);
  used.put("encoder_layers", mc.encoder_layers);
  used.put("decoder_layers", mc.decoder_layers);
  used.put("heads", mc.heads);
  used.put("ffn_dim", mc.ffn());
  used.put("pos_encoding", pe);

  Model model = Model::init(mc, tc.seed);
  const auto history = train(model, examples, tc);
  save_checkpoint(out, model, vocab.hash(), norm);
  std::string log = comment_block(used.header("train", vocab.hash())) + "epoch\tloss\tused\tskipped\n";
  for (const auto& st : history)
    log += std::to_string(st.epoch) + "\t" + fmt(st.mean_loss) + "\t" + std::to_string(st.used) + "\t" +
           std::to_string(st.skipped) + "\n";
  write_text_file(out + ".log", log);
}

// --- lm-train ----------------------------------------------------------------

std::vector<std::string> read_corpus_lines(const std::string& path, bool strip, const Vocabulary& vocab) {
  std::istringstream in(read_text_file(path));
  std::vector<std::string> out;
  int lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.rfind('\t');
    if (tab != std::string::npos) line = line.substr(tab + 1);
    NormalizedText nt = normalize_text(line, strip, vocab);
    if (!nt.rejected.empty())
      throw DataError(path + ":" + std::to_string(lineno) + ": character outside the vocabulary: " + nt.rejected[0]);
    if (!nt.text.empty()) out.push_back(nt.text);
  }
  return out;
}

void cmd_lm_train(const RunConfig& cfg) {
  const Vocabulary vocab = load_vocab(cfg);
  const bool strip = cfg.get_bool("strip_accents", false);
  const bool no_finetune = cfg.get_bool("no_lm_finetune", false);
  const int order = cfg.get_int("order", 5);
  const double k = cfg.get_double("k", 0.1);
  if (order < 1) throw UsageError("order must be >= 1");
  if (!(k > 0)) throw UsageError("k must be positive");
  std::vector<std::string> lines;
  if (cfg.has("base_corpus")) lines = read_corpus_lines(cfg.require("base_corpus"), strip, vocab);
  if (no_finetune) {
    if (!cfg.has("base_corpus")) throw UsageError("--no_lm_finetune needs --base_corpus");
  } else {
    auto in_domain = read_corpus_lines(cfg.require("corpus"), strip, vocab);
    lines.insert(lines.end(), in_domain.begin(), in_domain.end());
  }
  if (lines.empty()) throw DataError("lm-train: no training text");
  Used used;
  used.put("order", order);
  used.put("k", k);
  used.put("strip_accents", strip);
  used.put("finetune", !no_finetune);
  used.put("sentences", static_cast<int>(lines.size()));
  const CharNgramLm lm = train_charlm(lines, vocab, order, k);
  lm.save(cfg.require("out"), used.header("lm-train", vocab.hash()));
}

// --- decode ------------------------------------------------------------------

void cmd_decode(const RunConfig& cfg) {
  const Vocabulary vocab = load_vocab(cfg);
  const int jobs = jobs_of(cfg);
  const Checkpoint ck = load_checkpoint(cfg.require("checkpoint"));
  check_hash(cfg.require("checkpoint"), ck.vocab_hash, vocab);
  const Processed data = load_processed(cfg.require("data"), vocab, jobs);

  const Weights w = resolve_weights(cfg);
  DecodeConfig dc;
  dc.lambda = w.lambda;
  dc.beta = w.beta;
  dc.beam = cfg.get_int("beam", dc.beam);
  dc.penalty = cfg.get_double("penalty", dc.penalty);
  dc.max_len = cfg.get_int("max_len", 0);
  const int nbest = cfg.get_int("nbest", dc.beam);
  try {
    dc.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (nbest < 1) throw UsageError("nbest must be >= 1");

  std::optional<CharNgramLm> lm;
  if (dc.beta > 0.0) {
    const std::string path = cfg.require("lm");
    lm = CharNgramLm::load(path);
    check_hash(path, lm->vocab_hash(), vocab);
  }

  std::vector<std::string> blocks(data.entries.size());
  parallel_for(data.entries.size(), jobs, [&](std::size_t i) {
    RoiClip clip = data.clips[i];
    apply_norm(clip, ck.norm);
    const Tensor latents = encode_clip(ck.model, eval_view(clip));
    const CtcPosterior post = ctc_posterior(ck.model, latents);
    ModelAttentionScorer attn(ck.model, latents);
    std::optional<NgramLmScorer> lms;
    if (lm) lms.emplace(*lm);
    DecodeInputs in;
    in.ctc = &post;
    in.attn = &attn;
    in.lm = lms ? &*lms : nullptr;
    std::vector<Hypothesis> hyps = beam_search(in, dc);
    if (static_cast<int>(hyps.size()) > nbest) hyps.resize(static_cast<std::size_t>(nbest));
    std::ostringstream os;
    write_nbest(os, data.entries[i].id, hyps, vocab);
    blocks[i] = os.str();
  });

  Used used;
  used.put("lambda", dc.lambda);
  used.put("beta", dc.beta);
  used.put("beam", dc.beam);
  used.put("penalty", dc.penalty);
  used.put("max_len", dc.max_len);
  used.put("nbest", nbest);
  std::string body = comment_block(used.header("decode", vocab.hash())) +
                     "# id\trank\tcombined\ts_ctc\ts_attn\ts_lm\ttext\n";
  for (const auto& b : blocks) body += b;
  write_text_file(cfg.require("out"), body);
}

// --- evaluate / analyze ------------------------------------------------------

std::map<std::string, std::string> read_best_hypotheses(const std::string& path, const Vocabulary& vocab) {
  check_file_hash(path, vocab);
  std::istringstream in(read_text_file(path));
  std::map<std::string, std::string> best;
  int lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto f = split(line, '\t');
    if (f.size() != 7) throw DataError(path + ":" + std::to_string(lineno) + ": expected 7 columns");
    if (f[1] == "1") best[f[0]] = f[6];
  }
  return best;
}

std::vector<UttResult> score_all(const std::string& ref_path, const std::string& hyp_path, const Vocabulary& vocab) {
  const auto refs = read_text_table(ref_path);
  const auto hyps = read_best_hypotheses(hyp_path, vocab);
  std::vector<UttResult> results;
  for (const auto& [id, ref] : refs) {
    auto it = hyps.find(id);
    if (it == hyps.end()) log_warning("no hypothesis for " + id + "; scored as empty");
    results.push_back(score_utterance(id, ref, it == hyps.end() ? "" : it->second));
  }
  if (results.empty()) throw DataError(ref_path + ": no references");
  return results;
}

std::string reference_path(const RunConfig& cfg) {
  if (cfg.has("ref")) return cfg.require("ref");
  if (cfg.has("data")) return (fs::path(cfg.require("data")) / "text").string();
  throw UsageError("missing required setting 'ref' (or 'data')");
}

void cmd_evaluate(const RunConfig& cfg) {
  const Vocabulary vocab = load_vocab(cfg);
  const auto results = score_all(reference_path(cfg), cfg.require("hyp"), vocab);
  const int reps = cfg.get_int("replicates", 1000);
  if (reps < 1) throw UsageError("replicates must be >= 1");
  const uint64_t seed = cfg.get_u64("seed", 0);
  const BootstrapResult ci = bootstrap_ci(results, reps, seed, jobs_of(cfg));
  const double c = cer(results);

  Used used;
  used.put("replicates", reps);
  used.put("seed", seed);
  std::string out = comment_block(used.header("evaluate", vocab.hash()));
  out += "id\twer\tcer\tword_errors\tref_words\tchar_errors\tref_chars\treference\thypothesis\n";
  for (const auto& r : results)
    out += r.id + "\t" + fmt2(r.wer()) + "\t" + fmt2(r.cer()) + "\t" + std::to_string(r.words.errors()) + "\t" +
           std::to_string(r.ref_words) + "\t" + std::to_string(r.chars.errors()) + "\t" +
           std::to_string(r.ref_chars) + "\t" + r.reference + "\t" + r.hypothesis + "\n";
  out += "\nWER " + fmt2(ci.wer) + "% [" + fmt2(ci.lo) + ", " + fmt2(ci.hi) + "] CER " + fmt2(c) + "%\n";
  write_text_file(cfg.require("out"), out);
  std::cout << "WER " << fmt2(ci.wer) << "% [" << fmt2(ci.lo) << ", " << fmt2(ci.hi) << "] CER " << fmt2(c) << "%\n";
}

void cmd_analyze(const RunConfig& cfg) {
  const Vocabulary vocab = load_vocab(cfg);
  const std::string ref = reference_path(cfg);
  const auto results = score_all(ref, cfg.require("hyp"), vocab);
  const std::string out = cfg.require("out");
  const long top_n = cfg.get_int("top_n", 100);
  if (top_n < 1) throw UsageError("top_n must be >= 1");
  fs::create_directories(out);

  Used used;
  used.put("top_n", static_cast<int>(top_n));
  const std::string header = comment_block(used.header("analyze", vocab.hash()));

  std::vector<double> wers;
  for (const auto& r : results) wers.push_back(r.wer());
  const auto hist = wer_histogram(wers);
  std::string h = header + "bin_lo\tbin_hi\tcount\n";
  for (int b = 0; b < 10; ++b)
    h += std::to_string(10 * b) + "\t" + std::to_string(10 * (b + 1)) + "\t" + std::to_string(hist[static_cast<std::size_t>(b)]) + "\n";
  write_text_file((fs::path(out) / "histogram.tsv").string(), h);

  auto tokens_of = [](const std::vector<std::pair<std::string, std::string>>& rows) {
    std::vector<std::string> toks;
    for (const auto& [id, text] : rows)
      for (auto& w : split_words(text)) toks.push_back(std::move(w));
    return toks;
  };
  const auto test_tokens = tokens_of(read_text_table(ref));
  const auto train_tokens = tokens_of(read_text_table(cfg.get("train_text", ref)));
  if (train_tokens.empty() || test_tokens.empty()) throw DataError("analyze: empty token stream");

  const ZipfCurve z = zipf_curve(train_tokens);
  std::string zs = header + "# slope = " + fmt(z.slope) + "\nrank\tword\tcount\trelative_frequency\n";
  for (std::size_t i = 0; i < z.ranked.size(); ++i)
    zs += std::to_string(i + 1) + "\t" + z.ranked[i].first + "\t" + std::to_string(z.ranked[i].second) + "\t" +
          fmt(z.relative_frequency[i]) + "\n";
  write_text_file((fs::path(out) / "zipf.tsv").string(), zs);

  const CoverageStats cs = coverage_stats(train_tokens, test_tokens, top_n);
  std::string cv = header + "metric\tcount\tpercent\n";
  cv += "train_v\t" + std::to_string(cs.train_v) + "\t\n";
  cv += "test_v\t" + std::to_string(cs.test_v) + "\t\n";
  cv += "test_rw\t" + std::to_string(cs.test_rw) + "\t\n";
  cv += "top_v\t" + std::to_string(cs.top_n) + "\t\n";
  auto row = [&](const char* name, const Coverage& c) {
    cv += std::string(name) + "\t" + std::to_string(c.count) + "\t" + format_percent(c.percent) + "\n";
  };
  row("test_v&train_v", cs.test_v_train_v);
  row("test_v&top_v", cs.test_v_top_v);
  row("test_rw&train_v", cs.test_rw_train_v);
  row("test_rw&top_v", cs.test_rw_top_v);
  write_text_file((fs::path(out) / "coverage.tsv").string(), cv);
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Lipreading toolkit: synthetic data, preprocessing, hybrid CTC/attention training and decoding"};
  app.require_subcommand(1);
  std::string config_path, seed, jobs;
  app.add_option("--config", config_path, "flat key = value settings file");
  app.add_option("--seed", seed, "random seed");
  app.add_option("--jobs", jobs, "worker threads");

  std::map<std::string, std::map<std::string, std::string>> values;
  std::map<std::string, std::map<std::string, bool>> flags;
  std::map<std::string, CLI::App*> subs;
  for (const auto& spec : command_specs()) {
    CLI::App* sub = app.add_subcommand(spec.name, spec.help);
    sub->fallthrough();
    for (const auto& o : spec.options) {
      if (o.flag)
        sub->add_flag(std::string("--") + o.key, flags[spec.name][o.key], o.help);
      else
        sub->add_option(std::string("--") + o.key, values[spec.name][o.key], o.help);
    }
    subs[spec.name] = sub;
  }

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = RunConfig::load(config_path);
    if (app.count("--seed")) cfg.set("seed", seed);
    if (app.count("--jobs")) cfg.set("jobs", jobs);
    for (const auto& spec : command_specs()) {
      CLI::App* sub = subs[spec.name];
      if (!sub->parsed()) continue;
      for (const auto& o : spec.options) {
        const std::string flag = std::string("--") + o.key;
        if (!sub->count(flag)) continue;
        cfg.set(o.key, o.flag ? "true" : values[spec.name][o.key]);
      }
      const std::string name = spec.name;
      if (name == "synth-data") cmd_synth(cfg);
      else if (name == "preprocess") cmd_preprocess(cfg);
      else if (name == "train") cmd_train(cfg);
      else if (name == "lm-train") cmd_lm_train(cfg);
      else if (name == "decode") cmd_decode(cfg);
      else if (name == "evaluate") cmd_evaluate(cfg);
      else if (name == "analyze") cmd_analyze(cfg);
    }
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

int run_cli(int argc, char** argv) { return run_cli(std::vector<std::string>(argv, argv + argc)); }

}  // namespace lipread
