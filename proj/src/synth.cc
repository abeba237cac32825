#include "lipread/synth.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "lipread/error.h"
#include "lipread/parallel.h"

namespace lipread {
namespace {

const char* const kLexicon[] = {
    "de", "la", "que", "el", "en", "y", "a", "los", "se", "del",
    "las", "un", "por", "con", "no", "una", "su", "para", "es", "al",
    "lo", "como", "más", "pero", "sus", "le", "ya", "o", "este", "sí",
    "porque", "esta", "entre", "cuando", "muy", "sin", "sobre", "también", "me", "hasta",
    "hay", "donde", "quien", "desde", "todo", "nos", "durante", "todos", "uno", "les",
    "ni", "contra", "otros", "ese", "eso", "ante", "ellos", "e", "esto", "mí",
    "antes", "algunos", "qué", "unos", "yo", "otro", "otras", "otra", "él", "tanto",
    "esa", "estos", "mucho", "quienes", "nada", "muchos", "cual", "poco", "ella", "estar",
    "estas", "algunas", "algo", "nosotros", "casa", "tiempo", "año", "día", "vida", "mundo",
    "país", "parte", "gobierno", "ciudad", "trabajo", "gente", "mañana", "noche", "agua", "tierra",
    "escuela", "cabeza", "imagen", "barro", "perro", "lunes", "martes", "doce", "mes", "prisión",
    "hombre", "mujer", "niño", "niña", "padre", "madre", "hijo", "amigo", "calle", "puerta",
    "mesa", "libro", "carta", "mano", "ojo", "voz", "cosa", "forma", "caso", "lugar",
    "punto", "grupo", "tema", "fin", "final", "historia", "momento", "verdad", "razón", "pueblo",
    "camino", "mar", "sol", "luna", "cielo", "fuego", "aire", "campo", "río", "monte",
    "rojo", "verde", "azul", "blanco", "negro", "grande", "pequeño", "nuevo", "viejo", "bueno",
    "malo", "alto", "bajo", "largo", "corto", "claro", "fácil", "difícil", "último", "primero",
    "hablar", "decir", "hacer", "poder", "ver", "dar", "saber", "querer", "llegar", "pasar",
    "deber", "poner", "parecer", "quedar", "creer", "llevar", "dejar", "seguir", "encontrar", "llamar",
    "venir", "pensar", "salir", "volver", "tomar", "conocer", "vivir", "sentir", "tratar", "mirar",
};

// Pattern frequency pairs, (0, 0) excluded; id i uses entry i.
std::vector<std::pair<int, int>> frequency_pairs() {
  std::vector<std::pair<int, int>> out;
  for (int kx = 0; kx <= 6; ++kx)
    for (int ky = 0; ky <= 6; ++ky)
      if (kx || ky) out.emplace_back(kx, ky);
  return out;
}

std::vector<Image> build_patterns() {
  const auto pairs = frequency_pairs();
  std::vector<Image> out;
  for (int id = 0; id < Vocabulary::kSize; ++id) {
    const auto [kx, ky] = pairs.at(static_cast<std::size_t>(id));
    Image img(kRoiSize, kRoiSize);
    for (int r = 0; r < kRoiSize; ++r)
      for (int c = 0; c < kRoiSize; ++c) {
        const double u = c - (kRoiSize - 1) / 2.0, v = r - (kRoiSize - 1) / 2.0;
        const double s = std::cos(2 * std::numbers::pi * kx * u / kRoiSize) *
                         std::cos(2 * std::numbers::pi * ky * v / kRoiSize);
        img.at(r, c) = s > 0 ? kPatternHigh : kPatternLow;
      }
    out.push_back(std::move(img));
  }
  return out;
}

std::string utt_id(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "utt%04d", i);
  return buf;
}

}  // namespace

void SynthSpec::validate() const {
  if (utterances < 1) throw std::invalid_argument("synth: utterances must be positive");
  if (min_chars < 1 || max_chars < min_chars) throw std::invalid_argument("synth: need 1 <= min_chars <= max_chars");
  if (frames_per_char < 1) throw std::invalid_argument("synth: frames_per_char must be positive");
  if (!(noise_std >= 0.0)) throw std::invalid_argument("synth: noise_std must be >= 0");
  if (!(zipf_exponent >= 0.0)) throw std::invalid_argument("synth: zipf_exponent must be >= 0");
}

const std::vector<std::string>& synth_lexicon() {
  static const std::vector<std::string> lex(std::begin(kLexicon), std::end(kLexicon));
  return lex;
}

ZipfSampler::ZipfSampler(std::size_t n, double exponent) {
  if (n == 0) throw std::invalid_argument("ZipfSampler: empty support");
  double sum = 0.0;
  for (std::size_t r = 1; r <= n; ++r) {
    sum += std::pow(static_cast<double>(r), -exponent);
    cdf_.push_back(sum);
  }
  for (double& c : cdf_) c /= sum;
}

std::size_t ZipfSampler::sample(Rng& rng) const {
  const double u = rng.uniform();
  const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  return std::min(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
}

std::vector<std::string> sample_words(std::size_t count, double exponent, uint64_t seed) {
  const auto& lex = synth_lexicon();
  ZipfSampler z(lex.size(), exponent);
  Rng rng(seed);
  std::vector<std::string> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(lex[z.sample(rng)]);
  return out;
}

std::string synth_transcript(const SynthSpec& spec, int index) {
  spec.validate();
  if (!spec.sentences.empty()) {
    const std::string& s = spec.sentences[static_cast<std::size_t>(index) % spec.sentences.size()];
    return normalize_text(s, false).text;
  }
  const auto& lex = synth_lexicon();
  ZipfSampler z(lex.size(), spec.zipf_exponent);
  Rng rng = Rng::derive(spec.seed, static_cast<uint64_t>(index));
  const int target = spec.min_chars + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(spec.max_chars - spec.min_chars + 1)));
  std::string text;
  int chars = 0;
  for (int attempt = 0; attempt < 1000 && chars < target; ++attempt) {
    const std::string& w = lex[z.sample(rng)];
    const int wl = static_cast<int>(utf8_chars(w).size());
    const int next = chars == 0 ? wl : chars + 1 + wl;
    if (next > spec.max_chars) {
      if (chars == 0) continue;
      break;
    }
    text += (chars == 0 ? "" : " ") + w;
    chars = next;
  }
  if (text.empty()) throw std::invalid_argument("synth: could not fit a word into max_chars");
  return text;
}

const Image& symbol_pattern(TokenId id) {
  static const std::vector<Image> patterns = build_patterns();
  return patterns.at(static_cast<std::size_t>(id));
}

RenderedUtterance render_utterance(const std::string& text, const SynthSpec& spec, uint64_t seed) {
  const TokenSeq ids = encode(text);
  if (ids.empty()) throw DataError("synth: empty transcript");
  const int fpc = spec.frames_per_char;
  RenderedUtterance out;
  out.transcript = text;
  out.clip = RoiClip(static_cast<int>(ids.size()) * fpc, kRoiSize, kRoiSize);
  Rng rng(seed);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const Image& pat = symbol_pattern(ids[i]);
    for (int f = 0; f < fpc; ++f) {
      const int t = static_cast<int>(i) * fpc + f;
      for (int r = 0; r < kRoiSize; ++r)
        for (int c = 0; c < kRoiSize; ++c) {
          double v = pat.at(r, c);
          if (spec.noise_std > 0.0) v += spec.noise_std * rng.normal();
          out.clip.at(t, r, c) = std::clamp(std::round(v), 0.0, 255.0);
        }
    }
  }
  out.landmarks.assign(static_cast<std::size_t>(out.clip.frames), neutral_reference());
  return out;
}

std::string template_decode(const RoiClip& clip, int frames_per_char) {
  if (frames_per_char < 1) throw std::invalid_argument("template_decode: frames_per_char must be positive");
  const Vocabulary& vocab = Vocabulary::canonical();
  std::vector<TokenId> frame_ids;
  for (int t = 0; t < clip.frames; ++t) {
    TokenId best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (TokenId id = 1; id < vocab.eos_id(); ++id) {
      const Image& pat = symbol_pattern(id);
      double d = 0.0;
      for (int r = 0; r < clip.height; ++r)
        for (int c = 0; c < clip.width; ++c) {
          const double e = clip.at(t, r, c) - pat.at(r, c);
          d += e * e;
        }
      if (d < best_d) {
        best_d = d;
        best = id;
      }
    }
    frame_ids.push_back(best);
  }
  TokenSeq chars;
  for (std::size_t i = 0; i < frame_ids.size();) {
    std::size_t j = i;
    while (j < frame_ids.size() && frame_ids[j] == frame_ids[i]) ++j;
    const std::size_t n = std::max<std::size_t>(1, ((j - i) + frames_per_char / 2) / frames_per_char);
    chars.insert(chars.end(), n, frame_ids[i]);
    i = j;
  }
  return decode(chars, vocab);
}

std::vector<ManifestEntry> generate_corpus(const SynthSpec& spec, const std::string& out_dir, int jobs,
                                           const std::string& header_comment) {
  spec.validate();
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "clips");
  fs::create_directories(fs::path(out_dir) / "landmarks");
  std::vector<ManifestEntry> entries(static_cast<std::size_t>(spec.utterances));
  parallel_for(entries.size(), jobs, [&](std::size_t i) {
    const int idx = static_cast<int>(i);
    ManifestEntry& e = entries[i];
    e.id = utt_id(idx);
    e.transcript = synth_transcript(spec, idx);
    RenderedUtterance u = render_utterance(e.transcript, spec, mix_seed(spec.seed ^ 0x5eedf00dULL, i));
    e.frames_path = "clips/" + e.id + ".lrv";
    e.landmarks_path = "landmarks/" + e.id + ".csv";
    write_lrv1((fs::path(out_dir) / e.frames_path).string(), to_lrv1(u.clip));
    write_landmarks_csv((fs::path(out_dir) / e.landmarks_path).string(), u.landmarks);
  });
  std::vector<std::pair<std::string, std::string>> rows;
  for (const auto& e : entries) rows.emplace_back(e.id, e.transcript);
  write_text_table((fs::path(out_dir) / "text").string(), rows, header_comment);
  write_manifest((fs::path(out_dir) / "manifest.tsv").string(), entries, header_comment);
  return entries;
}

}  // namespace lipread
