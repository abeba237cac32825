#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lipread/io.h"
#include "lipread/rng.h"
#include "lipread/roi.h"
#include "lipread/tokenizer.h"

namespace lipread {

struct SynthSpec {
  uint64_t seed = 0;
  int utterances = 20;
  int min_chars = 6;
  int max_chars = 16;
  int frames_per_char = 3;
  double noise_std = 8.0;
  double zipf_exponent = 1.0;
  // When non-empty, utterance i uses sentences[i % size] instead of sampling.
  std::vector<std::string> sentences;
  void validate() const;
};

// Fixed 200-word lexicon, most frequent first.
const std::vector<std::string>& synth_lexicon();

// Draws lexicon ranks with p(r) proportional to r^-exponent.
class ZipfSampler {
 public:
  ZipfSampler(std::size_t n, double exponent);
  std::size_t sample(Rng& rng) const;  // 0-based rank

 private:
  std::vector<double> cdf_;
};

std::vector<std::string> sample_words(std::size_t count, double exponent, uint64_t seed);

// Transcript of utterance `index` under `spec`.
std::string synth_transcript(const SynthSpec& spec, int index);

constexpr double kPatternLow = 50.0;
constexpr double kPatternHigh = 200.0;

// Noise-free 96x96 binary glyph for a vocabulary id.
const Image& symbol_pattern(TokenId id);

struct RenderedUtterance {
  RoiClip clip;
  std::vector<LandmarkFrame> landmarks;
  std::string transcript;
};

// frames_per_char frames per character, seeded additive Gaussian noise,
// rounded and clamped to 8 bits. Throws DataError for unencodable text.
RenderedUtterance render_utterance(const std::string& text, const SynthSpec& spec, uint64_t seed);

// Nearest-pattern classification per frame; runs split into characters of
// frames_per_char frames each.
std::string template_decode(const RoiClip& clip, int frames_per_char);

// Writes clips/<id>.lrv, landmarks/<id>.csv, text and manifest.tsv under out_dir.
std::vector<ManifestEntry> generate_corpus(const SynthSpec& spec, const std::string& out_dir, int jobs = 1,
                                           const std::string& header_comment = "");

}  // namespace lipread
