#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace lipread {

using TokenId = int;
// Label sequence over vocabulary ids. Blank never appears; eos only as a
// terminal marker where an interface says so.
using TokenSeq = std::vector<TokenId>;

// Fixed 37-symbol character inventory.
//   0 blank, 1 space, 2-27 a..z, 28-33 á é í ó ú ü, 34 ñ, 35 apostrophe, 36 eos
class Vocabulary {
 public:
  static constexpr int kSize = 37;

  static const Vocabulary& canonical();
  // Validates size, distinctness and the position of the special symbols.
  static Vocabulary from_symbols(std::vector<std::string> symbols);

  // One symbol per line, line number = id; "<blank>", "<space>", "<eos>"
  // stand for the special symbols.
  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;
  std::string serialize() const;

  int size() const { return static_cast<int>(symbols_.size()); }
  TokenId blank_id() const { return 0; }
  TokenId space_id() const { return 1; }
  TokenId eos_id() const { return kSize - 1; }

  // Surface form of a symbol: the UTF-8 character, " " for space, and the
  // bracketed names for blank and eos.
  const std::string& symbol(TokenId id) const { return symbols_.at(static_cast<std::size_t>(id)); }
  std::optional<TokenId> find(std::string_view utf8_char) const;

  // FNV-1a (64-bit, hex) of serialize(); embedded in every artifact.
  std::string hash() const;

 private:
  explicit Vocabulary(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {}
  std::vector<std::string> symbols_;
};

struct NormalizedText {
  std::string text;
  // Characters left in `text` that the vocabulary cannot encode, in order of
  // first appearance, each listed once.
  std::vector<std::string> rejected;
};

// Lowercases, drops punctuation (Unicode category P incl. ¡ ¿), collapses
// whitespace runs and trims. With strip_accents, á é í ó ú ü lose their
// diacritic; ñ is kept.
NormalizedText normalize_text(std::string_view raw, bool strip_accents,
                              const Vocabulary& vocab = Vocabulary::canonical());

// Throws DataError naming the offending character and its position.
TokenSeq encode(std::string_view text, const Vocabulary& vocab = Vocabulary::canonical());
// Stops at eos; throws std::invalid_argument on blank or out-of-range ids.
std::string decode(const TokenSeq& ids, const Vocabulary& vocab = Vocabulary::canonical());

// UTF-8 helpers (throw DataError on malformed input).
std::u32string utf8_decode(std::string_view s);
std::string utf8_encode(char32_t cp);
std::string utf8_encode(std::u32string_view s);
// Code points as separate UTF-8 strings.
std::vector<std::string> utf8_chars(std::string_view s);

uint64_t fnv1a64(std::string_view data);
std::string to_hex(uint64_t value);

}  // namespace lipread
