#include "lipread/tokenizer.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "lipread/error.h"

namespace lipread {
namespace {

constexpr const char* kBlankName = "<blank>";
constexpr const char* kSpaceName = "<space>";
constexpr const char* kEosName = "<eos>";

bool is_space(char32_t c) {
  switch (c) {
    case U' ': case U'\t': case U'\n': case U'\v': case U'\f': case U'\r':
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029: case 0x202F:
    case 0x205F: case 0x3000:
      return true;
    default:
      return c >= 0x2000 && c <= 0x200A;
  }
}

// General category P for the Latin-1 and General Punctuation blocks plus a
// few CJK/fullwidth marks seen in scraped subtitles.
bool is_punctuation(char32_t c) {
  if (c < 0x80) {
    switch (c) {
      case '!': case '"': case '#': case '%': case '&': case '\'': case '(':
      case ')': case '*': case ',': case '-': case '.': case '/': case ':':
      case ';': case '?': case '@': case '[': case '\\': case ']': case '_':
      case '{': case '}':
        return true;
      default:
        return false;
    }
  }
  switch (c) {
    case 0xA1: case 0xA7: case 0xAB: case 0xB6: case 0xB7: case 0xBB: case 0xBF:
    case 0x3001: case 0x3002: case 0x3003: case 0xFF01: case 0xFF0C: case 0xFF0E:
    case 0xFF1A: case 0xFF1B: case 0xFF1F:
      return true;
    default:
      break;
  }
  if (c >= 0x2010 && c <= 0x2027) return true;
  if (c >= 0x2030 && c <= 0x2043) return true;
  if (c >= 0x2045 && c <= 0x2051) return true;
  if (c >= 0x2053 && c <= 0x205E) return true;
  return false;
}

char32_t to_lower(char32_t c) {
  if (c >= U'A' && c <= U'Z') return c + 32;
  if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 32;
  return c;
}

char32_t strip_accent(char32_t c) {
  switch (c) {
    case 0xE1: return U'a';
    case 0xE9: return U'e';
    case 0xED: return U'i';
    case 0xF3: return U'o';
    case 0xFA: case 0xFC: return U'u';
    default: return c;
  }
}

std::vector<std::string> canonical_symbols() {
  std::vector<std::string> s;
  s.reserve(Vocabulary::kSize);
  s.push_back(kBlankName);
  s.push_back(" ");
  for (char c = 'a'; c <= 'z'; ++c) s.emplace_back(1, c);
  for (const char* accented : {"á", "é", "í", "ó", "ú", "ü", "ñ"}) s.push_back(accented);
  s.push_back("'");
  s.push_back(kEosName);
  return s;
}

}  // namespace

uint64_t fnv1a64(std::string_view data) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string to_hex(uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::u32string utf8_decode(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    int len;
    char32_t cp;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2;
      cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3;
      cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4;
      cp = b0 & 0x07;
    } else {
      throw DataError("invalid UTF-8 lead byte at offset " + std::to_string(i));
    }
    if (i + len > s.size()) throw DataError("truncated UTF-8 sequence at offset " + std::to_string(i));
    for (int k = 1; k < len; ++k) {
      const auto b = static_cast<unsigned char>(s[i + k]);
      if ((b & 0xC0) != 0x80) throw DataError("invalid UTF-8 continuation at offset " + std::to_string(i + k));
      cp = (cp << 6) | (b & 0x3F);
    }
    static constexpr char32_t kMin[] = {0, 0, 0x80, 0x800, 0x10000};
    if (cp < kMin[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF))
      throw DataError("invalid UTF-8 code point at offset " + std::to_string(i));
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::string utf8_encode(char32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
  return out;
}

std::string utf8_encode(std::u32string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char32_t c : s) out += utf8_encode(c);
  return out;
}

std::vector<std::string> utf8_chars(std::string_view s) {
  std::vector<std::string> out;
  for (char32_t c : utf8_decode(s)) out.push_back(utf8_encode(c));
  return out;
}

const Vocabulary& Vocabulary::canonical() {
  static const Vocabulary vocab = from_symbols(canonical_symbols());
  return vocab;
}

Vocabulary Vocabulary::from_symbols(std::vector<std::string> symbols) {
  if (symbols.size() != static_cast<std::size_t>(kSize))
    throw DataError("vocabulary must have exactly " + std::to_string(kSize) + " symbols, got " +
                    std::to_string(symbols.size()));
  if (symbols.front() != kBlankName) throw DataError("vocabulary id 0 must be <blank>");
  if (symbols[1] != " ") throw DataError("vocabulary id 1 must be <space>");
  if (symbols.back() != kEosName) throw DataError("vocabulary id 36 must be <eos>");
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    const auto& s = symbols[i];
    if (s.empty()) throw DataError("empty vocabulary symbol at id " + std::to_string(i));
    if (i != 0 && i + 1 != symbols.size() && utf8_decode(s).size() != 1)
      throw DataError("vocabulary symbol at id " + std::to_string(i) + " is not a single character");
    if (!seen.insert(s).second) throw DataError("duplicate vocabulary symbol '" + s + "'");
  }
  return Vocabulary(std::move(symbols));
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary file " + path);
  std::vector<std::string> symbols;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    symbols.push_back(line == kSpaceName ? std::string(" ") : line);
  }
  return from_symbols(std::move(symbols));
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (const auto& s : symbols_) {
    out += (s == " ") ? std::string(kSpaceName) : s;
    out += '\n';
  }
  return out;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocabulary file " + path);
  out << serialize();
}

std::optional<TokenId> Vocabulary::find(std::string_view utf8_char) const {
  for (int i = 1; i + 1 < size(); ++i)
    if (symbols_[static_cast<std::size_t>(i)] == utf8_char) return i;
  return std::nullopt;
}

std::string Vocabulary::hash() const { return to_hex(fnv1a64(serialize())); }

NormalizedText normalize_text(std::string_view raw, bool strip_accents, const Vocabulary& vocab) {
  std::u32string out;
  bool pending_space = false;
  for (char32_t c : utf8_decode(raw)) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (is_punctuation(c)) continue;
    c = to_lower(c);
    if (strip_accents) c = strip_accent(c);
    if (pending_space) out.push_back(U' ');
    pending_space = false;
    out.push_back(c);
  }
  NormalizedText result;
  result.text = utf8_encode(out);
  std::unordered_set<char32_t> reported;
  for (char32_t c : out) {
    const std::string ch = utf8_encode(c);
    if (!vocab.find(ch) && reported.insert(c).second) result.rejected.push_back(ch);
  }
  return result;
}

TokenSeq encode(std::string_view text, const Vocabulary& vocab) {
  TokenSeq ids;
  const auto chars = utf8_decode(text);
  ids.reserve(chars.size());
  for (std::size_t pos = 0; pos < chars.size(); ++pos) {
    const std::string ch = utf8_encode(chars[pos]);
    const auto id = vocab.find(ch);
    if (!id) throw DataError("out-of-vocabulary character '" + ch + "' at position " + std::to_string(pos));
    ids.push_back(*id);
  }
  return ids;
}

std::string decode(const TokenSeq& ids, const Vocabulary& vocab) {
  std::string out;
  for (TokenId id : ids) {
    if (id < 0 || id >= vocab.size()) throw std::invalid_argument("token id out of range: " + std::to_string(id));
    if (id == vocab.blank_id()) throw std::invalid_argument("blank id in label sequence");
    if (id == vocab.eos_id()) break;
    out += vocab.symbol(id);
  }
  return out;
}

}  // namespace lipread
