#include "turl/tokenizer.hpp"

#include <cctype>
#include <cstdint>
#include <fstream>

#include "turl/errors.hpp"

namespace turl {
namespace {

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_ascii_punct(unsigned char c) { return c < 0x80 && std::ispunct(c) != 0; }

// Length of the UTF-8 sequence starting with lead byte c (1 for invalid bytes).
std::size_t utf8_length(unsigned char c) {
  if (c < 0x80) return 1;
  if ((c >> 5) == 0x6) return 2;
  if ((c >> 4) == 0xE) return 3;
  if ((c >> 3) == 0x1E) return 4;
  return 1;
}

char32_t decode(std::string_view s) {
  const auto b = [&](std::size_t i) { return static_cast<unsigned char>(s[i]); };
  switch (s.size()) {
    case 2: return ((b(0) & 0x1F) << 6) | (b(1) & 0x3F);
    case 3: return ((b(0) & 0x0F) << 12) | ((b(1) & 0x3F) << 6) | (b(2) & 0x3F);
    case 4: return ((b(0) & 0x07) << 18) | ((b(1) & 0x3F) << 12) | ((b(2) & 0x3F) << 6) | (b(3) & 0x3F);
    default: return b(0);
  }
}

bool is_unicode_punct(char32_t cp) {
  return (cp >= 0x2000 && cp <= 0x206F) ||  // general punctuation (dashes, quotes, ellipsis)
         (cp >= 0x3000 && cp <= 0x303F) ||  // CJK punctuation
         (cp >= 0x00A1 && cp <= 0x00BF && cp != 0x00AA && cp != 0x00BA) ||
         cp == 0x00D7 || cp == 0x00F7;
}

bool is_unicode_space(char32_t cp) { return cp == 0x00A0 || cp == 0x3000 || (cp >= 0x2000 && cp <= 0x200B); }

}  // namespace

std::string_view trim(std::string_view text) {
  std::size_t b = 0;
  std::size_t e = text.size();
  while (b < e && is_space(static_cast<unsigned char>(text[b]))) ++b;
  while (e > b && is_space(static_cast<unsigned char>(text[e - 1]))) --e;
  return text.substr(b, e - b);
}

std::string normalize_label(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char ch : trim(text)) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_space(c)) {
      pending_space = true;
      continue;
    }
    if (pending_space && !out.empty()) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
  }
  return out;
}

std::vector<std::string> BasicTokenizer::tokenize(std::string_view text) const {
  std::vector<std::string> tokens;
  std::string current;
  const auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (std::size_t i = 0; i < text.size();) {
    const auto c = static_cast<unsigned char>(text[i]);
    const std::size_t len = std::min(utf8_length(c), text.size() - i);
    if (len == 1) {
      if (is_space(c)) {
        flush();
      } else if (is_ascii_punct(c)) {
        flush();
        tokens.emplace_back(1, static_cast<char>(c));
      } else {
        current.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
      }
    } else {
      const std::string_view seq = text.substr(i, len);
      const char32_t cp = decode(seq);
      if (is_unicode_space(cp)) {
        flush();
      } else if (is_unicode_punct(cp)) {
        flush();
        tokens.emplace_back(seq);
      } else {
        current.append(seq);
      }
    }
    i += len;
  }
  flush();
  return tokens;
}

WordpieceTokenizer::WordpieceTokenizer(std::unordered_set<std::string> pieces, std::string unknown,
                                       std::size_t max_chars_per_word)
    : pieces_(std::move(pieces)), unknown_(std::move(unknown)), max_chars_(max_chars_per_word) {}

WordpieceTokenizer WordpieceTokenizer::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open wordpiece vocabulary " + path);
  std::unordered_set<std::string> pieces;
  std::string line;
  while (std::getline(in, line)) {
    const auto piece = trim(line);
    if (!piece.empty()) pieces.emplace(piece);
  }
  return WordpieceTokenizer(std::move(pieces));
}

std::vector<std::string> WordpieceTokenizer::tokenize(std::string_view text) const {
  std::vector<std::string> out;
  for (const auto& word : basic_.tokenize(text)) {
    if (word.size() > max_chars_) {
      out.push_back(unknown_);
      continue;
    }
    std::vector<std::string> pieces;
    std::size_t start = 0;
    bool bad = false;
    while (start < word.size()) {
      std::size_t end = word.size();
      std::string found;
      while (end > start) {
        std::string candidate = word.substr(start, end - start);
        if (start > 0) candidate = "##" + candidate;
        if (pieces_.contains(candidate)) {
          found = std::move(candidate);
          break;
        }
        --end;
      }
      if (found.empty()) {
        bad = true;
        break;
      }
      pieces.push_back(std::move(found));
      start = end;
    }
    if (bad) {
      out.push_back(unknown_);
    } else {
      for (auto& p : pieces) out.push_back(std::move(p));
    }
  }
  return out;
}

}  // namespace turl
