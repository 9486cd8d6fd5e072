#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace turl {

/// Splits text into tokens. Implementations must be deterministic and pure.
class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual std::vector<std::string> tokenize(std::string_view text) const = 0;
};

/// Lowercases ASCII, splits on whitespace, and emits every punctuation
/// character (ASCII and the common Unicode punctuation blocks) as its own token.
class BasicTokenizer final : public Tokenizer {
 public:
  std::vector<std::string> tokenize(std::string_view text) const override;
};

/// Greedy longest-match-first wordpiece splitting on top of BasicTokenizer,
/// using a vocabulary file with one piece per line ("##" marks continuations).
class WordpieceTokenizer final : public Tokenizer {
 public:
  explicit WordpieceTokenizer(std::unordered_set<std::string> pieces,
                              std::string unknown = "[UNK]",
                              std::size_t max_chars_per_word = 100);
  static WordpieceTokenizer from_file(const std::string& path);

  std::vector<std::string> tokenize(std::string_view text) const override;

 private:
  BasicTokenizer basic_;
  std::unordered_set<std::string> pieces_;
  std::string unknown_;
  std::size_t max_chars_;
};

/// Lowercase, trim, and collapse internal whitespace runs to one space.
std::string normalize_label(std::string_view text);

/// Trim ASCII whitespace on both ends.
std::string_view trim(std::string_view text);

}  // namespace turl
