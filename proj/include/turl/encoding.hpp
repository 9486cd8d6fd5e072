#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "turl/corpus.hpp"

namespace turl::encoding {

enum class ElementKind : std::uint8_t { caption_token, header_token, topic_entity, cell_entity };

// Token-type rows (caption/header) and entity-type rows (subject/object/topic).
inline constexpr int kCaptionSegment = 0;
inline constexpr int kHeaderSegment = 1;
inline constexpr int kNumTokenSegments = 2;
inline constexpr int kNumEntitySegments = 3;

struct Element {
  ElementKind kind = ElementKind::caption_token;
  int id = 0;                // token id or entity id
  std::vector<int> mention;  // entity elements: token ids of the mention
  int position = 0;          // offset inside the caption or header; 0 for entities
  int column = -1;
  int row = -1;
  int seg_type = 0;

  bool is_token() const { return kind == ElementKind::caption_token || kind == ElementKind::header_token; }
  bool is_entity() const { return !is_token(); }
  bool operator==(const Element&) const = default;
};

struct LinearizedSequence {
  std::string table_id;
  std::vector<Element> elements;

  std::size_t size() const { return elements.size(); }
  std::vector<int> token_indices() const;
  std::vector<int> entity_indices() const;
  /// Indices of cell entities in a given column, in row order.
  std::vector<int> cell_indices(int column) const;
  std::vector<int> header_indices(int column) const;
};

/// Symmetric binary n x n relation stored row-major.
class VisibilityMatrix {
 public:
  VisibilityMatrix() = default;
  explicit VisibilityMatrix(std::size_t n, std::uint8_t fill = 0) : n_(n), bits_(n * n, fill) {}

  static VisibilityMatrix all_visible(std::size_t n) { return VisibilityMatrix(n, 1); }

  std::size_t size() const { return n_; }
  std::uint8_t operator()(std::size_t i, std::size_t j) const { return bits_[i * n_ + j]; }
  void set(std::size_t i, std::size_t j, std::uint8_t v) { bits_[i * n_ + j] = v; }
  const std::uint8_t* data() const { return bits_.data(); }
  bool is_symmetric() const;

  /// One row per line, entries as '0'/'1' separated by spaces.
  void dump(std::ostream& out) const;

  bool operator==(const VisibilityMatrix&) const = default;

 private:
  std::size_t n_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Order: caption tokens, topic entity, header tokens column by column
/// (entity columns only), then cell entities row by row. Whole trailing rows
/// are dropped until the sequence fits in max_len.
LinearizedSequence linearize(const corpus::ProcessedTable& table, const corpus::Vocabulary& tokens,
                             const corpus::Vocabulary& entities, std::size_t max_len);

/// Pairwise visibility rule, exposed so tests can compare against it.
bool visible(const Element& a, const Element& b);

VisibilityMatrix build_visibility(const LinearizedSequence& seq);

/// Appends a caption token element sequence (helper for task-specific inputs).
void append_tokens(LinearizedSequence& seq, const std::vector<std::string>& tokens, ElementKind kind, int column,
                   const corpus::Vocabulary& vocab);

Element make_entity(int entity_id, std::vector<int> mention, corpus::EntityKind kind, int row, int column);

}  // namespace turl::encoding
