#include "turl/encoding.hpp"

#include <algorithm>
#include <ostream>

#include "turl/errors.hpp"

namespace turl::encoding {

std::vector<int> LinearizedSequence::token_indices() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < elements.size(); ++i)
    if (elements[i].is_token()) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> LinearizedSequence::entity_indices() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < elements.size(); ++i)
    if (elements[i].is_entity()) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> LinearizedSequence::cell_indices(int column) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < elements.size(); ++i)
    if (elements[i].kind == ElementKind::cell_entity && elements[i].column == column) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> LinearizedSequence::header_indices(int column) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < elements.size(); ++i)
    if (elements[i].kind == ElementKind::header_token && elements[i].column == column) out.push_back(static_cast<int>(i));
  return out;
}

bool VisibilityMatrix::is_symmetric() const {
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = i + 1; j < n_; ++j)
      if ((*this)(i, j) != (*this)(j, i)) return false;
  return true;
}

void VisibilityMatrix::dump(std::ostream& out) const {
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j = 0; j < n_; ++j) {
      if (j) out << ' ';
      out << static_cast<int>((*this)(i, j));
    }
    out << '\n';
  }
}

void append_tokens(LinearizedSequence& seq, const std::vector<std::string>& tokens, ElementKind kind, int column,
                   const corpus::Vocabulary& vocab) {
  int position = 0;
  for (const auto& w : tokens) {
    Element e;
    e.kind = kind;
    e.id = vocab.lookup(w);
    e.position = position++;
    e.column = kind == ElementKind::header_token ? column : -1;
    e.seg_type = kind == ElementKind::header_token ? kHeaderSegment : kCaptionSegment;
    seq.elements.push_back(std::move(e));
  }
}

Element make_entity(int entity_id, std::vector<int> mention, corpus::EntityKind kind, int row, int column) {
  Element e;
  e.kind = kind == corpus::EntityKind::topic ? ElementKind::topic_entity : ElementKind::cell_entity;
  e.id = entity_id;
  e.mention = std::move(mention);
  e.position = 0;
  e.row = kind == corpus::EntityKind::topic ? -1 : row;
  e.column = kind == corpus::EntityKind::topic ? -1 : column;
  e.seg_type = static_cast<int>(kind);
  return e;
}

namespace {

std::vector<int> mention_ids(const std::vector<std::string>& mention, const corpus::Vocabulary& tokens) {
  std::vector<int> out;
  out.reserve(mention.size());
  for (const auto& w : mention) out.push_back(tokens.lookup(w));
  return out;
}

}  // namespace

LinearizedSequence linearize(const corpus::ProcessedTable& table, const corpus::Vocabulary& tokens,
                             const corpus::Vocabulary& entities, std::size_t max_len) {
  LinearizedSequence seq;
  seq.table_id = table.table_id;
  append_tokens(seq, table.caption_tokens, ElementKind::caption_token, -1, tokens);
  if (table.topic_entity) {
    const auto& t = *table.topic_entity;
    seq.elements.push_back(
        make_entity(entities.lookup(t.entity_id), mention_ids(t.mention, tokens), corpus::EntityKind::topic, -1, -1));
  }
  for (int c : table.entity_columns)
    append_tokens(seq, table.headers.at(static_cast<std::size_t>(c)), ElementKind::header_token, c, tokens);

  std::vector<corpus::EntityCell> cells = table.cells;
  std::stable_sort(cells.begin(), cells.end(),
                   [](const auto& a, const auto& b) { return a.row != b.row ? a.row < b.row : a.column < b.column; });

  const std::size_t metadata = seq.elements.size();
  if (metadata > max_len) {
    seq.elements.resize(max_len);
  } else {
    // Keep whole rows only: admit a row when all of its cells fit.
    std::size_t i = 0;
    while (i < cells.size()) {
      std::size_t j = i;
      while (j < cells.size() && cells[j].row == cells[i].row) ++j;
      if (seq.elements.size() + (j - i) > max_len) break;
      for (std::size_t k = i; k < j; ++k) {
        const auto& c = cells[k];
        seq.elements.push_back(make_entity(entities.lookup(c.entity_id), mention_ids(c.mention, tokens), c.kind,
                                           c.row, c.column));
      }
      i = j;
    }
  }
  if (seq.elements.empty()) throw TableTooSmall("table " + table.table_id + " has no elements within max_len");
  return seq;
}

bool visible(const Element& a, const Element& b) {
  if (&a == &b) return true;
  const auto global = [](const Element& e) {
    return e.kind == ElementKind::caption_token || e.kind == ElementKind::topic_entity;
  };
  if (global(a) || global(b)) return true;
  const bool a_header = a.kind == ElementKind::header_token;
  const bool b_header = b.kind == ElementKind::header_token;
  if (a_header && b_header) return true;
  if (a_header || b_header) return a.column == b.column;
  return a.row == b.row || a.column == b.column;
}

VisibilityMatrix build_visibility(const LinearizedSequence& seq) {
  const std::size_t n = seq.size();
  VisibilityMatrix m(n);
  for (std::size_t i = 0; i < n; ++i) {
    m.set(i, i, 1);
    for (std::size_t j = i + 1; j < n; ++j) {
      const std::uint8_t v = visible(seq.elements[i], seq.elements[j]) ? 1 : 0;
      m.set(i, j, v);
      m.set(j, i, v);
    }
  }
  return m;
}

}  // namespace turl::encoding
