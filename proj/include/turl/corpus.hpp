#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "turl/tokenizer.hpp"

namespace turl::corpus {

struct Link {
  std::string entity_id;
  std::string anchor;
};

struct RawCell {
  std::string text;
  std::vector<Link> links;  // only the first is ever consumed
};

struct RawTable {
  std::string table_id;
  std::string page_title;
  std::string section_title;
  std::string caption;
  std::vector<std::vector<std::string>> header_rows;
  std::vector<std::vector<RawCell>> body;
  std::optional<Link> topic_link;  // optional page-level entity link

  std::size_t column_count() const;
};

enum class EntityKind : std::uint8_t { subject = 0, object = 1, topic = 2 };

inline constexpr int kMetadataCoordinate = -1;

struct EntityCell {
  std::string entity_id;
  std::vector<std::string> mention;
  int row = kMetadataCoordinate;
  int column = kMetadataCoordinate;
  EntityKind kind = EntityKind::object;

  bool operator==(const EntityCell&) const = default;
};

struct ProcessedTable {
  std::string table_id;
  std::vector<std::string> caption_tokens;
  std::vector<std::vector<std::string>> headers;  // tokens, one list per column
  std::vector<std::string> header_texts;          // normalized header strings per column
  std::optional<EntityCell> topic_entity;
  std::vector<int> entity_columns;
  std::optional<int> subject_column;
  std::vector<EntityCell> cells;  // row-major order
  int row_count = 0;

  std::size_t column_count() const { return headers.size(); }
  /// Linked entity ids of the cells in one column, in row order.
  std::vector<std::string> column_entities(int column) const;
  std::vector<const EntityCell*> column_cells(int column) const;
  const EntityCell* cell_at(int row, int column) const;

  bool operator==(const ProcessedTable&) const = default;
};

enum class VocabKind : std::uint8_t { token, entity, type_label, relation_label, header_label };

/// Index<->entry bijection with per-entry counts. Token and entity vocabularies
/// start with reserved entries; [MASK] is always index 1 when reserved.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kMask = 1;
  static constexpr int kUnk = 2;
  static constexpr int kSep = 3;  // token vocabulary only

  explicit Vocabulary(VocabKind kind = VocabKind::token);

  /// Builds a vocabulary from counts: reserved entries first, then entries with
  /// count >= min_count ordered by descending count, then ascending string.
  static Vocabulary from_counts(VocabKind kind, const std::map<std::string, std::int64_t>& counts,
                                std::int64_t min_count = 1);

  VocabKind kind() const { return kind_; }
  std::size_t size() const { return entries_.size(); }
  int num_reserved() const { return reserved_; }
  const std::string& entry(int index) const;
  std::int64_t count(int index) const;
  std::optional<int> find(std::string_view entry) const;
  /// Index of entry, or kUnk for vocabularies with reserved entries.
  int lookup(std::string_view entry) const;
  bool contains(std::string_view entry) const { return find(entry).has_value(); }
  int add(const std::string& entry, std::int64_t count = 0);

  /// "index<TAB>string<TAB>count" per line.
  void write(std::ostream& out) const;
  static Vocabulary read(std::istream& in, VocabKind kind);
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path, VocabKind kind);

  bool operator==(const Vocabulary& other) const {
    return kind_ == other.kind_ && entries_ == other.entries_ && counts_ == other.counts_;
  }

 private:
  VocabKind kind_;
  int reserved_ = 0;
  std::vector<std::string> entries_;
  std::vector<std::int64_t> counts_;
  std::unordered_map<std::string, int> index_;
};

enum class FilterMode : std::uint8_t { pretrain, eval };

struct FilterThresholds {
  std::size_t min_entities = 3;              // pretrain: keep iff total linked >= this
  std::size_t max_columns = 20;              // pretrain: keep iff columns <= this
  std::size_t eval_min_subject_entities = 5; // eval: subject column linked > 4
  std::size_t eval_min_entity_columns = 3;
  double eval_min_linked_fraction = 0.5;     // eval: strictly more than this
};

/// Header stop-list for entity-column identification.
bool is_legal_header(std::string_view header);

/// Parses one corpus JSON line. Header rows are padded to the widest row;
/// body rows whose cell count differs from the column count are dropped.
RawTable parse_raw_table(std::string_view json_line);
std::string to_json_line(const RawTable& raw);

std::vector<std::string> normalize_metadata(const RawTable& raw, const Tokenizer& tokenizer);
/// Multi-row headers joined top-to-bottom with a single space, one per column.
std::vector<std::string> concatenate_headers(const RawTable& raw);
std::vector<int> identify_entity_columns(const RawTable& raw, const std::vector<std::string>& headers);
std::optional<int> detect_subject_column(const RawTable& raw, const std::vector<int>& entity_columns);
/// Applies ordering, entity columns and subject detection to produce a ProcessedTable.
ProcessedTable process_table(const RawTable& raw, const Tokenizer& tokenizer);
bool filter_relational(const ProcessedTable& table, FilterMode mode, const FilterThresholds& thresholds = {});

struct Partition {
  std::vector<ProcessedTable> train;
  std::vector<ProcessedTable> valid;
  std::vector<ProcessedTable> test;
};

/// Eval-eligible tables (up to heldout_cap, 0 = all) are split ~1:1 into
/// valid/test by a seeded shuffle; every other relational table goes to train.
Partition partition(std::vector<ProcessedTable> relational, std::uint64_t seed,
                    const FilterThresholds& thresholds = {}, std::size_t heldout_cap = 0);

struct Vocabularies {
  Vocabulary tokens{VocabKind::token};
  Vocabulary entities{VocabKind::entity};
};

/// Token vocabulary holds every train token; entity vocabulary drops
/// entities that occur only once.
Vocabularies build_vocabularies(const std::vector<ProcessedTable>& train);

/// Most frequent mention per entity (ties broken lexicographically), used to
/// initialise entity embeddings from averaged word embeddings.
std::unordered_map<std::string, std::vector<std::string>> collect_entity_names(
    const std::vector<ProcessedTable>& tables);

std::string to_json_line(const ProcessedTable& table);
ProcessedTable processed_from_json_line(std::string_view line);
std::vector<ProcessedTable> read_processed(const std::string& path);
void write_processed(const std::string& path, const std::vector<ProcessedTable>& tables);
std::vector<RawTable> read_raw_corpus(const std::string& path);

struct PreprocessStats {
  std::size_t raw = 0;
  std::size_t relational = 0;
  std::size_t train = 0;
  std::size_t valid = 0;
  std::size_t test = 0;
};

struct PreprocessResult {
  Partition partition;
  Vocabularies vocabularies;
  PreprocessStats stats;
};

PreprocessResult preprocess(const std::vector<RawTable>& raw, const Tokenizer& tokenizer, std::uint64_t seed,
                            const FilterThresholds& thresholds = {}, std::size_t heldout_cap = 0);

}  // namespace turl::corpus
