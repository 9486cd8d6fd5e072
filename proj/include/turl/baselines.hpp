#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "turl/corpus.hpp"

namespace turl::baselines {

// ---------------------------------------------------------------- BM25

class Bm25Index {
 public:
  struct Params {
    double k1 = 1.2;
    double b = 0.75;
  };

  Bm25Index() = default;
  explicit Bm25Index(const std::vector<std::vector<std::string>>& docs);
  Bm25Index(const std::vector<std::vector<std::string>>& docs, Params params);

  /// ln((N - df + 0.5) / (df + 0.5) + 1)
  double idf(const std::string& term) const;
  /// Documents with a positive score, best first; ties by document index.
  /// Repeated query terms count once.
  std::vector<std::pair<std::size_t, double>> score_all(const std::vector<std::string>& query) const;
  std::vector<std::size_t> retrieve(const std::vector<std::string>& query, std::size_t top_k) const;
  std::size_t size() const { return lengths_.size(); }
  const Params& params() const { return params_; }

 private:
  Params params_;
  std::vector<double> lengths_;
  double avg_length_ = 0.0;
  std::map<std::string, std::vector<std::pair<std::size_t, int>>> postings_;  // term -> (doc, tf)
};

// ---------------------------------------------------------------- tf-idf kNN

using SparseVector = std::map<std::string, double>;

class TfIdfIndex {
 public:
  TfIdfIndex() = default;
  explicit TfIdfIndex(const std::vector<std::vector<std::string>>& docs);

  /// Raw term frequency times ln(N / df); terms unseen in the corpus are dropped.
  SparseVector vectorize(const std::vector<std::string>& tokens) const;
  static double cosine(const SparseVector& a, const SparseVector& b);
  /// Top-k documents by cosine (> 0), ties by document index.
  std::vector<std::pair<std::size_t, double>> nearest(const std::vector<std::string>& tokens, std::size_t k,
                                                      std::optional<std::size_t> exclude = std::nullopt) const;
  std::size_t size() const { return vectors_.size(); }

 private:
  std::size_t n_docs_ = 0;
  std::map<std::string, std::size_t> df_;
  std::vector<SparseVector> vectors_;
};

// ---------------------------------------------------------------- corpus statistics

/// Per-table view used by every baseline.
struct TableDoc {
  std::string table_id;
  std::vector<std::string> caption;
  std::vector<std::string> subject_entities;   // subject-column entity ids, row order
  std::vector<std::string> subject_names;      // tokens of all subject mentions
  std::vector<std::string> headers;            // normalized entity-column headers, column order
};

TableDoc make_doc(const corpus::ProcessedTable& table);

struct RowMate {
  std::string entity;
  std::string header;
  auto operator<=>(const RowMate&) const = default;
};

/// Cross-table header statistics and row adjacency.
class HeaderStats {
 public:
  /// n(h', h): unordered table pairs that hold the same (subject, object) fact
  /// under headers h' and h respectively; each pair counts once per header pair.
  static HeaderStats build(const std::vector<corpus::ProcessedTable>& tables);

  std::int64_t count(const std::string& h_prime, const std::string& h) const;
  /// P(h' | h) = n(h', h) / sum over h'' of n(h'', h); 0 when the sum is 0.
  double relatedness(const std::string& h_prime, const std::string& h) const;
  const std::map<std::string, std::int64_t>& counts_given(const std::string& h) const;
  const std::set<RowMate>& row_mates(const std::string& entity) const;
  std::vector<std::string> headers() const;

  std::map<std::string, std::map<std::string, std::int64_t>> counts;  // [h][h'] -> n(h', h)
  std::map<std::string, std::int64_t> totals;                         // [h] -> sum over h'
  std::map<std::string, std::set<RowMate>> mates;
};

struct FillCandidate {
  std::string entity;
  std::set<std::string> headers;  // source headers h'
};

/// Entities sharing a row with `entity` anywhere in the indexed corpus; when
/// filter is set only source headers with P(h'|h) > 0 are kept.
std::vector<FillCandidate> cell_filling_candidates(const std::string& entity, const std::string& header,
                                                   const HeaderStats& stats, bool filter = true);

enum class FillMode { exact, h2h };

/// Score = max over source headers of sim(h', h); descending, ties by id.
std::vector<std::pair<std::string, double>> cell_fill_rank(const std::vector<FillCandidate>& candidates,
                                                           const std::string& header, FillMode mode,
                                                           const HeaderStats& stats);

// ---------------------------------------------------------------- schema augmentation

/// Header scores aggregated over the k nearest captions; with seeds each
/// neighbour's cosine is scaled by |schema ∩ seeds| / |seeds|. Seeds and
/// zero-score headers are excluded. Descending, ties by header string.
std::vector<std::pair<std::string, double>> knn_schema_augment(const std::vector<std::string>& caption,
                                                               const std::vector<std::string>& seeds,
                                                               const TfIdfIndex& index,
                                                               const std::vector<TableDoc>& docs, std::size_t k = 10,
                                                               std::optional<std::size_t> exclude = std::nullopt);

// ---------------------------------------------------------------- relation extraction vote

using RelationMap = std::map<std::pair<std::string, std::string>, std::set<std::string>>;

/// Relations held by at least `threshold` of the linked (subject, object)
/// pairs. Only relations seen on at least one pair are candidates. Returns
/// nullopt when there are no linked pairs.
std::optional<std::set<std::string>> el_vote_relations(const std::vector<std::pair<std::string, std::string>>& pairs,
                                                       const RelationMap& relations, double threshold);

// ---------------------------------------------------------------- persisted index

struct BaselineIndex {
  static constexpr std::uint32_t kVersion = 1;

  std::vector<TableDoc> docs;  // sorted by table id
  Bm25Index caption_bm25;
  Bm25Index entity_bm25;
  TfIdfIndex caption_tfidf;
  HeaderStats header_stats;

  static BaselineIndex build(const std::vector<corpus::ProcessedTable>& tables);
  std::optional<std::size_t> find(const std::string& table_id) const;

  /// Subject entities of the top_k BM25 tables, in rank then row order.
  /// seed_mode queries the subject-name index instead of captions.
  std::vector<std::string> row_population_candidates(const std::vector<std::string>& query, bool seed_mode,
                                                     std::size_t top_k,
                                                     const std::optional<std::string>& exclude_table = {}) const;

  void save(const std::string& path) const;
  static BaselineIndex load(const std::string& path);
};

}  // namespace turl::baselines
