#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "turl/baselines.hpp"
#include "turl/corpus.hpp"
#include "turl/encoder.hpp"
#include "turl/encoding.hpp"
#include "turl/metrics.hpp"
#include "turl/tokenizer.hpp"

namespace turl::tasks {

using encoder::ModelWeights;
using numeric::Graph;
using numeric::Matrix;
using numeric::Tensor;

enum class Task { el, cta, re, rp, cf, sa };

Task parse_task(const std::string& name);
std::string task_name(Task task);

// ---------------------------------------------------------------- side data

using TypeMap = std::map<std::string, std::set<std::string>>;

struct KBEntity {
  std::string entity_id;
  std::vector<std::string> name;         // tokens
  std::vector<std::string> description;  // tokens
  std::vector<std::string> types;
};

using KnowledgeBase = std::map<std::string, KBEntity>;

struct LookupCandidate {
  std::string entity_id;
  double score = 0.0;
};

/// Normalized mention text -> candidates in lookup rank order.
using ElCandidateMap = std::map<std::string, std::vector<LookupCandidate>>;

/// {"entity_id": id, "types": [..]} per line.
TypeMap load_type_map(const std::string& path);
/// {"subject": id, "object": id, "relations": [..]} per line.
baselines::RelationMap load_relation_map(const std::string& path);
/// {"entity_id", "name", "description", "types"} per line.
KnowledgeBase load_kb(const std::string& path, const Tokenizer& tokenizer);
/// {"mention": text, "candidates": [{"entity_id", "score"?}]} per line. A
/// missing score becomes 1/(rank+1).
ElCandidateMap load_el_candidates(const std::string& path);

struct SideData {
  std::optional<TypeMap> types;
  std::optional<baselines::RelationMap> relations;
  std::optional<KnowledgeBase> kb;
  std::optional<ElCandidateMap> el_candidates;
};

struct TaskThresholds {
  std::size_t cta_min_linked = 3;       // linked entities per annotated column
  std::size_t min_label_instances = 100;  // CTA / RE label filter over the training split
  double re_min_fraction = 0.5;          // strictly more than this share of pairs
  std::size_t rp_train_min_subjects = 3;  // strictly more than
  std::size_t rp_eval_min_subjects = 5;   // strictly more than
  std::size_t cf_min_pairs = 3;
  bool cf_filter_candidates = true;     // keep only source headers with P(h'|h) > 0
  std::size_t sa_min_tables = 10;
  std::size_t rp_top_k_tables = 50;
};

// ---------------------------------------------------------------- datasets

struct LabelInstance {
  std::size_t table = 0;
  int column = -1;         // CTA column or RE subject column
  int object_column = -1;  // RE only
  std::set<int> labels;
};

struct LabelDataset {
  corpus::Vocabulary labels{corpus::VocabKind::type_label};
  std::vector<LabelInstance> instances;
};

/// Columns with >= cta_min_linked typed entities labeled with the types all
/// of them share. label_vocab null: build it from these tables, keeping
/// labels with >= min_label_instances columns.
LabelDataset derive_cta(const std::vector<corpus::ProcessedTable>& tables, const TypeMap& types,
                        const TaskThresholds& th, const corpus::Vocabulary* label_vocab = nullptr);

/// Subject/object column pairs labeled with relations held by more than
/// re_min_fraction of their linked entity pairs.
LabelDataset derive_re(const std::vector<corpus::ProcessedTable>& tables, const baselines::RelationMap& relations,
                       const TaskThresholds& th, const corpus::Vocabulary* label_vocab = nullptr);

struct ElCell {
  int row = 0;
  int column = 0;
  std::string gold;
  std::vector<LookupCandidate> candidates;  // may be empty (no prediction)
};

struct ElInstance {
  std::size_t table = 0;
  std::vector<ElCell> cells;
};

std::vector<ElInstance> derive_el(const std::vector<corpus::ProcessedTable>& tables, const ElCandidateMap& candidates);

struct RpInstance {
  std::size_t table = 0;
  std::vector<std::string> seeds;
  std::set<std::string> golds;
  std::vector<std::string> candidates;
};

enum class Split { train, eval };

/// Tables with enough subject entities; the first n_seeds subject entities
/// are seeds and the rest are golds. Candidates come from BM25 over the
/// index (caption query, or seed-name query when n_seeds > 0), never from
/// the instance's own table. In train split golds are appended to candidates.
std::vector<RpInstance> derive_rp(const std::vector<corpus::ProcessedTable>& tables,
                                  const baselines::BaselineIndex& index, std::size_t n_seeds, Split split,
                                  const TaskThresholds& th);

struct CfRow {
  int row = 0;
  std::string subject;
  std::string gold;
  std::vector<baselines::FillCandidate> candidates;
};

struct CfInstance {
  std::size_t table = 0;
  int subject_column = 0;
  int object_column = 0;
  std::string header;  // normalized object header
  std::vector<CfRow> rows;
};

std::vector<CfInstance> derive_cf(const std::vector<corpus::ProcessedTable>& tables,
                                  const baselines::HeaderStats& stats, const TaskThresholds& th);

struct SaInstance {
  std::size_t table = 0;
  std::vector<int> seeds;  // header label ids, column order
  std::set<int> golds;
};

/// Normalized entity-column headers occurring in >= sa_min_tables tables.
corpus::Vocabulary build_header_vocab(const std::vector<corpus::ProcessedTable>& tables, const TaskThresholds& th);
std::vector<SaInstance> derive_sa(const std::vector<corpus::ProcessedTable>& tables,
                                  const corpus::Vocabulary& header_vocab, std::size_t n_seeds);

// ---------------------------------------------------------------- task inputs

/// Full table with every cell's e^e replaced by the entity mask (mentions kept).
encoding::LinearizedSequence el_sequence(const corpus::ProcessedTable& table, const corpus::Vocabularies& vocab,
                                         std::size_t max_len);
/// Caption, topic, seed subject cells and one masked subject cell at the end.
encoding::LinearizedSequence rp_sequence(const corpus::ProcessedTable& table, const std::vector<std::string>& seeds,
                                         const corpus::Vocabularies& vocab, std::size_t max_len);
/// Caption, both headers, subject cells and fully masked object cells.
encoding::LinearizedSequence cf_sequence(const corpus::ProcessedTable& table, const CfInstance& instance,
                                         const corpus::Vocabularies& vocab, std::size_t max_len);
/// Caption, seed headers and a masked header token in a fresh column.
encoding::LinearizedSequence sa_sequence(const corpus::ProcessedTable& table, const std::vector<int>& seeds,
                                         const corpus::Vocabulary& header_vocab, const corpus::Vocabularies& vocab,
                                         const Tokenizer& tokenizer, std::size_t max_len);

/// [mean header-token h^t ; mean cell-entity h^e] of one column (1 x 2d).
template <typename Real>
typename Graph<Real>::Var column_representation(Graph<Real>& g, typename Graph<Real>::Var h,
                                                const encoding::LinearizedSequence& seq, int column);

// ---------------------------------------------------------------- heads

struct ElHead {
  Tensor<float> w, b;        // d -> 3d
  Tensor<float> type_embedding;
  corpus::Vocabulary types{corpus::VocabKind::type_label};
  bool use_description = true;

  static ElHead init(int d_model, corpus::Vocabulary types, Rng& rng);
  std::vector<Tensor<float>*> parameters();
};

/// Sigmoid multi-label head over a fixed input width; zero-initialised.
struct LabelHead {
  Tensor<float> w, b;
  static LabelHead init(const std::string& name, int in_width, int labels);
  std::vector<Tensor<float>*> parameters();
};

struct RpHead {
  Tensor<float> w, b;
  /// Starts from the MER projection.
  static RpHead from_mer(const ModelWeights<float>& weights);
  std::vector<Tensor<float>*> parameters();
};

// ---------------------------------------------------------------- training / evaluation

struct FinetuneConfig {
  int epochs = 10;
  double lr = 1e-4;
  int batch_size = 1;
  bool use_visibility = true;
  std::uint64_t seed = 0;
  std::size_t max_len = 256;
};

struct TaskContext {
  const std::vector<corpus::ProcessedTable>* tables = nullptr;
  const corpus::Vocabularies* vocab = nullptr;
  const Tokenizer* tokenizer = nullptr;
  const KnowledgeBase* kb = nullptr;
};

struct EvalReport {
  std::string task;
  std::map<std::string, double> metrics;
  std::size_t n_instances = 0;
};

/// Runs an epoch loop over instance indices; loss_fn builds one instance's
/// scalar loss (or an invalid Var to skip). Returns per-epoch summed loss.
std::vector<double> finetune_loop(std::vector<Tensor<float>*> params, std::size_t n_instances,
                                  const std::function<Graph<float>::Var(Graph<float>&, std::size_t)>& loss_fn,
                                  const FinetuneConfig& config);

// EL
/// e^kb rows for a list of KB entity ids (n x 3d); unknown ids raise MissingSideData.
Graph<float>::Var kb_representation(Graph<float>& g, const std::vector<std::string>& ids, const TaskContext& ctx,
                                    ModelWeights<float>& w, ElHead& head);
std::vector<double> finetune_el(ModelWeights<float>& w, ElHead& head, const std::vector<ElInstance>& data,
                                const TaskContext& ctx, const FinetuneConfig& config);
struct ElOptions {
  bool reweight = false;
  double reweight_factor = 0.8;
};
EvalReport evaluate_el(ModelWeights<float>& w, ElHead& head, const std::vector<ElInstance>& data,
                       const TaskContext& ctx, const FinetuneConfig& config, const ElOptions& options = {});
/// Lookup top-1 baseline and candidate recall.
EvalReport evaluate_el_lookup(const std::vector<ElInstance>& data);

// CTA / RE
std::vector<double> finetune_cta(ModelWeights<float>& w, LabelHead& head, const LabelDataset& data,
                                 const TaskContext& ctx, const FinetuneConfig& config);
EvalReport evaluate_cta(ModelWeights<float>& w, LabelHead& head, const LabelDataset& data, const TaskContext& ctx,
                        const FinetuneConfig& config);
/// Per-label sigmoid probabilities for one column.
std::vector<float> cta_predict(ModelWeights<float>& w, LabelHead& head, const corpus::ProcessedTable& table,
                               int column, const TaskContext& ctx, const FinetuneConfig& config);

std::vector<double> finetune_re(ModelWeights<float>& w, LabelHead& head, const LabelDataset& data,
                                const TaskContext& ctx, const FinetuneConfig& config);
EvalReport evaluate_re(ModelWeights<float>& w, LabelHead& head, const LabelDataset& data, const TaskContext& ctx,
                       const FinetuneConfig& config);
std::vector<float> re_predict(ModelWeights<float>& w, LabelHead& head, const corpus::ProcessedTable& table,
                              int subject_column, int object_column, const TaskContext& ctx,
                              const FinetuneConfig& config);
/// EL-vote baseline at several thresholds, using gold links as the linker.
EvalReport evaluate_re_vote(const LabelDataset& data, const TaskContext& ctx, const baselines::RelationMap& relations,
                            const std::vector<double>& thresholds);

// RP
std::vector<double> finetune_rp(ModelWeights<float>& w, RpHead& head, const std::vector<RpInstance>& data,
                                const TaskContext& ctx, const FinetuneConfig& config);
/// Candidates sorted by descending probability, ties by ascending entity vocabulary id.
std::vector<std::pair<std::string, float>> rp_rank(ModelWeights<float>& w, RpHead& head, const RpInstance& instance,
                                                   const TaskContext& ctx, const FinetuneConfig& config);
EvalReport evaluate_rp(ModelWeights<float>& w, RpHead& head, const std::vector<RpInstance>& data,
                       const TaskContext& ctx, const FinetuneConfig& config);

// CF (no fine-tuning)
/// Per row of the instance, candidates ranked by MER score.
std::vector<std::vector<std::pair<std::string, float>>> cf_rank(ModelWeights<float>& w, const CfInstance& instance,
                                                                const TaskContext& ctx, const FinetuneConfig& config);
EvalReport evaluate_cf(ModelWeights<float>& w, const std::vector<CfInstance>& data, const TaskContext& ctx,
                       const FinetuneConfig& config);
EvalReport evaluate_cf_baseline(const std::vector<CfInstance>& data, const baselines::HeaderStats& stats,
                                baselines::FillMode mode);

// SA
std::vector<double> finetune_sa(ModelWeights<float>& w, LabelHead& head, const std::vector<SaInstance>& data,
                                const corpus::Vocabulary& header_vocab, const TaskContext& ctx,
                                const FinetuneConfig& config);
/// Header label ids by descending probability (ties by id), seeds excluded.
std::vector<std::pair<int, float>> sa_rank(ModelWeights<float>& w, LabelHead& head, const SaInstance& instance,
                                           const corpus::Vocabulary& header_vocab, const TaskContext& ctx,
                                           const FinetuneConfig& config);
EvalReport evaluate_sa(ModelWeights<float>& w, LabelHead& head, const std::vector<SaInstance>& data,
                       const corpus::Vocabulary& header_vocab, const TaskContext& ctx, const FinetuneConfig& config);
EvalReport evaluate_sa_knn(const std::vector<SaInstance>& data, const corpus::Vocabulary& header_vocab,
                           const TaskContext& ctx, const baselines::BaselineIndex& index);

}  // namespace turl::tasks
