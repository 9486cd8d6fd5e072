#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "turl/corpus.hpp"
#include "turl/encoder.hpp"
#include "turl/encoding.hpp"
#include "turl/rng.hpp"

namespace turl::pretrain {

using encoder::ModelWeights;
using numeric::Graph;
using numeric::Matrix;

enum class TokenAction : std::uint8_t { untouched, keep, mask, random };
enum class EntityAction : std::uint8_t { untouched, keep_both, mask_both, mask_e_only, mask_e_random };

struct MaskRatios {
  double mlm_select = 0.20;
  double mlm_mask = 0.80;    // of selected
  double mlm_random = 0.10;  // of selected; the remainder is kept
  double mer_select = 0.60;
  double mer_keep = 0.10;       // of selected
  double mer_mask_both = 0.63;  // of selected; the remainder masks e^e only
  double mer_random_sub = 0.10; // within the mask-e^e-only branch

  void validate() const;
};

std::vector<TokenAction> sample_mlm_mask(std::size_t count, Rng& rng, const MaskRatios& ratios = {});
std::vector<EntityAction> sample_mer_mask(std::size_t count, Rng& rng, const MaskRatios& ratios = {});

/// Per-element masking decisions for one sequence. gold[i] is the original id
/// of a selected element and -1 elsewhere; replacement[i] is the id used by
/// random / mask_e_random actions.
struct MaskPlan {
  std::vector<TokenAction> tokens;
  std::vector<EntityAction> entities;
  std::vector<int> gold;
  std::vector<int> replacement;

  std::vector<int> token_positions() const;   // selected token elements
  std::vector<int> entity_positions() const;  // selected entity elements
};

struct VocabSizes {
  int tokens = 0;
  int entities = 0;
  int token_reserved = 4;
  int entity_reserved = 3;
};

/// Draws a plan over the sequence. Tokens with reserved ids and entities with
/// reserved ids (e.g. UNK) are never selected; only cell entities take part in
/// MER. Random replacements are drawn from non-reserved ids.
MaskPlan plan_masks(const encoding::LinearizedSequence& seq, Rng& rng, const MaskRatios& ratios,
                    const VocabSizes& sizes);

/// Copy of seq with the plan's substitutions applied.
encoding::LinearizedSequence apply_mask(const encoding::LinearizedSequence& seq, const MaskPlan& plan);

/// Masks both e^e and e^m of one element.
void mask_entity_both(encoding::Element& e);

/// entity -> entities seen in the same train table (entity vocabulary ids).
class CooccurrenceIndex {
 public:
  CooccurrenceIndex() = default;
  static CooccurrenceIndex build(const std::vector<encoding::LinearizedSequence>& train, int num_reserved);

  const std::vector<int>& neighbors(int entity) const;
  std::size_t size() const { return neighbors_.size(); }

 private:
  std::map<int, std::vector<int>> neighbors_;
};

struct CandidateSet {
  std::vector<int> ids;  // unique
  std::vector<std::uint8_t> is_gold;

  std::optional<int> index_of(int entity) const;
  std::size_t size() const { return ids.size(); }
};

/// Golds first, then the remaining table entities, then co-occurring entities,
/// then uniform random negatives until the cap. Golds are kept even when they
/// alone exceed the cap.
CandidateSet build_mer_candidates(const std::vector<int>& table_entities, const std::vector<int>& golds,
                                  const CooccurrenceIndex& index, Rng& rng, std::size_t cap,
                                  const VocabSizes& sizes);

/// Distinct non-reserved cell/topic entity ids of a sequence in order of appearance.
std::vector<int> sequence_entities(const encoding::LinearizedSequence& seq, int num_reserved);

template <typename Real>
struct LossTerms {
  typename Graph<Real>::Var loss;  // invalid when nothing was selected
  int count = 0;
  int correct = 0;
};

/// Sum of -log P(gold) over the rows of h at positions, scored against every
/// word row (MLM output head).
template <typename Real>
LossTerms<Real> mlm_loss(Graph<Real>& g, typename Graph<Real>::Var h, const std::vector<int>& positions,
                         const std::vector<int>& golds, ModelWeights<Real>& w);

/// Sum of -log P(gold) over the candidate set (MER output head).
template <typename Real>
LossTerms<Real> mer_loss(Graph<Real>& g, typename Graph<Real>::Var h, const std::vector<int>& positions,
                         const std::vector<int>& golds, const CandidateSet& candidates, ModelWeights<Real>& w);

/// MER logits (rows = positions, cols = candidates).
template <typename Real>
typename Graph<Real>::Var mer_logits(Graph<Real>& g, typename Graph<Real>::Var h, const std::vector<int>& positions,
                                     const std::vector<int>& candidates, ModelWeights<Real>& w);

/// Index of the largest value; ties go to the lowest index.
template <typename Real>
std::size_t argmax(const Real* values, std::size_t n);

struct PretrainConfig {
  int epochs = 80;
  double lr = 1e-4;
  int batch_size = 1;
  MaskRatios ratios;
  std::size_t candidate_cap = 256;
  bool use_visibility = true;
  std::uint64_t seed = 0;
};

struct StepMetrics {
  double loss = 0.0;
  double mlm_loss = 0.0;
  double mer_loss = 0.0;
  int mlm_count = 0;
  int mlm_correct = 0;
  int mer_count = 0;
  int mer_correct = 0;
};

struct EpochMetrics {
  int epoch = 0;
  double loss = 0.0;
  double mlm_acc = 0.0;
  double mer_acc = 0.0;
  std::optional<double> oep_acc;
};

struct Example {
  encoding::LinearizedSequence seq;
  encoding::VisibilityMatrix visibility;
  std::vector<int> entities;  // sequence_entities(seq)
};

Example make_example(const corpus::ProcessedTable& table, const corpus::Vocabularies& vocab, std::size_t max_len);
std::vector<Example> make_examples(const std::vector<corpus::ProcessedTable>& tables,
                                   const corpus::Vocabularies& vocab, std::size_t max_len);

VocabSizes vocab_sizes(const corpus::Vocabularies& vocab);
/// Token ids of each entity's most frequent mention, indexed by entity vocabulary id.
std::vector<std::vector<int>> entity_name_ids(const std::vector<corpus::ProcessedTable>& tables,
                                              const corpus::Vocabularies& vocab);

/// Owns the optimizer state and sampling stream for one pre-training run.
class Pretrainer {
 public:
  Pretrainer(ModelWeights<float>& weights, std::vector<Example> train, VocabSizes sizes, PretrainConfig config);

  /// One optimizer step over a batch of example indices.
  StepMetrics step(const std::vector<std::size_t>& batch);
  /// Shuffled pass over every training example.
  EpochMetrics run_epoch();

  int epoch() const { return epoch_; }
  std::int64_t global_step() const { return adam_.step; }
  std::int64_t total_steps() const;
  numeric::AdamState<float>& adam() { return adam_; }
  const CooccurrenceIndex& cooccurrence() const { return index_; }
  const std::vector<Example>& examples() const { return train_; }
  Rng& rng() { return rng_; }
  void set_epoch(int epoch) { epoch_ = epoch; }

 private:
  ModelWeights<float>& w_;
  std::vector<Example> train_;
  VocabSizes sizes_;
  PretrainConfig config_;
  CooccurrenceIndex index_;
  numeric::AdamState<float> adam_;
  Rng rng_;
  int epoch_ = 0;
};

struct OepOptions {
  bool use_visibility = true;
  std::size_t candidate_cap = 256;
  std::uint64_t seed = 0;
};

struct OepResult {
  double accuracy = 0.0;
  int count = 0;
  int correct = 0;
};

/// Masks each object-column cell in turn (both e^e and e^m), encodes, and
/// checks whether the gold entity is the top-1 MER candidate.
OepResult validate_object_entity_prediction(const std::vector<Example>& tables, ModelWeights<float>& w,
                                            const CooccurrenceIndex& index, const VocabSizes& sizes,
                                            const OepOptions& options);

}  // namespace turl::pretrain
