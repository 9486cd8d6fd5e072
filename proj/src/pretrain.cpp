#include "turl/pretrain.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_set>

#include "turl/errors.hpp"

namespace turl::pretrain {

using corpus::Vocabulary;
using encoding::ElementKind;
using encoding::LinearizedSequence;

void MaskRatios::validate() const {
  for (double r : {mlm_select, mlm_mask, mlm_random, mer_select, mer_keep, mer_mask_both, mer_random_sub})
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("masking ratios must lie in [0, 1]");
  if (mlm_mask + mlm_random > 1.0 + 1e-12) throw ConfigError("mlm mask + random ratios exceed 1");
  if (mer_keep + mer_mask_both > 1.0 + 1e-12) throw ConfigError("mer keep + mask-both ratios exceed 1");
}

std::vector<TokenAction> sample_mlm_mask(std::size_t count, Rng& rng, const MaskRatios& r) {
  std::vector<TokenAction> out(count, TokenAction::untouched);
  for (auto& a : out) {
    if (rng.uniform() >= r.mlm_select) continue;
    const double u = rng.uniform();
    if (u < r.mlm_mask)
      a = TokenAction::mask;
    else if (u < r.mlm_mask + r.mlm_random)
      a = TokenAction::random;
    else
      a = TokenAction::keep;
  }
  return out;
}

std::vector<EntityAction> sample_mer_mask(std::size_t count, Rng& rng, const MaskRatios& r) {
  std::vector<EntityAction> out(count, EntityAction::untouched);
  for (auto& a : out) {
    if (rng.uniform() >= r.mer_select) continue;
    const double u = rng.uniform();
    if (u < r.mer_keep) {
      a = EntityAction::keep_both;
    } else if (u < r.mer_keep + r.mer_mask_both) {
      a = EntityAction::mask_both;
    } else {
      a = rng.uniform() < r.mer_random_sub ? EntityAction::mask_e_random : EntityAction::mask_e_only;
    }
  }
  return out;
}

std::vector<int> MaskPlan::token_positions() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i] != TokenAction::untouched) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> MaskPlan::entity_positions() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < entities.size(); ++i)
    if (entities[i] != EntityAction::untouched) out.push_back(static_cast<int>(i));
  return out;
}

namespace {

int random_id(Rng& rng, int reserved, int size) {
  if (size <= reserved) throw ConfigError("vocabulary has no non-reserved entries");
  return static_cast<int>(rng.range(reserved, size));
}

}  // namespace

MaskPlan plan_masks(const LinearizedSequence& seq, Rng& rng, const MaskRatios& ratios, const VocabSizes& sizes) {
  const std::size_t n = seq.size();
  MaskPlan plan;
  plan.tokens.assign(n, TokenAction::untouched);
  plan.entities.assign(n, EntityAction::untouched);
  plan.gold.assign(n, -1);
  plan.replacement.assign(n, -1);

  std::vector<int> tok_idx, ent_idx;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = seq.elements[i];
    if (e.is_token() && e.id >= sizes.token_reserved) tok_idx.push_back(static_cast<int>(i));
    if (e.kind == ElementKind::cell_entity && e.id >= sizes.entity_reserved) ent_idx.push_back(static_cast<int>(i));
  }
  const auto tok_actions = sample_mlm_mask(tok_idx.size(), rng, ratios);
  for (std::size_t k = 0; k < tok_idx.size(); ++k) {
    const auto i = static_cast<std::size_t>(tok_idx[k]);
    plan.tokens[i] = tok_actions[k];
    if (tok_actions[k] == TokenAction::untouched) continue;
    plan.gold[i] = seq.elements[i].id;
    if (tok_actions[k] == TokenAction::random) plan.replacement[i] = random_id(rng, sizes.token_reserved, sizes.tokens);
  }
  const auto ent_actions = sample_mer_mask(ent_idx.size(), rng, ratios);
  for (std::size_t k = 0; k < ent_idx.size(); ++k) {
    const auto i = static_cast<std::size_t>(ent_idx[k]);
    plan.entities[i] = ent_actions[k];
    if (ent_actions[k] == EntityAction::untouched) continue;
    plan.gold[i] = seq.elements[i].id;
    if (ent_actions[k] == EntityAction::mask_e_random)
      plan.replacement[i] = random_id(rng, sizes.entity_reserved, sizes.entities);
  }
  return plan;
}

void mask_entity_both(encoding::Element& e) {
  e.id = Vocabulary::kMask;
  e.mention = {Vocabulary::kMask};
}

LinearizedSequence apply_mask(const LinearizedSequence& seq, const MaskPlan& plan) {
  if (plan.tokens.size() != seq.size() || plan.entities.size() != seq.size())
    throw ShapeMismatch("mask plan length differs from sequence");
  LinearizedSequence out = seq;
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto& e = out.elements[i];
    switch (plan.tokens[i]) {
      case TokenAction::mask: e.id = Vocabulary::kMask; break;
      case TokenAction::random: e.id = plan.replacement[i]; break;
      default: break;
    }
    switch (plan.entities[i]) {
      case EntityAction::mask_both: mask_entity_both(e); break;
      case EntityAction::mask_e_only: e.id = Vocabulary::kMask; break;
      case EntityAction::mask_e_random: e.id = plan.replacement[i]; break;
      default: break;
    }
  }
  return out;
}

std::vector<int> sequence_entities(const LinearizedSequence& seq, int num_reserved) {
  std::vector<int> out;
  std::unordered_set<int> seen;
  for (const auto& e : seq.elements)
    if (e.is_entity() && e.id >= num_reserved && seen.insert(e.id).second) out.push_back(e.id);
  return out;
}

CooccurrenceIndex CooccurrenceIndex::build(const std::vector<LinearizedSequence>& train, int num_reserved) {
  std::map<int, std::set<int>> sets;
  for (const auto& seq : train) {
    const auto ents = sequence_entities(seq, num_reserved);
    for (int a : ents)
      for (int b : ents)
        if (a != b) sets[a].insert(b);
  }
  CooccurrenceIndex index;
  for (auto& [k, v] : sets) index.neighbors_.emplace(k, std::vector<int>(v.begin(), v.end()));
  return index;
}

const std::vector<int>& CooccurrenceIndex::neighbors(int entity) const {
  static const std::vector<int> kEmpty;
  const auto it = neighbors_.find(entity);
  return it == neighbors_.end() ? kEmpty : it->second;
}

std::optional<int> CandidateSet::index_of(int entity) const {
  const auto it = std::find(ids.begin(), ids.end(), entity);
  if (it == ids.end()) return std::nullopt;
  return static_cast<int>(it - ids.begin());
}

CandidateSet build_mer_candidates(const std::vector<int>& table_entities, const std::vector<int>& golds,
                                  const CooccurrenceIndex& index, Rng& rng, std::size_t cap, const VocabSizes& sizes) {
  CandidateSet out;
  std::unordered_set<int> seen;
  const auto add = [&](int id, bool gold) {
    if (id < sizes.entity_reserved || !seen.insert(id).second) return;
    out.ids.push_back(id);
    out.is_gold.push_back(gold ? 1 : 0);
  };
  for (int g : golds) add(g, true);
  for (int e : table_entities) {
    if (out.ids.size() >= cap) break;
    add(e, false);
  }
  for (int e : table_entities) {
    for (int nb : index.neighbors(e)) {
      if (out.ids.size() >= cap) break;
      add(nb, false);
    }
  }
  const std::size_t pool = sizes.entities > sizes.entity_reserved
                               ? static_cast<std::size_t>(sizes.entities - sizes.entity_reserved)
                               : 0;
  if (out.ids.size() < cap) {
    if (pool <= cap) {
      for (int id = sizes.entity_reserved; id < sizes.entities; ++id) add(id, false);
    } else {
      while (out.ids.size() < cap) add(random_id(rng, sizes.entity_reserved, sizes.entities), false);
    }
  }
  return out;
}

template <typename Real>
std::size_t argmax(const Real* values, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

template <typename Real>
LossTerms<Real> mlm_loss(Graph<Real>& g, typename Graph<Real>::Var h, const std::vector<int>& positions,
                         const std::vector<int>& golds, ModelWeights<Real>& w) {
  LossTerms<Real> out;
  if (positions.empty()) return out;
  if (golds.size() != positions.size()) throw ShapeMismatch("mlm gold count");
  auto proj = g.affine(g.gather_rows(h, positions), g.parameter(w.mlm_w), g.parameter(w.mlm_b));
  auto logits = g.matmul_transposed(proj, g.parameter(w.word));
  out.loss = g.cross_entropy(logits, golds);
  out.count = static_cast<int>(positions.size());
  const auto& z = g.value(logits);
  for (std::size_t i = 0; i < z.rows; ++i)
    if (static_cast<int>(argmax(z.row(i), z.cols)) == golds[i]) ++out.correct;
  return out;
}

template <typename Real>
typename Graph<Real>::Var mer_logits(Graph<Real>& g, typename Graph<Real>::Var h, const std::vector<int>& positions,
                                     const std::vector<int>& candidates, ModelWeights<Real>& w) {
  if (candidates.empty()) throw EmptyCandidateSet("MER candidate set is empty");
  auto proj = g.affine(g.gather_rows(h, positions), g.parameter(w.mer_w), g.parameter(w.mer_b));
  return g.matmul_transposed(proj, g.embedding(w.entity, candidates));
}

template <typename Real>
LossTerms<Real> mer_loss(Graph<Real>& g, typename Graph<Real>::Var h, const std::vector<int>& positions,
                         const std::vector<int>& golds, const CandidateSet& candidates, ModelWeights<Real>& w) {
  LossTerms<Real> out;
  if (positions.empty()) return out;
  if (golds.size() != positions.size()) throw ShapeMismatch("mer gold count");
  std::vector<int> gold_index;
  for (int gid : golds) {
    const auto k = candidates.index_of(gid);
    if (!k) throw GoldNotInCandidates("entity " + std::to_string(gid));
    gold_index.push_back(*k);
  }
  auto logits = mer_logits(g, h, positions, candidates.ids, w);
  out.loss = g.cross_entropy(logits, gold_index);
  out.count = static_cast<int>(positions.size());
  const auto& z = g.value(logits);
  for (std::size_t i = 0; i < z.rows; ++i)
    if (static_cast<int>(argmax(z.row(i), z.cols)) == gold_index[i]) ++out.correct;
  return out;
}

Example make_example(const corpus::ProcessedTable& table, const corpus::Vocabularies& vocab, std::size_t max_len) {
  Example ex;
  ex.seq = encoding::linearize(table, vocab.tokens, vocab.entities, max_len);
  ex.visibility = encoding::build_visibility(ex.seq);
  ex.entities = sequence_entities(ex.seq, vocab.entities.num_reserved());
  return ex;
}

std::vector<Example> make_examples(const std::vector<corpus::ProcessedTable>& tables,
                                   const corpus::Vocabularies& vocab, std::size_t max_len) {
  std::vector<Example> out;
  out.reserve(tables.size());
  for (const auto& t : tables) {
    try {
      out.push_back(make_example(t, vocab, max_len));
    } catch (const TableTooSmall&) {
      // nothing fits; skip the table
    }
  }
  return out;
}

VocabSizes vocab_sizes(const corpus::Vocabularies& vocab) {
  VocabSizes s;
  s.tokens = static_cast<int>(vocab.tokens.size());
  s.entities = static_cast<int>(vocab.entities.size());
  s.token_reserved = vocab.tokens.num_reserved();
  s.entity_reserved = vocab.entities.num_reserved();
  return s;
}

std::vector<std::vector<int>> entity_name_ids(const std::vector<corpus::ProcessedTable>& tables,
                                              const corpus::Vocabularies& vocab) {
  std::vector<std::vector<int>> out(vocab.entities.size());
  for (const auto& [id, tokens] : corpus::collect_entity_names(tables)) {
    const auto k = vocab.entities.find(id);
    if (!k) continue;
    for (const auto& t : tokens) out[static_cast<std::size_t>(*k)].push_back(vocab.tokens.lookup(t));
  }
  return out;
}

// ---------------------------------------------------------------- Pretrainer

namespace {

std::vector<LinearizedSequence> sequences_of(const std::vector<Example>& examples) {
  std::vector<LinearizedSequence> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(e.seq);
  return out;
}

}  // namespace

Pretrainer::Pretrainer(ModelWeights<float>& weights, std::vector<Example> train, VocabSizes sizes,
                       PretrainConfig config)
    : w_(weights),
      train_(std::move(train)),
      sizes_(sizes),
      config_(config),
      index_(CooccurrenceIndex::build(sequences_of(train_), sizes.entity_reserved)),
      rng_(config.seed) {
  config_.ratios.validate();
  if (config_.batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (config_.epochs < 0) throw ConfigError("epochs must be >= 0");
}

std::int64_t Pretrainer::total_steps() const {
  const auto n = static_cast<std::int64_t>(train_.size());
  const auto b = static_cast<std::int64_t>(config_.batch_size);
  return static_cast<std::int64_t>(config_.epochs) * ((n + b - 1) / b);
}

StepMetrics Pretrainer::step(const std::vector<std::size_t>& batch) {
  StepMetrics m;
  w_.zero_grad();
  for (std::size_t idx : batch) {
    const Example& ex = train_.at(idx);
    const MaskPlan plan = plan_masks(ex.seq, rng_, config_.ratios, sizes_);
    const auto tok_pos = plan.token_positions();
    const auto ent_pos = plan.entity_positions();
    if (tok_pos.empty() && ent_pos.empty()) continue;
    std::vector<int> tok_gold, ent_gold;
    for (int p : tok_pos) tok_gold.push_back(plan.gold[static_cast<std::size_t>(p)]);
    for (int p : ent_pos) ent_gold.push_back(plan.gold[static_cast<std::size_t>(p)]);
    const CandidateSet cands = build_mer_candidates(ex.entities, ent_gold, index_, rng_, config_.candidate_cap, sizes_);

    const LinearizedSequence masked = apply_mask(ex.seq, plan);
    Graph<float> g;
    const auto h = encoder::encode(g, masked, config_.use_visibility ? &ex.visibility : nullptr, w_);
    const auto mlm = mlm_loss(g, h, tok_pos, tok_gold, w_);
    const auto mer = mer_loss(g, h, ent_pos, ent_gold, cands, w_);
    Graph<float>::Var total;
    if (mlm.loss.valid() && mer.loss.valid())
      total = g.add(mlm.loss, mer.loss);
    else
      total = mlm.loss.valid() ? mlm.loss : mer.loss;
    g.backward(total);
    if (mlm.loss.valid()) m.mlm_loss += g.scalar(mlm.loss);
    if (mer.loss.valid()) m.mer_loss += g.scalar(mer.loss);
    m.loss += g.scalar(total);
    m.mlm_count += mlm.count;
    m.mlm_correct += mlm.correct;
    m.mer_count += mer.count;
    m.mer_correct += mer.correct;
  }
  const double lr = numeric::linear_decay_lr(config_.lr, adam_.step, total_steps());
  auto params = w_.parameters();
  numeric::adam_step<float>(params, adam_, lr);
  return m;
}

EpochMetrics Pretrainer::run_epoch() {
  std::vector<std::size_t> order(train_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng_.shuffle(std::span<std::size_t>(order));
  EpochMetrics e;
  e.epoch = ++epoch_;
  long mlm_n = 0, mlm_c = 0, mer_n = 0, mer_c = 0;
  const auto b = static_cast<std::size_t>(config_.batch_size);
  std::vector<std::vector<std::size_t>> batches;
  // length buckets: sort each window of kBucketWindow batches by length, then shuffle the batches
  constexpr std::size_t kBucketWindow = 8;
  for (std::size_t w = 0; w < order.size(); w += b * kBucketWindow) {
    const auto first = order.begin() + static_cast<std::ptrdiff_t>(w);
    const auto last = order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), w + b * kBucketWindow));
    if (b > 1)
      std::stable_sort(first, last, [&](std::size_t x, std::size_t y) { return train_[x].seq.size() < train_[y].seq.size(); });
    for (auto it = first; it != last;) {
      const auto end = it + std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(b), last - it);
      batches.emplace_back(it, end);
      it = end;
    }
  }
  if (b > 1) rng_.shuffle(std::span<std::vector<std::size_t>>(batches));
  for (const auto& batch : batches) {
    const auto m = step(batch);
    e.loss += m.loss;
    mlm_n += m.mlm_count;
    mlm_c += m.mlm_correct;
    mer_n += m.mer_count;
    mer_c += m.mer_correct;
  }
  e.mlm_acc = mlm_n ? static_cast<double>(mlm_c) / static_cast<double>(mlm_n) : 0.0;
  e.mer_acc = mer_n ? static_cast<double>(mer_c) / static_cast<double>(mer_n) : 0.0;
  return e;
}

OepResult validate_object_entity_prediction(const std::vector<Example>& tables, ModelWeights<float>& w,
                                            const CooccurrenceIndex& index, const VocabSizes& sizes,
                                            const OepOptions& options) {
  OepResult r;
  Rng base(options.seed);
  for (std::size_t t = 0; t < tables.size(); ++t) {
    const Example& ex = tables[t];
    Rng rng = base.derive(t);
    for (std::size_t i = 0; i < ex.seq.size(); ++i) {
      const auto& el = ex.seq.elements[i];
      if (el.kind != ElementKind::cell_entity) continue;
      if (el.seg_type != static_cast<int>(corpus::EntityKind::object) || el.id < sizes.entity_reserved) continue;
      LinearizedSequence masked = ex.seq;
      mask_entity_both(masked.elements[i]);
      const CandidateSet cands = build_mer_candidates(ex.entities, {el.id}, index, rng, options.candidate_cap, sizes);
      Graph<float> g(false);
      const auto h = encoder::encode(g, masked, options.use_visibility ? &ex.visibility : nullptr, w);
      const auto logits = mer_logits(g, h, {static_cast<int>(i)}, cands.ids, w);
      const auto& z = g.value(logits);
      ++r.count;
      if (cands.ids[argmax(z.row(0), z.cols)] == el.id) ++r.correct;
    }
  }
  r.accuracy = r.count ? static_cast<double>(r.correct) / static_cast<double>(r.count) : 0.0;
  return r;
}

#define TURL_INSTANTIATE(Real)                                                                                 \
  template std::size_t argmax<Real>(const Real*, std::size_t);                                                 \
  template LossTerms<Real> mlm_loss<Real>(Graph<Real>&, Graph<Real>::Var, const std::vector<int>&,            \
                                          const std::vector<int>&, ModelWeights<Real>&);                       \
  template LossTerms<Real> mer_loss<Real>(Graph<Real>&, Graph<Real>::Var, const std::vector<int>&,            \
                                          const std::vector<int>&, const CandidateSet&, ModelWeights<Real>&);  \
  template Graph<Real>::Var mer_logits<Real>(Graph<Real>&, Graph<Real>::Var, const std::vector<int>&,         \
                                             const std::vector<int>&, ModelWeights<Real>&);

TURL_INSTANTIATE(float)
TURL_INSTANTIATE(double)
#undef TURL_INSTANTIATE

}  // namespace turl::pretrain
