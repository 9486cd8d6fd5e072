#include "turl/tasks.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "turl/errors.hpp"
#include "turl/pretrain.hpp"
#include "turl/rng.hpp"

namespace turl::tasks {

using corpus::ProcessedTable;
using corpus::Vocabulary;
using encoding::Element;
using encoding::ElementKind;
using encoding::LinearizedSequence;
using Var = Graph<float>::Var;

Task parse_task(const std::string& name) {
  if (name == "el") return Task::el;
  if (name == "cta") return Task::cta;
  if (name == "re") return Task::re;
  if (name == "rp") return Task::rp;
  if (name == "cf") return Task::cf;
  if (name == "sa") return Task::sa;
  throw ConfigError("unknown task '" + name + "'");
}

std::string task_name(Task task) {
  switch (task) {
    case Task::el: return "el";
    case Task::cta: return "cta";
    case Task::re: return "re";
    case Task::rp: return "rp";
    case Task::cf: return "cf";
    case Task::sa: return "sa";
  }
  return "?";
}

// ---------------------------------------------------------------- side data

namespace {

template <typename Fn>
void for_each_json_line(const std::string& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw MissingSideData("cannot open " + path);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      fn(j);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

std::vector<std::string> string_list(const nlohmann::json& j, const char* key) {
  std::vector<std::string> out;
  if (j.contains(key))
    for (const auto& v : j.at(key)) out.push_back(v.get<std::string>());
  return out;
}

std::string join(const std::vector<std::string>& tokens) {
  std::string s;
  for (const auto& t : tokens) {
    if (!s.empty()) s += ' ';
    s += t;
  }
  return s;
}

}  // namespace

TypeMap load_type_map(const std::string& path) {
  TypeMap out;
  for_each_json_line(path, [&](const nlohmann::json& j) {
    auto& dst = out[j.at("entity_id").get<std::string>()];
    for (auto& t : string_list(j, "types")) dst.insert(t);
  });
  return out;
}

baselines::RelationMap load_relation_map(const std::string& path) {
  baselines::RelationMap out;
  for_each_json_line(path, [&](const nlohmann::json& j) {
    auto& dst = out[{j.at("subject").get<std::string>(), j.at("object").get<std::string>()}];
    for (auto& r : string_list(j, "relations")) dst.insert(r);
  });
  return out;
}

KnowledgeBase load_kb(const std::string& path, const Tokenizer& tokenizer) {
  KnowledgeBase out;
  for_each_json_line(path, [&](const nlohmann::json& j) {
    KBEntity e;
    e.entity_id = j.at("entity_id").get<std::string>();
    e.name = tokenizer.tokenize(j.value("name", std::string()));
    e.description = tokenizer.tokenize(j.value("description", std::string()));
    e.types = string_list(j, "types");
    if (e.name.empty()) throw ParseError("KB entity " + e.entity_id + " has an empty name");
    out[e.entity_id] = std::move(e);
  });
  return out;
}

ElCandidateMap load_el_candidates(const std::string& path) {
  ElCandidateMap out;
  for_each_json_line(path, [&](const nlohmann::json& j) {
    auto& dst = out[normalize_label(j.at("mention").get<std::string>())];
    std::size_t rank = dst.size();
    for (const auto& c : j.at("candidates")) {
      LookupCandidate lc;
      lc.entity_id = c.at("entity_id").get<std::string>();
      lc.score = c.contains("score") ? c.at("score").get<double>() : 1.0 / static_cast<double>(rank + 1);
      dst.push_back(std::move(lc));
      ++rank;
    }
  });
  return out;
}

// ---------------------------------------------------------------- datasets

namespace {

/// Label vocabulary from per-label instance counts, keeping labels with >= min instances.
Vocabulary label_vocab_from(corpus::VocabKind kind, const std::vector<std::set<std::string>>& labels,
                            std::size_t min_instances) {
  std::map<std::string, std::int64_t> counts;
  for (const auto& s : labels)
    for (const auto& l : s) ++counts[l];
  return Vocabulary::from_counts(kind, counts, static_cast<std::int64_t>(std::max<std::size_t>(min_instances, 1)));
}

LabelDataset finish_labels(corpus::VocabKind kind, std::vector<LabelInstance> skeleton,
                           const std::vector<std::set<std::string>>& raw, const TaskThresholds& th,
                           const Vocabulary* label_vocab) {
  LabelDataset ds;
  ds.labels = label_vocab ? *label_vocab : label_vocab_from(kind, raw, th.min_label_instances);
  for (std::size_t i = 0; i < skeleton.size(); ++i) {
    LabelInstance inst = skeleton[i];
    for (const auto& l : raw[i])
      if (auto id = ds.labels.find(l)) inst.labels.insert(*id);
    if (!inst.labels.empty()) ds.instances.push_back(std::move(inst));
  }
  return ds;
}

}  // namespace

LabelDataset derive_cta(const std::vector<ProcessedTable>& tables, const TypeMap& types, const TaskThresholds& th,
                        const Vocabulary* label_vocab) {
  std::vector<LabelInstance> skeleton;
  std::vector<std::set<std::string>> raw;
  for (std::size_t t = 0; t < tables.size(); ++t) {
    const auto& table = tables[t];
    for (int c : table.entity_columns) {
      std::optional<std::set<std::string>> common;
      std::size_t linked = 0;
      for (const auto* cell : table.column_cells(c)) {
        const auto it = types.find(cell->entity_id);
        if (it == types.end()) continue;  // untyped entity does not vote
        ++linked;
        if (!common) {
          common = it->second;
        } else {
          std::set<std::string> both;
          std::set_intersection(common->begin(), common->end(), it->second.begin(), it->second.end(),
                                std::inserter(both, both.end()));
          common = std::move(both);
        }
      }
      if (linked < th.cta_min_linked || !common || common->empty()) continue;
      LabelInstance inst;
      inst.table = t;
      inst.column = c;
      skeleton.push_back(inst);
      raw.push_back(*common);
    }
  }
  return finish_labels(corpus::VocabKind::type_label, std::move(skeleton), raw, th, label_vocab);
}

LabelDataset derive_re(const std::vector<ProcessedTable>& tables, const baselines::RelationMap& relations,
                       const TaskThresholds& th, const Vocabulary* label_vocab) {
  std::vector<LabelInstance> skeleton;
  std::vector<std::set<std::string>> raw;
  for (std::size_t t = 0; t < tables.size(); ++t) {
    const auto& table = tables[t];
    if (!table.subject_column) continue;
    const int s = *table.subject_column;
    for (int c : table.entity_columns) {
      if (c == s) continue;
      std::size_t pairs = 0;
      std::map<std::string, std::size_t> votes;
      for (int r = 0; r < table.row_count; ++r) {
        const auto* a = table.cell_at(r, s);
        const auto* b = table.cell_at(r, c);
        if (!a || !b) continue;
        ++pairs;
        const auto it = relations.find({a->entity_id, b->entity_id});
        if (it == relations.end()) continue;
        for (const auto& rel : it->second) ++votes[rel];
      }
      if (pairs == 0) continue;
      std::set<std::string> labels;
      for (const auto& [rel, n] : votes)
        if (static_cast<double>(n) > th.re_min_fraction * static_cast<double>(pairs)) labels.insert(rel);
      if (labels.empty()) continue;
      LabelInstance inst;
      inst.table = t;
      inst.column = s;
      inst.object_column = c;
      skeleton.push_back(inst);
      raw.push_back(std::move(labels));
    }
  }
  return finish_labels(corpus::VocabKind::relation_label, std::move(skeleton), raw, th, label_vocab);
}

std::vector<ElInstance> derive_el(const std::vector<ProcessedTable>& tables, const ElCandidateMap& candidates) {
  std::vector<ElInstance> out;
  for (std::size_t t = 0; t < tables.size(); ++t) {
    ElInstance inst;
    inst.table = t;
    for (const auto& cell : tables[t].cells) {
      ElCell c;
      c.row = cell.row;
      c.column = cell.column;
      c.gold = cell.entity_id;
      const auto it = candidates.find(normalize_label(join(cell.mention)));
      if (it != candidates.end()) c.candidates = it->second;
      inst.cells.push_back(std::move(c));
    }
    if (!inst.cells.empty()) out.push_back(std::move(inst));
  }
  return out;
}

std::vector<RpInstance> derive_rp(const std::vector<ProcessedTable>& tables, const baselines::BaselineIndex& index,
                                  std::size_t n_seeds, Split split, const TaskThresholds& th) {
  const std::size_t min_subjects = split == Split::train ? th.rp_train_min_subjects : th.rp_eval_min_subjects;
  std::vector<RpInstance> out;
  for (std::size_t t = 0; t < tables.size(); ++t) {
    const auto& table = tables[t];
    if (!table.subject_column) continue;
    std::vector<std::string> subjects;
    std::vector<std::string> seed_names;
    for (const auto* cell : table.column_cells(*table.subject_column))
      if (std::find(subjects.begin(), subjects.end(), cell->entity_id) == subjects.end()) {
        subjects.push_back(cell->entity_id);
        if (subjects.size() <= n_seeds) seed_names.insert(seed_names.end(), cell->mention.begin(), cell->mention.end());
      }
    if (subjects.size() <= min_subjects || subjects.size() <= n_seeds) continue;
    RpInstance inst;
    inst.table = t;
    inst.seeds.assign(subjects.begin(), subjects.begin() + static_cast<std::ptrdiff_t>(n_seeds));
    inst.golds.insert(subjects.begin() + static_cast<std::ptrdiff_t>(n_seeds), subjects.end());
    const bool seed_mode = n_seeds > 0;
    const auto retrieved = index.row_population_candidates(seed_mode ? seed_names : table.caption_tokens, seed_mode,
                                                           th.rp_top_k_tables, table.table_id);
    std::set<std::string> seen(inst.seeds.begin(), inst.seeds.end());
    for (const auto& e : retrieved)
      if (seen.insert(e).second) inst.candidates.push_back(e);
    if (split == Split::train)
      for (const auto& g : inst.golds)
        if (seen.insert(g).second) inst.candidates.push_back(g);
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<CfInstance> derive_cf(const std::vector<ProcessedTable>& tables, const baselines::HeaderStats& stats,
                                  const TaskThresholds& th) {
  std::vector<CfInstance> out;
  for (std::size_t t = 0; t < tables.size(); ++t) {
    const auto& table = tables[t];
    if (!table.subject_column) continue;
    const int s = *table.subject_column;
    for (int c : table.entity_columns) {
      if (c == s) continue;
      CfInstance inst;
      inst.table = t;
      inst.subject_column = s;
      inst.object_column = c;
      inst.header = table.header_texts.at(static_cast<std::size_t>(c));
      for (int r = 0; r < table.row_count; ++r) {
        const auto* a = table.cell_at(r, s);
        const auto* b = table.cell_at(r, c);
        if (!a || !b) continue;
        CfRow row;
        row.row = r;
        row.subject = a->entity_id;
        row.gold = b->entity_id;
        row.candidates = baselines::cell_filling_candidates(a->entity_id, inst.header, stats, th.cf_filter_candidates);
        inst.rows.push_back(std::move(row));
      }
      if (inst.rows.size() >= th.cf_min_pairs) out.push_back(std::move(inst));
    }
  }
  return out;
}

Vocabulary build_header_vocab(const std::vector<ProcessedTable>& tables, const TaskThresholds& th) {
  std::map<std::string, std::int64_t> counts;
  for (const auto& table : tables) {
    std::set<std::string> seen;
    for (int c : table.entity_columns) {
      const auto& h = table.header_texts.at(static_cast<std::size_t>(c));
      if (!h.empty()) seen.insert(h);
    }
    for (const auto& h : seen) ++counts[h];
  }
  return Vocabulary::from_counts(corpus::VocabKind::header_label, counts,
                                 static_cast<std::int64_t>(std::max<std::size_t>(th.sa_min_tables, 1)));
}

std::vector<SaInstance> derive_sa(const std::vector<ProcessedTable>& tables, const Vocabulary& header_vocab,
                                  std::size_t n_seeds) {
  std::vector<SaInstance> out;
  for (std::size_t t = 0; t < tables.size(); ++t) {
    std::vector<int> ids;
    for (int c : tables[t].entity_columns)
      if (auto id = header_vocab.find(tables[t].header_texts.at(static_cast<std::size_t>(c))))
        if (std::find(ids.begin(), ids.end(), *id) == ids.end()) ids.push_back(*id);
    if (ids.size() <= n_seeds) continue;
    SaInstance inst;
    inst.table = t;
    inst.seeds.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_seeds));
    inst.golds.insert(ids.begin() + static_cast<std::ptrdiff_t>(n_seeds), ids.end());
    out.push_back(std::move(inst));
  }
  return out;
}

// ---------------------------------------------------------------- task inputs

namespace {

std::vector<int> token_ids(const std::vector<std::string>& tokens, const Vocabulary& vocab) {
  std::vector<int> out;
  for (const auto& w : tokens) out.push_back(vocab.lookup(w));
  return out;
}

/// Caption tokens first, cut so that caption + body fits in max_len.
LinearizedSequence with_caption(const ProcessedTable& table, std::vector<Element> body, const Vocabulary& tokens,
                                std::size_t max_len) {
  if (body.size() > max_len) throw TableTooSmall("task input of table " + table.table_id + " exceeds max_len");
  LinearizedSequence seq;
  seq.table_id = table.table_id;
  std::vector<std::string> caption = table.caption_tokens;
  if (caption.size() > max_len - body.size()) caption.resize(max_len - body.size());
  encoding::append_tokens(seq, caption, ElementKind::caption_token, -1, tokens);
  for (auto& e : body) seq.elements.push_back(std::move(e));
  return seq;
}

void append_header(std::vector<Element>& body, const std::vector<int>& ids, int column) {
  int pos = 0;
  for (int id : ids) {
    Element e;
    e.kind = ElementKind::header_token;
    e.id = id;
    e.position = pos++;
    e.column = column;
    e.seg_type = encoding::kHeaderSegment;
    body.push_back(std::move(e));
  }
}

std::optional<Element> topic_element(const ProcessedTable& table, const corpus::Vocabularies& vocab) {
  if (!table.topic_entity) return std::nullopt;
  return encoding::make_entity(vocab.entities.lookup(table.topic_entity->entity_id),
                               token_ids(table.topic_entity->mention, vocab.tokens), corpus::EntityKind::topic, -1, -1);
}

}  // namespace

LinearizedSequence el_sequence(const ProcessedTable& table, const corpus::Vocabularies& vocab, std::size_t max_len) {
  LinearizedSequence seq = encoding::linearize(table, vocab.tokens, vocab.entities, max_len);
  for (auto& e : seq.elements)
    if (e.kind == ElementKind::cell_entity) e.id = Vocabulary::kMask;
  return seq;
}

LinearizedSequence rp_sequence(const ProcessedTable& table, const std::vector<std::string>& seeds,
                               const corpus::Vocabularies& vocab, std::size_t max_len) {
  if (!table.subject_column) throw EmptyColumn("table " + table.table_id + " has no subject column");
  const int s = *table.subject_column;
  std::vector<Element> body;
  if (auto topic = topic_element(table, vocab)) body.push_back(*topic);
  int row = 0;
  for (const auto& id : seeds) {
    std::vector<int> mention;
    for (const auto* cell : table.column_cells(s))
      if (cell->entity_id == id) {
        mention = token_ids(cell->mention, vocab.tokens);
        break;
      }
    body.push_back(encoding::make_entity(vocab.entities.lookup(id), mention, corpus::EntityKind::subject, row++, s));
  }
  body.push_back(encoding::make_entity(Vocabulary::kMask, {Vocabulary::kMask}, corpus::EntityKind::subject, row, s));
  return with_caption(table, std::move(body), vocab.tokens, max_len);
}

LinearizedSequence cf_sequence(const ProcessedTable& table, const CfInstance& instance,
                               const corpus::Vocabularies& vocab, std::size_t max_len) {
  std::vector<Element> body;
  if (auto topic = topic_element(table, vocab)) body.push_back(*topic);
  for (int c : {instance.subject_column, instance.object_column})
    append_header(body, token_ids(table.headers.at(static_cast<std::size_t>(c)), vocab.tokens), c);
  for (const auto& r : instance.rows) {
    if (body.size() + 2 > max_len) break;
    const auto* subj = table.cell_at(r.row, instance.subject_column);
    body.push_back(encoding::make_entity(vocab.entities.lookup(r.subject),
                                         subj ? token_ids(subj->mention, vocab.tokens) : std::vector<int>{},
                                         corpus::EntityKind::subject, r.row, instance.subject_column));
    body.push_back(encoding::make_entity(Vocabulary::kMask, {Vocabulary::kMask}, corpus::EntityKind::object, r.row,
                                         instance.object_column));
  }
  return with_caption(table, std::move(body), vocab.tokens, max_len);
}

LinearizedSequence sa_sequence(const ProcessedTable& table, const std::vector<int>& seeds,
                               const Vocabulary& header_vocab, const corpus::Vocabularies& vocab,
                               const Tokenizer& tokenizer, std::size_t max_len) {
  std::vector<Element> body;
  int column = 0;
  for (int id : seeds) append_header(body, token_ids(tokenizer.tokenize(header_vocab.entry(id)), vocab.tokens), column++);
  append_header(body, {Vocabulary::kMask}, column);
  return with_caption(table, std::move(body), vocab.tokens, max_len);
}

template <typename Real>
typename Graph<Real>::Var column_representation(Graph<Real>& g, typename Graph<Real>::Var h,
                                                const LinearizedSequence& seq, int column) {
  const auto cells = seq.cell_indices(column);
  if (cells.empty()) throw EmptyColumn("column " + std::to_string(column) + " has no entity cells in the input");
  const auto headers = seq.header_indices(column);
  const std::size_t d = g.value(h).cols;
  auto hv = headers.empty() ? g.constant(Matrix<Real>(1, d)) : g.mean_rows(g.gather_rows(h, headers));
  auto cv = g.mean_rows(g.gather_rows(h, cells));
  return g.concat_cols({hv, cv});
}

template Graph<float>::Var column_representation<float>(Graph<float>&, Graph<float>::Var, const LinearizedSequence&,
                                                        int);
template Graph<double>::Var column_representation<double>(Graph<double>&, Graph<double>::Var,
                                                          const LinearizedSequence&, int);

// ---------------------------------------------------------------- heads

namespace {

Tensor<float> random_tensor(const std::string& name, std::size_t r, std::size_t c, Rng& rng) {
  Tensor<float> t(name, r, c);
  for (auto& v : t.value.data) v = static_cast<float>(rng.truncated_normal(0.02));
  return t;
}

}  // namespace

ElHead ElHead::init(int d_model, Vocabulary types, Rng& rng) {
  ElHead h;
  const auto d = static_cast<std::size_t>(d_model);
  h.w = random_tensor("head.el.w", d, 3 * d, rng);
  h.b = Tensor<float>("head.el.b", 1, 3 * d);
  h.type_embedding = random_tensor("head.el.type", std::max<std::size_t>(types.size(), 1), d, rng);
  h.types = std::move(types);
  return h;
}

std::vector<Tensor<float>*> ElHead::parameters() { return {&w, &b, &type_embedding}; }

LabelHead LabelHead::init(const std::string& name, int in_width, int labels) {
  LabelHead h;
  h.w = Tensor<float>(name + ".w", static_cast<std::size_t>(in_width), static_cast<std::size_t>(labels));
  h.b = Tensor<float>(name + ".b", 1, static_cast<std::size_t>(labels));
  return h;
}

std::vector<Tensor<float>*> LabelHead::parameters() { return {&w, &b}; }

RpHead RpHead::from_mer(const ModelWeights<float>& weights) {
  RpHead h;
  h.w = weights.mer_w.cast<float>();
  h.w.name = "head.rp.w";
  h.b = weights.mer_b.cast<float>();
  h.b.name = "head.rp.b";
  return h;
}

std::vector<Tensor<float>*> RpHead::parameters() { return {&w, &b}; }

// ---------------------------------------------------------------- training loop

std::vector<double> finetune_loop(std::vector<Tensor<float>*> params, std::size_t n_instances,
                                  const std::function<Var(Graph<float>&, std::size_t)>& loss_fn,
                                  const FinetuneConfig& config) {
  if (config.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::vector<double> losses;
  if (n_instances == 0) return losses;
  numeric::AdamState<float> adam;
  Rng rng(config.seed);
  const auto batch = static_cast<std::size_t>(config.batch_size);
  const std::int64_t per_epoch = static_cast<std::int64_t>((n_instances + batch - 1) / batch);
  const std::int64_t total = per_epoch * config.epochs;
  std::vector<std::size_t> order(n_instances);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n_instances; start += batch) {
      for (auto* p : params) p->zero_grad();
      for (std::size_t i = start; i < std::min(start + batch, n_instances); ++i) {
        Graph<float> g;
        const Var loss = loss_fn(g, order[i]);
        if (!loss.valid()) continue;
        g.backward(loss);
        epoch_loss += g.scalar(loss);
      }
      numeric::adam_step<float>(params, adam, numeric::linear_decay_lr(config.lr, adam.step, total));
    }
    losses.push_back(epoch_loss);
  }
  return losses;
}

namespace {

std::vector<Tensor<float>*> joint(ModelWeights<float>& w, std::vector<Tensor<float>*> head) {
  auto p = w.parameters();
  p.insert(p.end(), head.begin(), head.end());
  return p;
}

Var encode_input(Graph<float>& g, const LinearizedSequence& seq, ModelWeights<float>& w, bool use_visibility) {
  if (!use_visibility) return encoder::encode(g, seq, nullptr, w);
  const auto vis = encoding::build_visibility(seq);
  return encoder::encode(g, seq, &vis, w);
}

const ProcessedTable& table_of(const TaskContext& ctx, std::size_t i) {
  if (!ctx.tables || !ctx.vocab) throw MissingSideData("task context lacks tables or vocabularies");
  return ctx.tables->at(i);
}

/// Dense string -> int ids for metric code.
struct Interner {
  std::map<std::string, std::int64_t> ids;
  std::int64_t operator()(const std::string& s) { return ids.emplace(s, static_cast<std::int64_t>(ids.size())).first->second; }
};

std::string key_at(const char* base, double t) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s@%.2f", base, t);
  return buf;
}

void put_prf(std::map<std::string, double>& m, const metrics::PRF& prf, const std::string& suffix = "") {
  m["precision" + suffix] = prf.precision;
  m["recall" + suffix] = prf.recall;
  m["f1" + suffix] = prf.f1;
}

}  // namespace

// ---------------------------------------------------------------- EL

Var kb_representation(Graph<float>& g, const std::vector<std::string>& ids, const TaskContext& ctx,
                      ModelWeights<float>& w, ElHead& head) {
  if (!ctx.kb) throw MissingSideData("entity linking needs the KB entity file");
  std::vector<std::vector<int>> names, descs, types;
  for (const auto& id : ids) {
    const auto it = ctx.kb->find(id);
    if (it == ctx.kb->end()) throw MissingSideData("entity " + id + " is not in the KB file");
    names.push_back(token_ids(it->second.name, ctx.vocab->tokens));
    descs.push_back(head.use_description ? token_ids(it->second.description, ctx.vocab->tokens) : std::vector<int>{});
    std::vector<int> t;
    for (const auto& ty : it->second.types)
      if (auto k = head.types.find(ty)) t.push_back(*k);
    types.push_back(std::move(t));
  }
  return g.concat_cols({g.embedding_mean(w.word, names), g.embedding_mean(w.word, descs),
                        g.embedding_mean(head.type_embedding, types)});
}

namespace {

/// Candidates that exist in the KB, in lookup order.
std::vector<LookupCandidate> known_candidates(const ElCell& cell, const TaskContext& ctx) {
  std::vector<LookupCandidate> out;
  std::set<std::string> seen;
  for (const auto& c : cell.candidates)
    if (ctx.kb->count(c.entity_id) && seen.insert(c.entity_id).second) out.push_back(c);
  return out;
}

std::map<std::pair<int, int>, int> cell_positions(const LinearizedSequence& seq) {
  std::map<std::pair<int, int>, int> out;
  for (std::size_t i = 0; i < seq.size(); ++i)
    if (seq.elements[i].kind == ElementKind::cell_entity)
      out[{seq.elements[i].row, seq.elements[i].column}] = static_cast<int>(i);
  return out;
}

Var el_logits(Graph<float>& g, Var h, int position, const std::vector<LookupCandidate>& cands,
              const TaskContext& ctx, ModelWeights<float>& w, ElHead& head) {
  std::vector<std::string> ids;
  for (const auto& c : cands) ids.push_back(c.entity_id);
  auto proj = g.affine(g.gather_rows(h, {position}), g.parameter(head.w), g.parameter(head.b));
  return g.matmul_transposed(proj, kb_representation(g, ids, ctx, w, head));
}

}  // namespace

std::vector<double> finetune_el(ModelWeights<float>& w, ElHead& head, const std::vector<ElInstance>& data,
                                const TaskContext& ctx, const FinetuneConfig& config) {
  if (!ctx.kb) throw MissingSideData("entity linking needs the KB entity file");
  auto fn = [&](Graph<float>& g, std::size_t i) -> Var {
    const auto& inst = data[i];
    const auto seq = el_sequence(table_of(ctx, inst.table), *ctx.vocab, config.max_len);
    const auto pos = cell_positions(seq);
    std::vector<std::pair<int, std::vector<LookupCandidate>>> work;
    std::vector<int> golds;
    for (const auto& cell : inst.cells) {
      const auto p = pos.find({cell.row, cell.column});
      if (p == pos.end()) continue;
      auto cands = known_candidates(cell, ctx);
      const auto gi = std::find_if(cands.begin(), cands.end(), [&](const auto& c) { return c.entity_id == cell.gold; });
      if (gi == cands.end()) continue;  // gold unreachable: nothing to learn
      golds.push_back(static_cast<int>(gi - cands.begin()));
      work.emplace_back(p->second, std::move(cands));
    }
    if (work.empty()) return {};
    const Var h = encode_input(g, seq, w, config.use_visibility);
    Var total;
    for (std::size_t k = 0; k < work.size(); ++k) {
      const Var ce = g.cross_entropy(el_logits(g, h, work[k].first, work[k].second, ctx, w, head), {golds[k]});
      total = total.valid() ? g.add(total, ce) : ce;
    }
    return total;
  };
  return finetune_loop(joint(w, head.parameters()), data.size(), fn, config);
}

EvalReport evaluate_el(ModelWeights<float>& w, ElHead& head, const std::vector<ElInstance>& data,
                       const TaskContext& ctx, const FinetuneConfig& config, const ElOptions& options) {
  if (!ctx.kb) throw MissingSideData("entity linking needs the KB entity file");
  Interner intern;
  std::vector<metrics::LinkPrediction> preds;
  for (const auto& inst : data) {
    const auto seq = el_sequence(table_of(ctx, inst.table), *ctx.vocab, config.max_len);
    const auto pos = cell_positions(seq);
    Graph<float> g(false);
    std::optional<Var> h;
    for (const auto& cell : inst.cells) {
      metrics::LinkPrediction lp;
      lp.gold = intern(cell.gold);
      const auto cands = known_candidates(cell, ctx);
      const auto p = pos.find({cell.row, cell.column});
      if (!cands.empty() && p != pos.end()) {
        if (!h) h = encode_input(g, seq, w, config.use_visibility);
        const auto& z = g.value(el_logits(g, *h, p->second, cands, ctx, w, head));
        const std::size_t best = pretrain::argmax(z.row(0), z.cols);
        std::string chosen = cands[best].entity_id;
        if (options.reweight) {
          double denom = 0.0;
          for (std::size_t k = 0; k < z.cols; ++k) denom += std::exp(static_cast<double>(z(0, k) - z(0, best)));
          const double ours = options.reweight_factor / denom;
          const auto& top = cell.candidates.front();
          if (top.score > ours) chosen = top.entity_id;
        }
        lp.predicted = intern(chosen);
      }
      preds.push_back(lp);
    }
  }
  EvalReport r;
  r.task = "el";
  r.n_instances = preds.size();
  put_prf(r.metrics, metrics::micro_prf_el(preds));
  return r;
}

EvalReport evaluate_el_lookup(const std::vector<ElInstance>& data) {
  Interner intern;
  std::vector<metrics::LinkPrediction> preds;
  std::vector<metrics::RankedPrediction> ranked;
  for (const auto& inst : data)
    for (const auto& cell : inst.cells) {
      metrics::LinkPrediction lp;
      lp.gold = intern(cell.gold);
      metrics::RankedPrediction rp;
      rp.gold = {lp.gold};
      for (const auto& c : cell.candidates) rp.ranked.push_back(intern(c.entity_id));
      if (!cell.candidates.empty()) lp.predicted = rp.ranked.front();
      preds.push_back(lp);
      ranked.push_back(std::move(rp));
    }
  EvalReport r;
  r.task = "el";
  r.n_instances = preds.size();
  put_prf(r.metrics, metrics::micro_prf_el(preds));
  r.metrics["candidate_recall"] = metrics::candidate_recall(ranked);
  return r;
}

// ---------------------------------------------------------------- CTA / RE

namespace {

struct LabelInput {
  LinearizedSequence seq;
  bool usable = false;
};

LabelInput label_input(const ProcessedTable& table, const TaskContext& ctx, const FinetuneConfig& config,
                       std::initializer_list<int> columns) {
  LabelInput in;
  in.seq = encoding::linearize(table, ctx.vocab->tokens, ctx.vocab->entities, config.max_len);
  in.usable = true;
  for (int c : columns) in.usable = in.usable && !in.seq.cell_indices(c).empty();
  return in;
}

Var label_logits(Graph<float>& g, const LabelInput& in, const LabelInstance& inst, bool pair, LabelHead& head,
                 ModelWeights<float>& w, bool use_visibility) {
  const Var h = encode_input(g, in.seq, w, use_visibility);
  Var rep = column_representation(g, h, in.seq, inst.column);
  if (pair) rep = g.concat_cols({rep, column_representation(g, h, in.seq, inst.object_column)});
  return g.affine(rep, g.parameter(head.w), g.parameter(head.b));
}

std::vector<double> finetune_labels(ModelWeights<float>& w, LabelHead& head, const LabelDataset& data,
                                    const TaskContext& ctx, const FinetuneConfig& config, bool pair) {
  const std::size_t L = data.labels.size();
  auto fn = [&](Graph<float>& g, std::size_t i) -> Var {
    const auto& inst = data.instances[i];
    const auto& table = table_of(ctx, inst.table);
    const auto in = pair ? label_input(table, ctx, config, {inst.column, inst.object_column})
                         : label_input(table, ctx, config, {inst.column});
    if (!in.usable) return {};
    Matrix<float> target(1, L);
    for (int l : inst.labels) target(0, static_cast<std::size_t>(l)) = 1.0f;
    return g.bce_with_logits(label_logits(g, in, inst, pair, head, w, config.use_visibility), std::move(target));
  };
  return finetune_loop(joint(w, head.parameters()), data.instances.size(), fn, config);
}

std::vector<float> label_probabilities(Graph<float>& g, Var logits) {
  const auto& z = g.value(logits);
  std::vector<float> p(z.cols);
  for (std::size_t k = 0; k < z.cols; ++k) p[k] = numeric::kernels::sigmoid(z(0, k));
  return p;
}

EvalReport evaluate_labels(ModelWeights<float>& w, LabelHead& head, const LabelDataset& data, const TaskContext& ctx,
                           const FinetuneConfig& config, bool pair) {
  std::vector<metrics::LabelSets> sets;
  for (const auto& inst : data.instances) {
    const auto& table = table_of(ctx, inst.table);
    const auto in = pair ? label_input(table, ctx, config, {inst.column, inst.object_column})
                         : label_input(table, ctx, config, {inst.column});
    if (!in.usable) continue;
    Graph<float> g(false);
    const auto p = label_probabilities(g, label_logits(g, in, inst, pair, head, w, config.use_visibility));
    metrics::LabelSets s;
    s.gold = inst.labels;
    for (std::size_t k = 0; k < p.size(); ++k)
      if (p[k] > 0.5f) s.predicted.insert(static_cast<int>(k));
    sets.push_back(std::move(s));
  }
  EvalReport r;
  r.task = pair ? "re" : "cta";
  r.n_instances = sets.size();
  put_prf(r.metrics, metrics::micro_prf(sets));
  return r;
}

}  // namespace

std::vector<double> finetune_cta(ModelWeights<float>& w, LabelHead& head, const LabelDataset& data,
                                 const TaskContext& ctx, const FinetuneConfig& config) {
  return finetune_labels(w, head, data, ctx, config, false);
}

EvalReport evaluate_cta(ModelWeights<float>& w, LabelHead& head, const LabelDataset& data, const TaskContext& ctx,
                        const FinetuneConfig& config) {
  return evaluate_labels(w, head, data, ctx, config, false);
}

std::vector<float> cta_predict(ModelWeights<float>& w, LabelHead& head, const ProcessedTable& table, int column,
                               const TaskContext& ctx, const FinetuneConfig& config) {
  const auto in = label_input(table, ctx, config, {column});
  if (!in.usable) throw EmptyColumn("column " + std::to_string(column) + " of " + table.table_id);
  LabelInstance inst;
  inst.column = column;
  Graph<float> g(false);
  return label_probabilities(g, label_logits(g, in, inst, false, head, w, config.use_visibility));
}

std::vector<double> finetune_re(ModelWeights<float>& w, LabelHead& head, const LabelDataset& data,
                                const TaskContext& ctx, const FinetuneConfig& config) {
  return finetune_labels(w, head, data, ctx, config, true);
}

EvalReport evaluate_re(ModelWeights<float>& w, LabelHead& head, const LabelDataset& data, const TaskContext& ctx,
                       const FinetuneConfig& config) {
  return evaluate_labels(w, head, data, ctx, config, true);
}

std::vector<float> re_predict(ModelWeights<float>& w, LabelHead& head, const ProcessedTable& table,
                              int subject_column, int object_column, const TaskContext& ctx,
                              const FinetuneConfig& config) {
  const auto in = label_input(table, ctx, config, {subject_column, object_column});
  if (!in.usable) throw EmptyColumn("column pair of " + table.table_id + " has no entity cells");
  LabelInstance inst;
  inst.column = subject_column;
  inst.object_column = object_column;
  Graph<float> g(false);
  return label_probabilities(g, label_logits(g, in, inst, true, head, w, config.use_visibility));
}

EvalReport evaluate_re_vote(const LabelDataset& data, const TaskContext& ctx, const baselines::RelationMap& relations,
                            const std::vector<double>& thresholds) {
  EvalReport r;
  r.task = "re";
  r.n_instances = data.instances.size();
  for (double th : thresholds) {
    std::vector<metrics::LabelSets> sets;
    for (const auto& inst : data.instances) {
      const auto& table = table_of(ctx, inst.table);
      std::vector<std::pair<std::string, std::string>> pairs;
      for (int row = 0; row < table.row_count; ++row) {
        const auto* a = table.cell_at(row, inst.column);
        const auto* b = table.cell_at(row, inst.object_column);
        if (a && b) pairs.emplace_back(a->entity_id, b->entity_id);
      }
      metrics::LabelSets s;
      s.gold = inst.labels;
      if (auto rels = baselines::el_vote_relations(pairs, relations, th))
        for (const auto& rel : *rels)
          if (auto id = data.labels.find(rel)) s.predicted.insert(*id);
      sets.push_back(std::move(s));
    }
    const auto prf = metrics::micro_prf(sets);
    r.metrics[key_at("precision", th)] = prf.precision;
    r.metrics[key_at("recall", th)] = prf.recall;
    r.metrics[key_at("f1", th)] = prf.f1;
  }
  return r;
}

// ---------------------------------------------------------------- RP

namespace {

/// Candidate ids known to the entity vocabulary, paired with their vocabulary index.
std::vector<std::pair<std::string, int>> vocab_candidates(const std::vector<std::string>& ids, const Vocabulary& v) {
  std::vector<std::pair<std::string, int>> out;
  for (const auto& id : ids)
    if (auto k = v.find(id); k && *k >= v.num_reserved()) out.emplace_back(id, *k);
  return out;
}

Var rp_logits(Graph<float>& g, const LinearizedSequence& seq, const std::vector<int>& cand_ids, ModelWeights<float>& w,
              RpHead& head, bool use_visibility) {
  const Var h = encode_input(g, seq, w, use_visibility);
  const int mask = static_cast<int>(seq.size()) - 1;
  auto proj = g.affine(g.gather_rows(h, {mask}), g.parameter(head.w), g.parameter(head.b));
  return g.matmul_transposed(proj, g.embedding(w.entity, cand_ids));
}

template <typename Key, typename Id>
void sort_ranked(std::vector<std::pair<Key, float>>& scored, const std::vector<Id>& tie_ids) {
  std::vector<std::size_t> order(scored.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scored[a].second != scored[b].second) return scored[a].second > scored[b].second;
    return tie_ids[a] < tie_ids[b];
  });
  std::vector<std::pair<Key, float>> out;
  for (auto i : order) out.push_back(scored[i]);
  scored = std::move(out);
}

}  // namespace

std::vector<double> finetune_rp(ModelWeights<float>& w, RpHead& head, const std::vector<RpInstance>& data,
                                const TaskContext& ctx, const FinetuneConfig& config) {
  auto fn = [&](Graph<float>& g, std::size_t i) -> Var {
    const auto& inst = data[i];
    const auto cands = vocab_candidates(inst.candidates, ctx.vocab->entities);
    if (cands.empty()) return {};
    std::vector<int> ids;
    Matrix<float> target(1, cands.size());
    for (std::size_t k = 0; k < cands.size(); ++k) {
      ids.push_back(cands[k].second);
      if (inst.golds.count(cands[k].first)) target(0, k) = 1.0f;
    }
    const auto seq = rp_sequence(table_of(ctx, inst.table), inst.seeds, *ctx.vocab, config.max_len);
    return g.bce_with_logits(rp_logits(g, seq, ids, w, head, config.use_visibility), std::move(target));
  };
  return finetune_loop(joint(w, head.parameters()), data.size(), fn, config);
}

std::vector<std::pair<std::string, float>> rp_rank(ModelWeights<float>& w, RpHead& head, const RpInstance& instance,
                                                   const TaskContext& ctx, const FinetuneConfig& config) {
  const auto cands = vocab_candidates(instance.candidates, ctx.vocab->entities);
  if (cands.empty()) throw EmptyCandidateSet("row population instance has no known candidates");
  std::vector<int> ids;
  for (const auto& c : cands) ids.push_back(c.second);
  const auto seq = rp_sequence(table_of(ctx, instance.table), instance.seeds, *ctx.vocab, config.max_len);
  Graph<float> g(false);
  const auto& z = g.value(rp_logits(g, seq, ids, w, head, config.use_visibility));
  std::vector<std::pair<std::string, float>> scored;
  for (std::size_t k = 0; k < cands.size(); ++k)
    scored.emplace_back(cands[k].first, numeric::kernels::sigmoid(z(0, k)));
  sort_ranked(scored, ids);
  return scored;
}

EvalReport evaluate_rp(ModelWeights<float>& w, RpHead& head, const std::vector<RpInstance>& data,
                       const TaskContext& ctx, const FinetuneConfig& config) {
  Interner intern;
  std::vector<metrics::RankedPrediction> preds;
  for (std::size_t i = 0; i < data.size(); ++i) {
    metrics::RankedPrediction p;
    p.instance_id = static_cast<std::int64_t>(i);
    for (const auto& gold : data[i].golds) p.gold.insert(intern(gold));
    try {
      for (const auto& [id, s] : rp_rank(w, head, data[i], ctx, config)) p.ranked.push_back(intern(id));
    } catch (const EmptyCandidateSet&) {
      p.no_prediction = true;
    }
    preds.push_back(std::move(p));
  }
  EvalReport r;
  r.task = "rp";
  r.n_instances = preds.size();
  r.metrics["map"] = metrics::mean_average_precision(preds);
  r.metrics["random_map"] = metrics::random_ranking_map(preds, 200, config.seed);
  r.metrics["candidate_recall"] = metrics::candidate_recall(preds);
  return r;
}

// ---------------------------------------------------------------- CF

std::vector<std::vector<std::pair<std::string, float>>> cf_rank(ModelWeights<float>& w, const CfInstance& instance,
                                                                const TaskContext& ctx, const FinetuneConfig& config) {
  const auto seq = cf_sequence(table_of(ctx, instance.table), instance, *ctx.vocab, config.max_len);
  std::map<int, int> mask_pos;  // row -> element index
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const auto& e = seq.elements[i];
    if (e.kind == ElementKind::cell_entity && e.column == instance.object_column)
      mask_pos[e.row] = static_cast<int>(i);
  }
  std::vector<std::vector<std::pair<std::string, float>>> out(instance.rows.size());
  Graph<float> g(false);
  std::optional<Var> h;
  for (std::size_t r = 0; r < instance.rows.size(); ++r) {
    const auto& row = instance.rows[r];
    const auto p = mask_pos.find(row.row);
    if (p == mask_pos.end()) continue;
    std::vector<std::string> names;
    for (const auto& c : row.candidates) names.push_back(c.entity);
    const auto cands = vocab_candidates(names, ctx.vocab->entities);
    if (cands.empty()) continue;
    std::vector<int> ids;
    for (const auto& c : cands) ids.push_back(c.second);
    if (!h) h = encode_input(g, seq, w, config.use_visibility);
    const auto& z = g.value(pretrain::mer_logits(g, *h, {p->second}, ids, w));
    std::vector<std::pair<std::string, float>> scored;
    for (std::size_t k = 0; k < cands.size(); ++k) scored.emplace_back(cands[k].first, z(0, k));
    sort_ranked(scored, ids);
    out[r] = std::move(scored);
  }
  return out;
}

namespace {

EvalReport cf_report(const std::vector<metrics::RankedPrediction>& all) {
  const auto covered = metrics::restrict_to_covered(all);
  EvalReport r;
  r.task = "cf";
  r.n_instances = covered.size();
  for (std::size_t k : {1, 3, 5, 10}) r.metrics["p@" + std::to_string(k)] = metrics::precision_at_k(covered, k);
  double chance = 0.0;
  for (const auto& p : covered) chance += 1.0 / static_cast<double>(p.ranked.size());
  r.metrics["random_p@1"] = covered.empty() ? 0.0 : chance / static_cast<double>(covered.size());
  r.metrics["coverage"] = all.empty() ? 0.0 : static_cast<double>(covered.size()) / static_cast<double>(all.size());
  return r;
}

}  // namespace

EvalReport evaluate_cf(ModelWeights<float>& w, const std::vector<CfInstance>& data, const TaskContext& ctx,
                       const FinetuneConfig& config) {
  Interner intern;
  std::vector<metrics::RankedPrediction> all;
  for (const auto& inst : data) {
    const auto ranked = cf_rank(w, inst, ctx, config);
    for (std::size_t r = 0; r < inst.rows.size(); ++r) {
      metrics::RankedPrediction p;
      p.gold = {intern(inst.rows[r].gold)};
      for (const auto& [id, s] : ranked[r]) p.ranked.push_back(intern(id));
      all.push_back(std::move(p));
    }
  }
  return cf_report(all);
}

EvalReport evaluate_cf_baseline(const std::vector<CfInstance>& data, const baselines::HeaderStats& stats,
                                baselines::FillMode mode) {
  Interner intern;
  std::vector<metrics::RankedPrediction> all;
  for (const auto& inst : data)
    for (const auto& row : inst.rows) {
      metrics::RankedPrediction p;
      p.gold = {intern(row.gold)};
      for (const auto& [id, s] : baselines::cell_fill_rank(row.candidates, inst.header, mode, stats))
        p.ranked.push_back(intern(id));
      all.push_back(std::move(p));
    }
  return cf_report(all);
}

// ---------------------------------------------------------------- SA

namespace {

Var sa_logits(Graph<float>& g, const LinearizedSequence& seq, ModelWeights<float>& w, LabelHead& head,
              bool use_visibility) {
  const Var h = encode_input(g, seq, w, use_visibility);
  const int mask = static_cast<int>(seq.size()) - 1;
  return g.affine(g.gather_rows(h, {mask}), g.parameter(head.w), g.parameter(head.b));
}

void require_tokenizer(const TaskContext& ctx) {
  if (!ctx.tokenizer) throw MissingSideData("schema augmentation needs a tokenizer");
}

}  // namespace

std::vector<double> finetune_sa(ModelWeights<float>& w, LabelHead& head, const std::vector<SaInstance>& data,
                                const Vocabulary& header_vocab, const TaskContext& ctx,
                                const FinetuneConfig& config) {
  require_tokenizer(ctx);
  auto fn = [&](Graph<float>& g, std::size_t i) -> Var {
    const auto& inst = data[i];
    const auto seq =
        sa_sequence(table_of(ctx, inst.table), inst.seeds, header_vocab, *ctx.vocab, *ctx.tokenizer, config.max_len);
    Matrix<float> target(1, header_vocab.size());
    for (int gold : inst.golds) target(0, static_cast<std::size_t>(gold)) = 1.0f;
    return g.bce_with_logits(sa_logits(g, seq, w, head, config.use_visibility), std::move(target));
  };
  return finetune_loop(joint(w, head.parameters()), data.size(), fn, config);
}

std::vector<std::pair<int, float>> sa_rank(ModelWeights<float>& w, LabelHead& head, const SaInstance& instance,
                                           const Vocabulary& header_vocab, const TaskContext& ctx,
                                           const FinetuneConfig& config) {
  require_tokenizer(ctx);
  const auto seq = sa_sequence(table_of(ctx, instance.table), instance.seeds, header_vocab, *ctx.vocab,
                               *ctx.tokenizer, config.max_len);
  Graph<float> g(false);
  const auto& z = g.value(sa_logits(g, seq, w, head, config.use_visibility));
  const std::set<int> seeds(instance.seeds.begin(), instance.seeds.end());
  std::vector<std::pair<int, float>> scored;
  std::vector<int> ids;
  for (std::size_t k = 0; k < z.cols; ++k) {
    if (seeds.count(static_cast<int>(k))) continue;
    scored.emplace_back(static_cast<int>(k), numeric::kernels::sigmoid(z(0, k)));
    ids.push_back(static_cast<int>(k));
  }
  sort_ranked(scored, ids);
  return scored;
}

EvalReport evaluate_sa(ModelWeights<float>& w, LabelHead& head, const std::vector<SaInstance>& data,
                       const Vocabulary& header_vocab, const TaskContext& ctx, const FinetuneConfig& config) {
  std::vector<metrics::RankedPrediction> preds;
  for (std::size_t i = 0; i < data.size(); ++i) {
    metrics::RankedPrediction p;
    p.instance_id = static_cast<std::int64_t>(i);
    p.gold.insert(data[i].golds.begin(), data[i].golds.end());
    for (const auto& [id, s] : sa_rank(w, head, data[i], header_vocab, ctx, config)) p.ranked.push_back(id);
    preds.push_back(std::move(p));
  }
  EvalReport r;
  r.task = "sa";
  r.n_instances = preds.size();
  r.metrics["map"] = metrics::mean_average_precision(preds);
  r.metrics["random_map"] = metrics::random_ranking_map(preds, 200, config.seed);
  return r;
}

EvalReport evaluate_sa_knn(const std::vector<SaInstance>& data, const Vocabulary& header_vocab,
                           const TaskContext& ctx, const baselines::BaselineIndex& index) {
  std::vector<metrics::RankedPrediction> preds;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& table = table_of(ctx, data[i].table);
    std::vector<std::string> seeds;
    for (int s : data[i].seeds) seeds.push_back(header_vocab.entry(s));
    metrics::RankedPrediction p;
    p.instance_id = static_cast<std::int64_t>(i);
    p.gold.insert(data[i].golds.begin(), data[i].golds.end());
    for (const auto& [h, s] : baselines::knn_schema_augment(table.caption_tokens, seeds, index.caption_tfidf,
                                                            index.docs, 10, index.find(table.table_id)))
      if (auto id = header_vocab.find(h)) p.ranked.push_back(*id);
    preds.push_back(std::move(p));
  }
  EvalReport r;
  r.task = "sa";
  r.n_instances = preds.size();
  r.metrics["map"] = metrics::mean_average_precision(preds);
  return r;
}

}  // namespace turl::tasks
