// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "turl/baselines.hpp"
#include "turl/encoder.hpp"
#include "turl/encoding.hpp"
#include "turl/errors.hpp"
#include "turl/metrics.hpp"
#include "turl/numeric.hpp"
#include "turl/pretrain.hpp"
#include "turl/rng.hpp"
#include "turl/store.hpp"
#include "turl/synth.hpp"
#include "turl/tasks.hpp"

namespace fs = std::filesystem;
using namespace turl;
using encoder::ModelWeights;
using numeric::Graph;
using numeric::Matrix;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

char buf[512];
template <typename... Args>
std::string fmt(const char* f, Args... args) {
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Small vocabularies for hand-made sequences.
corpus::Vocabularies tiny_vocab(int words, int entities) {
  corpus::Vocabularies v;
  for (int i = 0; i < words; ++i) v.tokens.add("w" + std::to_string(i), 1);
  for (int i = 0; i < entities; ++i) v.entities.add("e" + std::to_string(i), 2);
  return v;
}

/// Random processed table with at most 4 rows and 4 columns.
corpus::ProcessedTable random_table(Rng& rng, int words, int entities, int id) {
  corpus::ProcessedTable t;
  t.table_id = "r" + std::to_string(id);
  const int cols = static_cast<int>(rng.range(1, 5)), rows = static_cast<int>(rng.range(1, 5));
  const auto word = [&] { return "w" + std::to_string(rng.below(static_cast<std::uint64_t>(words))); };
  const auto ent = [&] { return "e" + std::to_string(rng.below(static_cast<std::uint64_t>(entities))); };
  for (int i = rng.range(1, 4); i > 0; --i) t.caption_tokens.push_back(word());
  for (int c = 0; c < cols; ++c) {
    std::vector<std::string> h;
    for (int i = rng.range(0, 3); i > 0; --i) h.push_back(word());
    t.headers.push_back(h);
    t.header_texts.push_back(h.empty() ? "" : h.front());
    t.entity_columns.push_back(c);
  }
  t.subject_column = 0;
  if (rng.uniform() < 0.5) t.topic_entity = corpus::EntityCell{ent(), {word()}, -1, -1, corpus::EntityKind::topic};
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      if (rng.uniform() < 0.3) continue;
      std::vector<std::string> mention;
      for (int i = rng.range(0, 3); i > 0; --i) mention.push_back(word());
      t.cells.push_back({ent(), mention, r, c, c == 0 ? corpus::EntityKind::subject : corpus::EntityKind::object});
    }
  t.row_count = rows;
  return t;
}

encoder::EncoderConfig small_config(int blocks, int d, int heads, int inter, int max_len, int words, int entities) {
  encoder::EncoderConfig c;
  c.num_blocks = blocks;
  c.d_model = d;
  c.num_heads = heads;
  c.d_intermediate = inter;
  c.max_len = max_len;
  c.token_vocab = words;
  c.entity_vocab = entities;
  return c;
}

// ---------------------------------------------------------------- 1

Verdict gradient_integrity() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto vocab = tiny_vocab(8, 6);
  const auto cfg = small_config(2, 8, 2, 16, 8, static_cast<int>(vocab.tokens.size()), static_cast<int>(vocab.entities.size()));
  // 2 caption tokens, 2 header tokens, 2x2 cells: 8 elements.
  const auto table = fixture::table("g", {"w0", "w1"}, {"w2", "w3"}, {{"e0", "e1"}, {"e2", "e3"}});
  auto seq = encoding::linearize(table, vocab.tokens, vocab.entities, 8);
  if (seq.size() > 8) return {false, "fixture longer than 8"};
  // Cell mentions point at word rows so their gradients are checked too.
  for (auto& e : seq.elements)
    if (e.is_entity()) e.mention = {vocab.tokens.lookup("w4"), vocab.tokens.lookup("w5")};
  const auto vis = encoding::build_visibility(seq);
  const int tok_pos = 1, ent_pos = 5;
  const int tok_gold = seq.elements[tok_pos].id, ent_gold = seq.elements[ent_pos].id;
  seq.elements[tok_pos].id = corpus::Vocabulary::kMask;
  pretrain::mask_entity_both(seq.elements[ent_pos]);
  pretrain::CandidateSet cands;
  for (int i = 3; i < cfg.entity_vocab; ++i) {
    cands.ids.push_back(i);
    cands.is_gold.push_back(i == ent_gold);
  }

  Rng rng(11);
  auto w = ModelWeights<double>::init(cfg, rng);
  // perturb so biases and LayerNorm params are not at their symmetric init
  for (auto* p : w.parameters())
    for (auto& x : p->value.data) x += 0.05 * rng.normal();
  const auto build = [&](Graph<double>& g) {
    auto h = encoder::encode(g, seq, &vis, w);
    auto mlm = pretrain::mlm_loss(g, h, {tok_pos}, {tok_gold}, w);
    auto mer = pretrain::mer_loss(g, h, {ent_pos}, {ent_gold}, cands, w);
    return g.add(mlm.loss, mer.loss);
  };
  const auto f = [&] {
    Graph<double> g(false);
    return g.scalar(build(g));
  };
  const auto analytic = [&] {
    Graph<double> g;
    g.backward(build(g));
  };
  const auto r = oracle::finite_difference(f, analytic, w.parameters(), 1e-6, 1e-3);
  const double secs = seconds_since(t0);
  return {r.max_rel < 1e-5 && secs < 30.0,
          fmt("max relative error %.3g over %zu coordinates, %.1f s", r.max_rel, r.coords, secs)};
}

// ---------------------------------------------------------------- 2

Verdict visibility_oracle() {
  const int words = 12, entities = 10;
  const auto vocab = tiny_vocab(words, entities);
  const auto cfg = small_config(1, 8, 2, 16, 64, static_cast<int>(vocab.tokens.size()), static_cast<int>(vocab.entities.size()));
  Rng rng(2024);
  auto w = ModelWeights<float>::init(cfg, rng);
  int mismatched = 0, leaks = 0, checked = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto table = random_table(rng, words, entities, t);
    const auto seq = encoding::linearize(table, vocab.tokens, vocab.entities, 64);
    const auto m = encoding::build_visibility(seq);
    const auto o = oracle::visibility(seq);
    for (std::size_t i = 0; i < seq.size(); ++i)
      for (std::size_t j = 0; j < seq.size(); ++j)
        if (m(i, j) != o[i][j]) ++mismatched;
    Graph<float> g(false);
    std::vector<std::vector<Matrix<float>>> attn;
    encoder::encode(g, seq, &m, w, &attn);
    for (const auto& layer : attn)
      for (const auto& head : layer)
        for (std::size_t i = 0; i < seq.size(); ++i)
          for (std::size_t j = 0; j < seq.size(); ++j)
            if (!o[i][j]) {
              ++checked;
              if (head(i, j) != 0.0f) ++leaks;
            }
  }
  return {mismatched == 0 && leaks == 0 && checked > 0,
          fmt("1000 tables, %d mismatched entries, %d/%d invisible weights non-zero", mismatched, leaks, checked)};
}

// ---------------------------------------------------------------- 3

Verdict full_visibility() {
  const int words = 12, entities = 10;
  const auto vocab = tiny_vocab(words, entities);
  const auto cfg = small_config(2, 16, 4, 32, 64, static_cast<int>(vocab.tokens.size()), static_cast<int>(vocab.entities.size()));
  Rng rng(3);
  int equal = 0;
  for (int t = 0; t < 100; ++t) {
    auto w = ModelWeights<float>::init(cfg, rng);
    for (auto* p : w.parameters())
      for (auto& x : p->value.data) x += static_cast<float>(0.02 * rng.normal());
    const auto seq = encoding::linearize(random_table(rng, words, entities, t), vocab.tokens, vocab.entities, 64);
    const auto ones = encoding::VisibilityMatrix::all_visible(seq.size());
    const auto got = encoder::forward(seq, &ones, w);
    const auto ref = oracle::encode(seq, w);
    if (got == ref) ++equal;
  }
  return {equal == 100, fmt("%d/100 inputs bitwise equal to the reference encoder", equal)};
}

// ---------------------------------------------------------------- 4

Verdict masking_statistics() {
  const std::size_t n = 100000;
  Rng rng(4);
  const auto mlm = pretrain::sample_mlm_mask(n, rng);
  const auto mer = pretrain::sample_mer_mask(n, rng);
  double sel = 0, msk = 0, rnd = 0, kep = 0;
  for (auto a : mlm) {
    if (a == pretrain::TokenAction::untouched) continue;
    ++sel;
    msk += a == pretrain::TokenAction::mask;
    rnd += a == pretrain::TokenAction::random;
    kep += a == pretrain::TokenAction::keep;
  }
  double esel = 0, both = 0, keep = 0, eonly = 0, erand = 0;
  for (auto a : mer) {
    if (a == pretrain::EntityAction::untouched) continue;
    ++esel;
    keep += a == pretrain::EntityAction::keep_both;
    both += a == pretrain::EntityAction::mask_both;
    eonly += a == pretrain::EntityAction::mask_e_only;
    erand += a == pretrain::EntityAction::mask_e_random;
  }
  const double N = static_cast<double>(n);
  const std::vector<std::pair<double, double>> checks = {
      {sel / N, 0.20},         {msk / sel, 0.80},        {rnd / sel, 0.10},          {kep / sel, 0.10},
      {esel / N, 0.60},        {keep / esel, 0.10},      {both / esel, 0.63},        {(eonly + erand) / esel, 0.27},
      {erand / (eonly + erand), 0.10}};
  bool ok = true;
  for (const auto& [got, want] : checks) ok = ok && std::abs(got - want) <= 0.01;
  return {ok, fmt("MLM %.4f/%.4f/%.4f/%.4f, MER %.4f/%.4f/%.4f/%.4f, random sub-branch %.4f", sel / N, msk / sel,
                  rnd / sel, kep / sel, esel / N, keep / esel, both / esel, (eonly + erand) / esel,
                  erand / (eonly + erand))};
}

// ---------------------------------------------------------------- 5 (its model feeds 10)

struct Memorized {
  fixture::Toy toy;
  std::unique_ptr<ModelWeights<float>> w;
  double oep = 0;
  int epochs = 0;
  double seconds = 0;
};

pretrain::PretrainConfig toy_pretrain(std::uint64_t seed, bool visibility, double mer_select) {
  pretrain::PretrainConfig pc;
  pc.lr = 1e-3;
  pc.seed = seed;
  pc.use_visibility = visibility;
  pc.ratios.mer_select = mer_select;
  return pc;
}

Memorized memorize() {
  Memorized m;
  m.toy = fixture::toy_corpus(1, 50);
  m.w = std::make_unique<ModelWeights<float>>(fixture::toy_model(m.toy, 1));
  const auto examples = pretrain::make_examples(m.toy.tables, m.toy.vocab, 128);
  const auto sizes = pretrain::vocab_sizes(m.toy.vocab);
  auto pc = toy_pretrain(1, true, 0.6);
  pc.epochs = 200;
  pretrain::Pretrainer trainer(*m.w, examples, sizes, pc);
  const auto t0 = std::chrono::steady_clock::now();
  while (trainer.epoch() < 200) {
    trainer.run_epoch();
    if (trainer.epoch() % 10 != 0) continue;
    m.oep = pretrain::validate_object_entity_prediction(examples, *m.w, trainer.cooccurrence(), sizes, {}).accuracy;
    if (m.oep >= 0.95) break;
  }
  m.epochs = trainer.epoch();
  m.seconds = seconds_since(t0);
  return m;
}

Verdict memorization(const Memorized& m) {
  return {m.oep >= 0.95 && m.seconds < 300.0,
          fmt("%zu tables, MER top-1 recovery %.3f after %d epochs, %.1f s", m.toy.tables.size(), m.oep, m.epochs,
              m.seconds)};
}

// ---------------------------------------------------------------- 6

Verdict ablation_direction() {
  const int epochs = 40;
  int vis_ok = 0, ratio_ok = 0;
  std::string detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    // Held-out validation: the last 10 tables share the KB facts but are never trained on.
    auto toy = fixture::toy_corpus(seed, 60);
    std::vector<corpus::ProcessedTable> train(toy.tables.begin(), toy.tables.end() - 10);
    std::vector<corpus::ProcessedTable> valid(toy.tables.end() - 10, toy.tables.end());
    const auto vocab = corpus::build_vocabularies(train);
    const auto tr = pretrain::make_examples(train, vocab, 128);
    const auto va = pretrain::make_examples(valid, vocab, 128);
    const auto sizes = pretrain::vocab_sizes(vocab);
    const auto run = [&](bool visibility, double ratio) {
      Rng rng(seed);
      auto w = ModelWeights<float>::init(fixture::toy_config(vocab), rng, pretrain::entity_name_ids(train, vocab));
      auto pc = toy_pretrain(seed, visibility, ratio);
      pc.epochs = epochs;
      pretrain::Pretrainer trainer(w, tr, sizes, pc);
      for (int e = 0; e < epochs; ++e) trainer.run_epoch();
      pretrain::OepOptions oo;
      oo.use_visibility = visibility;
      oo.seed = seed;
      return pretrain::validate_object_entity_prediction(va, w, trainer.cooccurrence(), sizes, oo).accuracy;
    };
    const double on = run(true, 0.6), off = run(false, 0.6), r2 = run(true, 0.2), r8 = run(true, 0.8);
    vis_ok += on >= off;
    ratio_ok += on >= r2 && on >= r8;
    detail += fmt(" seed %d: on %.3f off %.3f r0.2 %.3f r0.8 %.3f;", static_cast<int>(seed), on, off, r2, r8);
  }
  return {vis_ok >= 2 && ratio_ok >= 2, fmt("visibility %d/3, ratio %d/3 (%d epochs)", vis_ok, ratio_ok, epochs) + detail};
}

// ---------------------------------------------------------------- 7

std::vector<corpus::ProcessedTable> random_corpus(Rng& rng, int n) {
  const std::vector<std::string> heads = {"name", "team", "city", "coach", "country"};
  const std::vector<std::string> words = {"list", "of", "teams", "cities", "football", "clubs", "season", "coaches"};
  std::vector<corpus::ProcessedTable> out;
  for (int t = 0; t < n; ++t) {
    std::vector<std::string> caption, hdr = {"name"};
    for (int i = rng.range(1, 5); i > 0; --i) caption.push_back(words[rng.below(words.size())]);
    for (int c = rng.range(1, 3); c > 0; --c) hdr.push_back(heads[rng.below(heads.size())]);
    std::vector<std::vector<std::string>> rows;
    for (int r = rng.range(1, 5); r > 0; --r) {
      std::vector<std::string> row = {"s" + std::to_string(rng.below(4))};
      for (std::size_t c = 1; c < hdr.size(); ++c) row.push_back(rng.uniform() < 0.2 ? "" : "o" + std::to_string(rng.below(4)));
      rows.push_back(row);
    }
    out.push_back(fixture::table("t" + std::to_string(t), caption, hdr, rows));
  }
  return out;
}

Verdict baseline_oracles() {
  Rng rng(7);
  int bm25_bad = 0, ph_bad = 0, knn_bad = 0, vote_bad = 0, mono_bad = 0, corpora = 0;
  for (int trial = 0; trial < 50; ++trial, ++corpora) {
    const auto tables = random_corpus(rng, static_cast<int>(rng.range(2, 11)));
    std::vector<std::vector<std::string>> captions, schemas;
    for (const auto& t : tables) {
      captions.push_back(t.caption_tokens);
      schemas.push_back(baselines::make_doc(t).headers);
    }
    // BM25 over every document for a random query.
    const baselines::Bm25Index bm25(captions);
    std::vector<std::string> query = captions[rng.below(captions.size())];
    query.push_back("absent");
    std::vector<double> got(tables.size(), 0.0);
    for (const auto& [d, s] : bm25.score_all(query)) got[d] = s;
    for (std::size_t d = 0; d < tables.size(); ++d) bm25_bad += got[d] != oracle::bm25(captions, query, d);
    // P(h'|h) for every header pair.
    const auto stats = baselines::HeaderStats::build(tables);
    std::set<std::string> hs;
    for (const auto& s : schemas) hs.insert(s.begin(), s.end());
    for (const auto& hp : hs)
      for (const auto& h : hs) ph_bad += stats.relatedness(hp, h) != oracle::relatedness(tables, hp, h);
    // kNN schema scores without and with seeds.
    const baselines::TfIdfIndex tfidf(captions);
    std::vector<baselines::TableDoc> docs;
    for (const auto& t : tables) docs.push_back(baselines::make_doc(t));
    for (const std::vector<std::string>& seeds : {std::vector<std::string>{}, std::vector<std::string>{"name"},
                                                  std::vector<std::string>{"team", "city"}}) {
      const auto ranked = baselines::knn_schema_augment(query, seeds, tfidf, docs, 10);
      const auto want = oracle::knn_scores(captions, schemas, query, seeds, 10);
      std::map<std::string, double> have(ranked.begin(), ranked.end());
      knn_bad += have != want;
    }
    // Vote over random linked pairs.
    baselines::RelationMap rel;
    std::vector<std::pair<std::string, std::string>> pairs;
    const std::vector<std::string> names = {"r0", "r1", "r2"};
    for (int i = 0; i < 6; ++i) {
      const std::pair<std::string, std::string> p{"s" + std::to_string(i), "o" + std::to_string(rng.below(3))};
      pairs.push_back(p);
      for (const auto& r : names)
        if (rng.uniform() < 0.5) rel[p].insert(r);
    }
    std::set<std::string> prev;
    bool first = true;
    for (double th : {0.0, 0.2, 0.4, 0.5, 0.7, 1.0}) {
      const auto v = baselines::el_vote_relations(pairs, rel, th);
      vote_bad += !v || *v != oracle::vote(pairs, rel, th);
      if (v && !first) mono_bad += !std::includes(prev.begin(), prev.end(), v->begin(), v->end());
      if (v) prev = *v;
      first = false;
    }
  }
  // Table 9 shape on the synthetic relation-extraction columns.
  const auto toy = fixture::toy_corpus(1, 50);
  baselines::RelationMap rel;
  for (std::size_t d = 0; d < toy.kb.domains.size(); ++d)
    for (const auto& [key, value] : toy.kb.facts[d])
      rel[{key.first, value}].insert(toy.kb.domains[d].noun + "." + toy.kb.domains[d].attributes[static_cast<std::size_t>(key.second)]);
  tasks::TaskThresholds th;
  th.min_label_instances = 1;
  const auto re = tasks::derive_re(toy.tables, rel, th);
  BasicTokenizer tok;
  tasks::TaskContext ctx{&toy.tables, &toy.vocab, &tok, nullptr};
  const std::vector<double> ths = {0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0};
  const auto rep = tasks::evaluate_re_vote(re, ctx, rel, ths);
  double last_p = -1, last_r = 2;
  int shape_bad = 0;
  std::string curve;
  for (double t : ths) {
    const std::string k = fmt("%.2f", t);
    const double p = rep.metrics.at("precision@" + k), r = rep.metrics.at("recall@" + k);
    shape_bad += p < last_p || r > last_r;
    last_p = p;
    last_r = r;
    curve += fmt(" %.1f:%.3f/%.3f", t, p, r);
  }
  const bool ok = !bm25_bad && !ph_bad && !knn_bad && !vote_bad && !mono_bad && !shape_bad;
  return {ok, fmt("%d corpora; mismatches bm25 %d, P(h'|h) %d, knn %d, vote %d; nesting violations %d; "
                  "P/R shape violations %d;",
                  corpora, bm25_bad, ph_bad, knn_bad, vote_bad, mono_bad, shape_bad) +
                  curve};
}

// ---------------------------------------------------------------- 8

Verdict metric_fixtures() {
  using metrics::LabelSets;
  using metrics::LinkPrediction;
  using metrics::RankedPrediction;
  std::vector<double> err;
  // multi-label: tp 4, fp 3, fn 4
  const std::vector<LabelSets> ml = {{{1, 2}, {1}}, {{3}, {3, 4}}, {{}, {5}}, {{6, 7, 8}, {6, 7, 11}}, {{9}, {10}}};
  const auto a = metrics::micro_prf(ml);
  err.push_back(std::abs(a.precision - 4.0 / 7.0));
  err.push_back(std::abs(a.recall - 0.5));
  err.push_back(std::abs(a.f1 - 8.0 / 15.0));
  // linking: 4 predictions, 3 correct, 5 instances
  const std::vector<LinkPrediction> el = {{1, 1}, {2, 3}, {std::nullopt, 4}, {5, 5}, {6, 6}};
  const auto b = metrics::micro_prf_el(el);
  err.push_back(std::abs(b.precision - 0.75));
  err.push_back(std::abs(b.recall - 0.6));
  err.push_back(std::abs(b.f1 - 2.0 / 3.0));
  // ranking: AP 5/6, 1/3, 0, 1/4, 1
  const std::vector<RankedPrediction> rk = {{"a", {1, 2, 3, 4}, {1, 3}},
                                            {"b", {5, 6, 7}, {7}},
                                            {"c", {8, 9}, {10}},
                                            {"d", {11, 12, 13}, {12, 14}},
                                            {"e", {15}, {15}}};
  err.push_back(std::abs(metrics::mean_average_precision(rk) - 29.0 / 60.0));
  err.push_back(std::abs(metrics::precision_at_k(rk, 1) - 0.4));
  err.push_back(std::abs(metrics::precision_at_k(rk, 3) - 1.0 / 3.0));
  const double worst = *std::max_element(err.begin(), err.end());
  return {worst <= 1e-9, fmt("%zu values, max abs error %.3g", err.size(), worst)};
}

// ---------------------------------------------------------------- 9

Verdict determinism() {
  const auto toy = fixture::toy_corpus(1, 20);
  const auto examples = pretrain::make_examples(toy.tables, toy.vocab, 128);
  const auto sizes = pretrain::vocab_sizes(toy.vocab);
  const auto trace = [&](ModelWeights<float>& w) {
    auto pc = toy_pretrain(9, true, 0.6);
    pc.epochs = 1;
    pretrain::Pretrainer trainer(w, examples, sizes, pc);
    std::vector<double> losses;
    for (std::size_t s = 0; s < 10; ++s) losses.push_back(trainer.step({s % examples.size()}).loss);
    return losses;
  };
  auto w1 = fixture::toy_model(toy, 9), w2 = fixture::toy_model(toy, 9);
  const auto l1 = trace(w1), l2 = trace(w2);
  bool weights_equal = true;
  for (std::size_t i = 0; i < w1.parameters().size(); ++i)
    weights_equal = weights_equal && w1.parameters()[i]->value == w2.parameters()[i]->value;

  const fs::path path = fs::temp_directory_path() / "turl_acceptance.ckpt";
  std::vector<const numeric::Tensor<float>*> tensors;
  for (const auto* t : std::as_const(w1).parameters()) tensors.push_back(t);
  store::save_checkpoint(path.string(), "", w1.config, tensors);
  auto back = store::weights_from(store::load_checkpoint(path.string()));
  fs::remove(path);
  int same = 0;
  for (const auto& ex : examples) same += encoder::forward(ex.seq, &ex.visibility, w1) == encoder::forward(ex.seq, &ex.visibility, back);
  const bool ok = l1 == l2 && weights_equal && same == static_cast<int>(examples.size());
  return {ok, fmt("10-step trace %s, weights %s, %d/%zu forward outputs identical after reload",
                  l1 == l2 ? "identical" : "differs", weights_equal ? "identical" : "differ", same, examples.size())};
}

// ---------------------------------------------------------------- 10

Verdict task_heads(const Memorized& m) {
  const fs::path dir = fs::temp_directory_path() / "turl_acceptance_side";
  fs::create_directories(dir);
  synth::write_type_map(m.toy.kb, (dir / "types.jsonl").string());
  synth::write_relation_map(m.toy.kb, (dir / "relations.jsonl").string());
  const auto types = tasks::load_type_map((dir / "types.jsonl").string());
  const auto relations = tasks::load_relation_map((dir / "relations.jsonl").string());
  fs::remove_all(dir);

  const auto& tables = m.toy.tables;
  BasicTokenizer tok;
  tasks::TaskContext ctx{&tables, &m.toy.vocab, &tok, nullptr};
  tasks::TaskThresholds th;
  th.min_label_instances = 1;
  th.sa_min_tables = 2;
  th.cf_filter_candidates = false;
  tasks::FinetuneConfig fc;
  fc.epochs = 10;
  fc.lr = 1e-3;
  fc.max_len = 128;
  const int d = m.w->config.d_model;

  auto w = *m.w;
  const auto cta = tasks::derive_cta(tables, types, th);
  auto cta_head = tasks::LabelHead::init("head.cta", 2 * d, static_cast<int>(cta.labels.size()));
  tasks::finetune_cta(w, cta_head, cta, ctx, fc);
  const double cta_f1 = tasks::evaluate_cta(w, cta_head, cta, ctx, fc).metrics.at("f1");

  w = *m.w;
  const auto re = tasks::derive_re(tables, relations, th);
  auto re_head = tasks::LabelHead::init("head.re", 4 * d, static_cast<int>(re.labels.size()));
  tasks::finetune_re(w, re_head, re, ctx, fc);
  const double re_f1 = tasks::evaluate_re(w, re_head, re, ctx, fc).metrics.at("f1");

  w = *m.w;
  const auto index = baselines::BaselineIndex::build(tables);
  const auto rp_train = tasks::derive_rp(tables, index, 0, tasks::Split::train, th);
  const auto rp_eval = tasks::derive_rp(tables, index, 0, tasks::Split::eval, th);
  auto rp_head = tasks::RpHead::from_mer(w);
  tasks::finetune_rp(w, rp_head, rp_train, ctx, fc);
  const auto rp = tasks::evaluate_rp(w, rp_head, rp_eval, ctx, fc);

  w = *m.w;
  const auto headers = tasks::build_header_vocab(tables, th);
  const auto sa_data = tasks::derive_sa(tables, headers, 1);
  auto sa_head = tasks::LabelHead::init("head.sa", d, static_cast<int>(headers.size()));
  tasks::finetune_sa(w, sa_head, sa_data, headers, ctx, fc);
  const auto sa = tasks::evaluate_sa(w, sa_head, sa_data, headers, ctx, fc);

  w = *m.w;
  const auto cf_data = tasks::derive_cf(tables, index.header_stats, th);
  const auto cf = tasks::evaluate_cf(w, cf_data, ctx, fc);

  const double rp_map = rp.metrics.at("map"), rp_rand = rp.metrics.at("random_map");
  const double sa_map = sa.metrics.at("map"), sa_rand = sa.metrics.at("random_map");
  const double cf_p1 = cf.metrics.at("p@1"), cf_rand = cf.metrics.at("random_p@1");
  const bool ok = cta_f1 == 1.0 && re_f1 == 1.0 && rp_map >= 2 * rp_rand && sa_map >= 2 * sa_rand && cf_p1 > cf_rand &&
                  !rp_eval.empty() && !sa_data.empty() && !cf_data.empty();
  return {ok, fmt("CTA F1 %.3f (%zu cols), RE F1 %.3f (%zu pairs), RP MAP %.3f vs random %.3f (%zu), "
                  "SA MAP %.3f vs random %.3f (%zu), CF P@1 %.3f vs random %.3f (%zu)",
                  cta_f1, cta.instances.size(), re_f1, re.instances.size(), rp_map, rp_rand, rp_eval.size(), sa_map,
                  sa_rand, sa_data.size(), cf_p1, cf_rand, cf_data.size())};
}

}  // namespace

int main() {
  int failed = 0;
  const auto report = [&](int id, const char* name, const std::function<Verdict()>& fn) {
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s criterion %d (%s): %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", id, name, v.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  };
  report(1, "gradient integrity", gradient_integrity);
  report(2, "visibility oracle", visibility_oracle);
  report(3, "full-visibility reduction", full_visibility);
  report(4, "masking statistics", masking_statistics);
  std::unique_ptr<Memorized> mem;
  report(5, "memorization", [&] {
    mem = std::make_unique<Memorized>(memorize());
    return memorization(*mem);
  });
  report(6, "ablation direction", ablation_direction);
  report(7, "baseline oracles", baseline_oracles);
  report(8, "metric fixtures", metric_fixtures);
  report(9, "determinism and persistence", determinism);
  report(10, "task-head smoke", [&] { return mem ? task_heads(*mem) : Verdict{false, "no memorized model"}; });
  std::printf("%d/10 criteria passed\n", 10 - failed);
  return failed == 0 ? 0 : 1;
}
