#include "turl/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <tuple>

#include "turl/binio.hpp"
#include "turl/errors.hpp"

namespace turl::baselines {

namespace {

template <typename Index>
void sort_by_score(std::vector<std::pair<Index, double>>& v) {
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
}

}  // namespace

// ---------------------------------------------------------------- BM25

Bm25Index::Bm25Index(const std::vector<std::vector<std::string>>& docs) : Bm25Index(docs, Params{}) {}

Bm25Index::Bm25Index(const std::vector<std::vector<std::string>>& docs, Params params) : params_(params) {
  double total = 0;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    lengths_.push_back(static_cast<double>(docs[d].size()));
    total += static_cast<double>(docs[d].size());
    std::map<std::string, int> tf;
    for (const auto& t : docs[d]) ++tf[t];
    for (const auto& [t, n] : tf) postings_[t].emplace_back(d, n);
  }
  avg_length_ = docs.empty() ? 0.0 : total / static_cast<double>(docs.size());
}

double Bm25Index::idf(const std::string& term) const {
  const auto it = postings_.find(term);
  const double df = it == postings_.end() ? 0.0 : static_cast<double>(it->second.size());
  const double n = static_cast<double>(lengths_.size());
  return std::log((n - df + 0.5) / (df + 0.5) + 1.0);
}

std::vector<std::pair<std::size_t, double>> Bm25Index::score_all(const std::vector<std::string>& query) const {
  const std::set<std::string> terms(query.begin(), query.end());
  std::vector<double> score(lengths_.size(), 0.0);
  std::vector<std::uint8_t> touched(lengths_.size(), 0);
  for (const auto& t : terms) {
    const auto it = postings_.find(t);
    if (it == postings_.end()) continue;
    const double w = idf(t);
    for (const auto& [d, tf_i] : it->second) {
      const double tf = tf_i;
      const double norm = params_.k1 * (1.0 - params_.b + params_.b * lengths_[d] / avg_length_);
      score[d] += w * (tf * (params_.k1 + 1.0)) / (tf + norm);
      touched[d] = 1;
    }
  }
  std::vector<std::pair<std::size_t, double>> out;
  for (std::size_t d = 0; d < score.size(); ++d)
    if (touched[d] && score[d] > 0) out.emplace_back(d, score[d]);
  sort_by_score(out);
  return out;
}

std::vector<std::size_t> Bm25Index::retrieve(const std::vector<std::string>& query, std::size_t top_k) const {
  std::vector<std::size_t> out;
  for (const auto& [d, s] : score_all(query)) {
    if (out.size() >= top_k) break;
    out.push_back(d);
  }
  return out;
}

// ---------------------------------------------------------------- tf-idf

TfIdfIndex::TfIdfIndex(const std::vector<std::vector<std::string>>& docs) : n_docs_(docs.size()) {
  for (const auto& d : docs) {
    const std::set<std::string> uniq(d.begin(), d.end());
    for (const auto& t : uniq) ++df_[t];
  }
  for (const auto& d : docs) vectors_.push_back(vectorize(d));
}

SparseVector TfIdfIndex::vectorize(const std::vector<std::string>& tokens) const {
  std::map<std::string, int> tf;
  for (const auto& t : tokens) ++tf[t];
  SparseVector v;
  for (const auto& [t, n] : tf) {
    const auto it = df_.find(t);
    if (it == df_.end()) continue;
    const double w = static_cast<double>(n) * std::log(static_cast<double>(n_docs_) / static_cast<double>(it->second));
    if (w != 0.0) v[t] = w;
  }
  return v;
}

double TfIdfIndex::cosine(const SparseVector& a, const SparseVector& b) {
  double dot = 0, na = 0, nb = 0;
  for (const auto& [t, w] : a) {
    na += w * w;
    if (const auto it = b.find(t); it != b.end()) dot += w * it->second;
  }
  for (const auto& [t, w] : b) nb += w * w;
  if (na == 0 || nb == 0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<std::pair<std::size_t, double>> TfIdfIndex::nearest(const std::vector<std::string>& tokens, std::size_t k,
                                                                std::optional<std::size_t> exclude) const {
  const SparseVector q = vectorize(tokens);
  std::vector<std::pair<std::size_t, double>> all;
  for (std::size_t d = 0; d < vectors_.size(); ++d) {
    if (exclude && *exclude == d) continue;
    const double c = cosine(q, vectors_[d]);
    if (c > 0) all.emplace_back(d, c);
  }
  sort_by_score(all);
  if (all.size() > k) all.resize(k);
  return all;
}

// ---------------------------------------------------------------- header statistics

TableDoc make_doc(const corpus::ProcessedTable& t) {
  TableDoc d;
  d.table_id = t.table_id;
  d.caption = t.caption_tokens;
  if (t.subject_column) {
    for (const auto* c : t.column_cells(*t.subject_column)) {
      d.subject_entities.push_back(c->entity_id);
      d.subject_names.insert(d.subject_names.end(), c->mention.begin(), c->mention.end());
    }
  }
  for (int c : t.entity_columns) d.headers.push_back(t.header_texts.at(static_cast<std::size_t>(c)));
  return d;
}

HeaderStats HeaderStats::build(const std::vector<corpus::ProcessedTable>& tables) {
  HeaderStats s;
  // (subject, object) -> (table index, header) occurrences
  std::map<std::pair<std::string, std::string>, std::set<std::pair<std::size_t, std::string>>> facts;
  for (std::size_t ti = 0; ti < tables.size(); ++ti) {
    const auto& t = tables[ti];
    std::map<int, std::vector<const corpus::EntityCell*>> rows;
    for (const auto& c : t.cells) rows[c.row].push_back(&c);
    for (const auto& [r, cells] : rows) {
      for (const auto* a : cells)
        for (const auto* b : cells)
          if (a != b) s.mates[a->entity_id].insert({b->entity_id, t.header_texts.at(static_cast<std::size_t>(b->column))});
      if (!t.subject_column) continue;
      const corpus::EntityCell* subj = nullptr;
      for (const auto* c : cells)
        if (c->column == *t.subject_column) subj = c;
      if (!subj) continue;
      for (const auto* c : cells)
        if (c != subj) facts[{subj->entity_id, c->entity_id}].insert({ti, t.header_texts.at(static_cast<std::size_t>(c->column))});
    }
  }
  // Binary evidence per unordered table pair and ordered header pair.
  std::set<std::tuple<std::size_t, std::size_t, std::string, std::string>> evidence;
  for (const auto& [key, occ] : facts) {
    for (const auto& [t1, h1] : occ)
      for (const auto& [t2, h2] : occ) {
        if (t1 == t2) continue;
        // occurrence in t1 under h1 and t2 under h2: n(h1, h2) for pair {t1, t2}
        evidence.insert({std::min(t1, t2), std::max(t1, t2), h1, h2});
      }
  }
  for (const auto& [a, b, hp, h] : evidence) {
    ++s.counts[h][hp];
    ++s.totals[h];
  }
  return s;
}

std::int64_t HeaderStats::count(const std::string& h_prime, const std::string& h) const {
  const auto it = counts.find(h);
  if (it == counts.end()) return 0;
  const auto jt = it->second.find(h_prime);
  return jt == it->second.end() ? 0 : jt->second;
}

double HeaderStats::relatedness(const std::string& h_prime, const std::string& h) const {
  const auto it = totals.find(h);
  if (it == totals.end() || it->second == 0) return 0.0;
  return static_cast<double>(count(h_prime, h)) / static_cast<double>(it->second);
}

const std::map<std::string, std::int64_t>& HeaderStats::counts_given(const std::string& h) const {
  static const std::map<std::string, std::int64_t> kEmpty;
  const auto it = counts.find(h);
  return it == counts.end() ? kEmpty : it->second;
}

const std::set<RowMate>& HeaderStats::row_mates(const std::string& entity) const {
  static const std::set<RowMate> kEmpty;
  const auto it = mates.find(entity);
  return it == mates.end() ? kEmpty : it->second;
}

std::vector<std::string> HeaderStats::headers() const {
  std::set<std::string> all;
  for (const auto& [h, row] : counts) {
    all.insert(h);
    for (const auto& [hp, n] : row) all.insert(hp);
  }
  return {all.begin(), all.end()};
}

std::vector<FillCandidate> cell_filling_candidates(const std::string& entity, const std::string& header,
                                                   const HeaderStats& stats, bool filter) {
  std::map<std::string, std::set<std::string>> by_entity;
  for (const auto& m : stats.row_mates(entity)) {
    if (m.entity == entity) continue;
    if (filter && stats.relatedness(m.header, header) <= 0.0) continue;
    by_entity[m.entity].insert(m.header);
  }
  std::vector<FillCandidate> out;
  for (auto& [e, hs] : by_entity) out.push_back({e, std::move(hs)});
  return out;
}

std::vector<std::pair<std::string, double>> cell_fill_rank(const std::vector<FillCandidate>& candidates,
                                                           const std::string& header, FillMode mode,
                                                           const HeaderStats& stats) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& c : candidates) {
    double best = 0.0;
    for (const auto& hp : c.headers) {
      const double sim = mode == FillMode::exact ? (hp == header ? 1.0 : 0.0) : stats.relatedness(hp, header);
      best = std::max(best, sim);
    }
    out.emplace_back(c.entity, best);
  }
  sort_by_score(out);
  return out;
}

// ---------------------------------------------------------------- schema augmentation

std::vector<std::pair<std::string, double>> knn_schema_augment(const std::vector<std::string>& caption,
                                                               const std::vector<std::string>& seeds,
                                                               const TfIdfIndex& index,
                                                               const std::vector<TableDoc>& docs, std::size_t k,
                                                               std::optional<std::size_t> exclude) {
  const std::set<std::string> seed_set(seeds.begin(), seeds.end());
  std::map<std::string, double> score;
  for (const auto& [d, cos] : index.nearest(caption, k, exclude)) {
    const std::set<std::string> schema(docs.at(d).headers.begin(), docs.at(d).headers.end());
    double weight = cos;
    if (!seed_set.empty()) {
      std::size_t overlap = 0;
      for (const auto& s : seed_set) overlap += schema.count(s);
      weight *= static_cast<double>(overlap) / static_cast<double>(seed_set.size());
    }
    for (const auto& h : schema) score[h] += weight;
  }
  std::vector<std::pair<std::string, double>> out;
  for (const auto& [h, s] : score)
    if (s > 0 && !seed_set.count(h)) out.emplace_back(h, s);
  sort_by_score(out);
  return out;
}

// ---------------------------------------------------------------- relation vote

std::optional<std::set<std::string>> el_vote_relations(const std::vector<std::pair<std::string, std::string>>& pairs,
                                                       const RelationMap& relations, double threshold) {
  if (pairs.empty()) return std::nullopt;
  std::map<std::string, std::size_t> votes;
  for (const auto& p : pairs)
    if (const auto it = relations.find(p); it != relations.end())
      for (const auto& r : it->second) ++votes[r];
  std::set<std::string> out;
  for (const auto& [r, n] : votes)
    if (static_cast<double>(n) / static_cast<double>(pairs.size()) >= threshold) out.insert(r);
  return out;
}

// ---------------------------------------------------------------- persisted index

namespace {

void rebuild_search(BaselineIndex& idx) {
  std::vector<std::vector<std::string>> captions, names;
  for (const auto& d : idx.docs) {
    captions.push_back(d.caption);
    names.push_back(d.subject_names);
  }
  idx.caption_bm25 = Bm25Index(captions);
  idx.entity_bm25 = Bm25Index(names);
  idx.caption_tfidf = TfIdfIndex(captions);
}

constexpr char kIndexMagic[8] = {'T', 'U', 'R', 'L', 'I', 'D', 'X', '1'};

}  // namespace

BaselineIndex BaselineIndex::build(const std::vector<corpus::ProcessedTable>& tables) {
  std::vector<corpus::ProcessedTable> sorted = tables;
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.table_id < b.table_id; });
  BaselineIndex idx;
  for (const auto& t : sorted) idx.docs.push_back(make_doc(t));
  idx.header_stats = HeaderStats::build(sorted);
  rebuild_search(idx);
  return idx;
}

std::optional<std::size_t> BaselineIndex::find(const std::string& table_id) const {
  const auto it = std::lower_bound(docs.begin(), docs.end(), table_id,
                                   [](const TableDoc& d, const std::string& id) { return d.table_id < id; });
  if (it == docs.end() || it->table_id != table_id) return std::nullopt;
  return static_cast<std::size_t>(it - docs.begin());
}

std::vector<std::string> BaselineIndex::row_population_candidates(const std::vector<std::string>& query, bool seed_mode,
                                                                  std::size_t top_k,
                                                                  const std::optional<std::string>& exclude_table) const {
  const Bm25Index& bm25 = seed_mode ? entity_bm25 : caption_bm25;
  std::vector<std::string> out;
  std::set<std::string> seen;
  std::size_t taken = 0;
  for (const auto& [d, s] : bm25.score_all(query)) {
    if (taken >= top_k) break;
    if (exclude_table && docs[d].table_id == *exclude_table) continue;
    ++taken;
    for (const auto& e : docs[d].subject_entities)
      if (seen.insert(e).second) out.push_back(e);
  }
  return out;
}

void BaselineIndex::save(const std::string& path) const {
  binio::Writer w;
  w.raw(kIndexMagic, sizeof kIndexMagic);
  w.u32(kVersion);
  w.u64(docs.size());
  for (const auto& d : docs) {
    w.str(d.table_id);
    w.strings(d.caption);
    w.strings(d.subject_entities);
    w.strings(d.subject_names);
    w.strings(d.headers);
  }
  w.u64(header_stats.counts.size());
  for (const auto& [h, row] : header_stats.counts) {
    w.str(h);
    w.u64(row.size());
    for (const auto& [hp, n] : row) {
      w.str(hp);
      w.i64(n);
    }
  }
  w.u64(header_stats.mates.size());
  for (const auto& [e, ms] : header_stats.mates) {
    w.str(e);
    w.u64(ms.size());
    for (const auto& m : ms) {
      w.str(m.entity);
      w.str(m.header);
    }
  }
  const std::uint64_t hash = binio::fnv1a(w.bytes());
  w.u64(hash);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
}

BaselineIndex BaselineIndex::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  if (bytes.size() < sizeof kIndexMagic + 4 + 8) throw CorruptCheckpoint("index file too short: " + path);
  if (!std::equal(kIndexMagic, kIndexMagic + sizeof kIndexMagic, bytes.data()))
    throw CorruptCheckpoint("bad index magic: " + path);
  binio::Reader<CorruptCheckpoint> tail(bytes.data() + bytes.size() - 8, 8);
  if (tail.u64() != binio::fnv1a(bytes.data(), bytes.size() - 8)) throw CorruptCheckpoint("index hash mismatch: " + path);
  binio::Reader<CorruptCheckpoint> r(bytes.data() + sizeof kIndexMagic, bytes.size() - sizeof kIndexMagic - 8);
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw VersionMismatch("index version " + std::to_string(version));
  BaselineIndex idx;
  const auto n_docs = r.u64();
  for (std::uint64_t i = 0; i < n_docs; ++i) {
    TableDoc d;
    d.table_id = r.str();
    d.caption = r.strings();
    d.subject_entities = r.strings();
    d.subject_names = r.strings();
    d.headers = r.strings();
    idx.docs.push_back(std::move(d));
  }
  const auto n_h = r.u64();
  for (std::uint64_t i = 0; i < n_h; ++i) {
    const std::string h = r.str();
    const auto n_row = r.u64();
    auto& row = idx.header_stats.counts[h];
    std::int64_t total = 0;
    for (std::uint64_t j = 0; j < n_row; ++j) {
      const std::string hp = r.str();
      const auto n = r.i64();
      row[hp] = n;
      total += n;
    }
    idx.header_stats.totals[h] = total;
  }
  const auto n_m = r.u64();
  for (std::uint64_t i = 0; i < n_m; ++i) {
    const std::string e = r.str();
    const auto k = r.u64();
    auto& ms = idx.header_stats.mates[e];
    for (std::uint64_t j = 0; j < k; ++j) {
      RowMate m;
      m.entity = r.str();
      m.header = r.str();
      ms.insert(std::move(m));
    }
  }
  rebuild_search(idx);
  return idx;
}

}  // namespace turl::baselines
