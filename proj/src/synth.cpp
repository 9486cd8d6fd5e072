#include "turl/synth.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>

#include "turl/errors.hpp"
#include "turl/rng.hpp"

namespace turl::synth {

using nlohmann::json;

namespace {

const std::vector<std::pair<std::string, std::string>> kDomainNouns = {
    {"film", "title"},     {"album", "album"},   {"river", "river"},   {"club", "club"},
    {"novel", "novel"},    {"mountain", "peak"}, {"ship", "vessel"},   {"game", "game"},
    {"bridge", "bridge"},  {"station", "station"}};

const std::vector<std::string> kAttributes = {"director", "producer", "country", "language", "studio",   "genre",
                                              "composer", "writer",   "league",  "owner",    "region",   "author",
                                              "publisher", "designer", "builder", "operator", "architect", "label"};

const std::vector<std::string> kSections = {"overview", "selected", "notable", "complete", "main"};

const std::vector<std::string> kUnrelated = {"village", "lake", "bird", "painter", "hill", "street", "flower"};

class NameMaker {
 public:
  explicit NameMaker(Rng& rng) : rng_(rng) {}

  std::string word(int syllables) {
    static const std::string consonants = "bdfgklmnprstvz";
    static const std::string vowels = "aeiou";
    for (;;) {
      std::string w;
      for (int i = 0; i < syllables; ++i) {
        w += consonants[rng_.below(consonants.size())];
        w += vowels[rng_.below(vowels.size())];
      }
      if (used_.insert(w).second) return w;
    }
  }

 private:
  Rng& rng_;
  std::set<std::string> used_;
};

void write_lines(const std::string& path, const std::vector<json>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& r : rows) out << r.dump() << '\n';
}

}  // namespace

KnowledgeBase build_kb(const SynthConfig& c) {
  if (c.domains <= 0 || c.domains > static_cast<int>(kDomainNouns.size()))
    throw ConfigError("synthetic domains must be in 1.." + std::to_string(kDomainNouns.size()));
  if (c.attributes_per_domain <= 0 || c.attributes_per_domain > static_cast<int>(kAttributes.size()))
    throw ConfigError("attributes_per_domain out of range");
  Rng rng(c.seed);
  NameMaker names(rng);
  KnowledgeBase kb;
  int next_id = 100;
  const auto new_entity = [&](std::string name, std::string desc, std::vector<std::string> types) {
    KbEntity e{"Q" + std::to_string(next_id++), std::move(name), std::move(desc), std::move(types)};
    const std::string id = e.id;
    kb.entities.emplace(id, std::move(e));
    return id;
  };

  for (int d = 0; d < c.domains; ++d) {
    Domain dom;
    dom.noun = kDomainNouns[static_cast<std::size_t>(d)].first;
    dom.key_header = kDomainNouns[static_cast<std::size_t>(d)].second;
    std::vector<std::size_t> attr_order(kAttributes.size());
    std::iota(attr_order.begin(), attr_order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(attr_order));
    for (int a = 0; a < c.attributes_per_domain; ++a) dom.attributes.push_back(kAttributes[attr_order[static_cast<std::size_t>(a)]]);

    for (int s = 0; s < c.subjects_per_domain; ++s)
      dom.subjects.push_back(new_entity(names.word(2) + " " + names.word(2), "a " + dom.noun, {dom.noun}));
    for (const auto& attr : dom.attributes) {
      std::vector<std::string> pool;
      for (int v = 0; v < c.values_per_attribute; ++v)
        pool.push_back(new_entity(names.word(3), attr + " of " + dom.noun, {attr}));
      dom.values.push_back(std::move(pool));
    }
    std::map<std::pair<std::string, int>, std::string> facts;
    for (const auto& s : dom.subjects)
      for (int a = 0; a < c.attributes_per_domain; ++a) {
        const auto& pool = dom.values[static_cast<std::size_t>(a)];
        facts[{s, a}] = pool[rng.below(pool.size())];
      }
    kb.facts.push_back(std::move(facts));
    kb.domains.push_back(std::move(dom));
  }
  // Homonyms: KB-only entities sharing a value's name with unrelated descriptions.
  std::vector<std::string> value_ids;
  for (const auto& dom : kb.domains)
    for (const auto& pool : dom.values) value_ids.insert(value_ids.end(), pool.begin(), pool.end());
  for (const auto& v : value_ids) {
    if (rng.uniform() >= c.homonym_fraction) continue;
    const std::string& other = kUnrelated[rng.below(kUnrelated.size())];
    kb.homonyms[v] = new_entity(kb.entity(v).name, "a " + other, {other});
  }
  return kb;
}

std::vector<corpus::RawTable> generate_tables(const KnowledgeBase& kb, const SynthConfig& c) {
  if (c.min_rows <= 0 || c.max_rows < c.min_rows) throw ConfigError("invalid synthetic row range");
  if (c.min_attributes <= 0 || c.max_attributes < c.min_attributes) throw ConfigError("invalid attribute range");
  Rng rng = Rng(c.seed).derive(1);
  std::vector<corpus::RawTable> out;
  for (int t = 0; t < c.tables; ++t) {
    const std::size_t d = static_cast<std::size_t>(t) % kb.domains.size();
    const Domain& dom = kb.domains[d];
    corpus::RawTable raw;
    char id[16];
    std::snprintf(id, sizeof id, "t%04d", t);
    raw.table_id = id;
    raw.page_title = "list of " + dom.noun + "s";
    raw.section_title = kSections[rng.below(kSections.size())];

    const int max_rows = std::min<int>(c.max_rows, static_cast<int>(dom.subjects.size()));
    const int rows = static_cast<int>(rng.range(std::min(c.min_rows, max_rows), max_rows + 1));
    std::vector<std::size_t> subj(dom.subjects.size());
    std::iota(subj.begin(), subj.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(subj));
    subj.resize(static_cast<std::size_t>(rows));

    const int max_attr = std::min<int>(c.max_attributes, static_cast<int>(dom.attributes.size()));
    const int n_attr = static_cast<int>(rng.range(std::min(c.min_attributes, max_attr), max_attr + 1));
    std::vector<int> attrs(dom.attributes.size());
    std::iota(attrs.begin(), attrs.end(), 0);
    rng.shuffle(std::span<int>(attrs));
    attrs.resize(static_cast<std::size_t>(n_attr));
    std::sort(attrs.begin(), attrs.end());

    raw.caption = dom.noun + " " + dom.attributes[static_cast<std::size_t>(attrs.front())];

    std::vector<std::string> header{dom.key_header};
    for (int a : attrs) header.push_back(dom.attributes[static_cast<std::size_t>(a)]);
    if (c.numeric_column) header.push_back("year");
    raw.header_rows.push_back(header);

    for (std::size_t s : subj) {
      const std::string& sid = dom.subjects[s];
      std::vector<corpus::RawCell> row;
      row.push_back({kb.entity(sid).name, {{sid, kb.entity(sid).name}}});
      for (int a : attrs) {
        const std::string& vid = kb.facts[d].at({sid, a});
        const auto& name = kb.entity(vid).name;
        corpus::RawCell cell{name, {}};
        if (rng.uniform() >= 0.05) cell.links.push_back({vid, name});
        row.push_back(std::move(cell));
      }
      if (c.numeric_column) row.push_back({std::to_string(1950 + rng.below(70)), {}});
      raw.body.push_back(std::move(row));
    }
    out.push_back(std::move(raw));
  }
  return out;
}

void write_type_map(const KnowledgeBase& kb, const std::string& path) {
  std::vector<json> rows;
  for (const auto& [id, e] : kb.entities) rows.push_back({{"entity_id", id}, {"types", e.types}});
  write_lines(path, rows);
}

void write_relation_map(const KnowledgeBase& kb, const std::string& path) {
  std::vector<json> rows;
  for (std::size_t d = 0; d < kb.domains.size(); ++d)
    for (const auto& [key, value] : kb.facts[d])
      rows.push_back({{"subject", key.first},
                      {"object", value},
                      {"relations", {kb.domains[d].noun + "." + kb.domains[d].attributes[static_cast<std::size_t>(key.second)]}}});
  write_lines(path, rows);
}

void write_kb_entities(const KnowledgeBase& kb, const std::string& path) {
  std::vector<json> rows;
  for (const auto& [id, e] : kb.entities)
    rows.push_back({{"entity_id", id}, {"name", e.name}, {"description", e.description}, {"types", e.types}});
  write_lines(path, rows);
}

void write_el_candidates(const KnowledgeBase& kb, const std::string& path) {
  // Lookup order alternates so the lookup's top-1 is sometimes the homonym.
  std::map<std::string, std::vector<std::string>> by_name;
  for (const auto& [id, e] : kb.entities) by_name[e.name].push_back(id);
  std::vector<json> rows;
  std::size_t k = 0;
  for (auto& [name, ids] : by_name) {
    if (ids.size() > 1 && (k++ % 2 == 1)) std::reverse(ids.begin(), ids.end());
    json cands = json::array();
    for (std::size_t r = 0; r < ids.size(); ++r)
      cands.push_back({{"entity_id", ids[r]}, {"score", 1.0 / static_cast<double>(r + 1)}});
    rows.push_back({{"mention", name}, {"candidates", cands}});
  }
  write_lines(path, rows);
}

void write_corpus(const KnowledgeBase& kb, const std::vector<corpus::RawTable>& tables, const std::string& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir + "/corpus.jsonl");
    if (!out) throw IoError("cannot write " + dir + "/corpus.jsonl");
    for (const auto& t : tables) out << corpus::to_json_line(t) << '\n';
  }
  write_type_map(kb, dir + "/types.jsonl");
  write_relation_map(kb, dir + "/relations.jsonl");
  write_kb_entities(kb, dir + "/kb.jsonl");
  write_el_candidates(kb, dir + "/el_candidates.jsonl");
}

}  // namespace turl::synth
