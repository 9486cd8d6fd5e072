#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "turl/corpus.hpp"

// Deterministic synthetic web-table corpus backed by a small knowledge base of
// functional facts (subject --attribute--> value). Used by tests, demos and
// the toy experiments.
namespace turl::synth {

struct SynthConfig {
  int domains = 5;
  int subjects_per_domain = 20;
  int attributes_per_domain = 4;
  int values_per_attribute = 6;
  int tables = 50;
  int min_rows = 5;
  int max_rows = 8;
  int min_attributes = 2;  // attribute columns per table
  int max_attributes = 3;
  bool numeric_column = true;  // add an unlinked "year" column
  double homonym_fraction = 0.3;  // values that get a same-name KB distractor
  std::uint64_t seed = 7;
};

struct KbEntity {
  std::string id;
  std::string name;
  std::string description;
  std::vector<std::string> types;
};

struct Domain {
  std::string noun;         // e.g. "film"
  std::string key_header;   // subject column header
  std::vector<std::string> attributes;   // attribute headers (also relation names)
  std::vector<std::string> subjects;     // entity ids
  std::vector<std::vector<std::string>> values;  // per attribute, entity ids
};

struct KnowledgeBase {
  std::vector<Domain> domains;
  std::map<std::string, KbEntity> entities;
  // (subject, attribute index) -> value entity id, per domain
  std::vector<std::map<std::pair<std::string, int>, std::string>> facts;
  // value entity id -> distractor entity id with the same name
  std::map<std::string, std::string> homonyms;

  const KbEntity& entity(const std::string& id) const { return entities.at(id); }
};

KnowledgeBase build_kb(const SynthConfig& config);

/// Tables in corpus order. Each table samples one domain, a row subset of its
/// subjects and a column subset of its attributes.
std::vector<corpus::RawTable> generate_tables(const KnowledgeBase& kb, const SynthConfig& config);

/// JSONL side files for the fine-tuning tasks (formats documented in README).
void write_type_map(const KnowledgeBase& kb, const std::string& path);
void write_relation_map(const KnowledgeBase& kb, const std::string& path);
void write_kb_entities(const KnowledgeBase& kb, const std::string& path);
/// Candidate lists per mention: the true entities and their homonyms.
void write_el_candidates(const KnowledgeBase& kb, const std::string& path);

/// Writes corpus.jsonl plus all side files into dir.
void write_corpus(const KnowledgeBase& kb, const std::vector<corpus::RawTable>& tables, const std::string& dir);

}  // namespace turl::synth
