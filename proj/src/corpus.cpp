#include "turl/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "turl/errors.hpp"
#include "turl/rng.hpp"

namespace turl::corpus {

using nlohmann::json;

namespace {

std::string as_id(const json& value) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_number_integer()) return std::to_string(value.get<std::int64_t>());
  if (value.is_number()) return value.dump();
  throw ParseError("identifier must be a string or number, got " + value.dump());
}

std::string string_field(const json& obj, const char* key) {
  const auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return {};
  if (!it->is_string()) throw ParseError(std::string("field '") + key + "' must be a string");
  return it->get<std::string>();
}

Link parse_link(const json& value) {
  if (value.is_array()) {
    if (value.empty()) throw ParseError("empty link");
    Link link{as_id(value.at(0)), {}};
    if (value.size() > 1 && value.at(1).is_string()) link.anchor = value.at(1).get<std::string>();
    return link;
  }
  if (value.is_object()) return Link{as_id(value.at("entity_id")), string_field(value, "anchor")};
  return Link{as_id(value), {}};
}

bool all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

std::string join(const std::vector<std::string>& parts, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

void append(std::vector<std::string>& dst, std::vector<std::string> src) {
  dst.insert(dst.end(), std::make_move_iterator(src.begin()), std::make_move_iterator(src.end()));
}

}  // namespace

std::size_t RawTable::column_count() const {
  std::size_t n = 0;
  for (const auto& row : header_rows) n = std::max(n, row.size());
  return n;
}

std::vector<std::string> ProcessedTable::column_entities(int column) const {
  std::vector<std::string> out;
  for (const auto& cell : cells)
    if (cell.column == column) out.push_back(cell.entity_id);
  return out;
}

std::vector<const EntityCell*> ProcessedTable::column_cells(int column) const {
  std::vector<const EntityCell*> out;
  for (const auto& cell : cells)
    if (cell.column == column) out.push_back(&cell);
  return out;
}

const EntityCell* ProcessedTable::cell_at(int row, int column) const {
  for (const auto& cell : cells)
    if (cell.row == row && cell.column == column) return &cell;
  return nullptr;
}

// ---------------------------------------------------------------- Vocabulary

Vocabulary::Vocabulary(VocabKind kind) : kind_(kind) {
  if (kind == VocabKind::token) {
    for (const char* r : {"[PAD]", "[MASK]", "[UNK]", "[SEP]"}) add(r);
  } else if (kind == VocabKind::entity) {
    for (const char* r : {"[PAD]", "[MASK]", "[UNK]"}) add(r);
  }
  reserved_ = static_cast<int>(entries_.size());
}

Vocabulary Vocabulary::from_counts(VocabKind kind, const std::map<std::string, std::int64_t>& counts,
                                   std::int64_t min_count) {
  Vocabulary vocab(kind);
  std::vector<std::pair<std::string, std::int64_t>> items;
  for (const auto& [entry, n] : counts)
    if (n >= min_count && !vocab.contains(entry)) items.emplace_back(entry, n);
  std::stable_sort(items.begin(), items.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [entry, n] : items) vocab.add(entry, n);
  return vocab;
}

const std::string& Vocabulary::entry(int index) const {
  if (index < 0 || static_cast<std::size_t>(index) >= entries_.size())
    throw IndexOutOfRange("vocabulary index " + std::to_string(index));
  return entries_[static_cast<std::size_t>(index)];
}

std::int64_t Vocabulary::count(int index) const {
  entry(index);
  return counts_[static_cast<std::size_t>(index)];
}

std::optional<int> Vocabulary::find(std::string_view entry) const {
  const auto it = index_.find(std::string(entry));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::lookup(std::string_view entry) const {
  if (auto idx = find(entry)) return *idx;
  if (reserved_ > kUnk) return kUnk;
  throw UnknownId("'" + std::string(entry) + "' not in vocabulary");
}

int Vocabulary::add(const std::string& entry, std::int64_t count) {
  if (auto idx = find(entry)) {
    counts_[static_cast<std::size_t>(*idx)] += count;
    return *idx;
  }
  const int idx = static_cast<int>(entries_.size());
  entries_.push_back(entry);
  counts_.push_back(count);
  index_.emplace(entry, idx);
  return idx;
}

void Vocabulary::write(std::ostream& out) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) out << i << '\t' << entries_[i] << '\t' << counts_[i] << '\n';
}

Vocabulary Vocabulary::read(std::istream& in, VocabKind kind) {
  Vocabulary vocab(kind);
  std::string line;
  std::size_t expected = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = line.rfind('\t');
    if (t1 == std::string::npos || t2 == t1) throw ParseError("malformed vocabulary line: " + line);
    const auto index = std::stoull(line.substr(0, t1));
    const std::string entry = line.substr(t1 + 1, t2 - t1 - 1);
    const auto count = std::stoll(line.substr(t2 + 1));
    if (index != expected) throw ParseError("vocabulary indices must be dense and ordered");
    ++expected;
    if (index < static_cast<std::size_t>(vocab.reserved_)) {
      if (vocab.entries_[index] != entry) throw ParseError("reserved entry mismatch: " + entry);
      vocab.counts_[index] = count;
      continue;
    }
    if (vocab.contains(entry)) throw ParseError("duplicate vocabulary entry: " + entry);
    vocab.add(entry, count);
  }
  return vocab;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  write(out);
}

Vocabulary Vocabulary::load(const std::string& path, VocabKind kind) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  return read(in, kind);
}

// ---------------------------------------------------------------- parsing

RawTable parse_raw_table(std::string_view json_line) {
  json obj;
  try {
    obj = json::parse(json_line);
  } catch (const json::exception& e) {
    throw ParseError(e.what());
  }
  if (!obj.is_object()) throw ParseError("table line must be a JSON object");
  RawTable raw;
  try {
    raw.table_id = as_id(obj.at("table_id"));
    raw.page_title = string_field(obj, "page_title");
    raw.section_title = string_field(obj, "section_title");
    raw.caption = string_field(obj, "caption");
    for (const auto& row : obj.value("header_rows", json::array())) {
      std::vector<std::string> cells;
      for (const auto& h : row) cells.push_back(h.is_string() ? h.get<std::string>() : std::string());
      raw.header_rows.push_back(std::move(cells));
    }
    const std::size_t width = raw.column_count();
    for (auto& row : raw.header_rows) row.resize(width);
    for (const auto& row : obj.value("body", json::array())) {
      if (row.size() != width) continue;  // merged-column row
      std::vector<RawCell> cells;
      for (const auto& c : row) {
        RawCell cell;
        if (c.is_string()) {
          cell.text = c.get<std::string>();
        } else if (c.is_object()) {
          cell.text = string_field(c, "text");
          for (const auto& l : c.value("links", json::array())) cell.links.push_back(parse_link(l));
        }
        cells.push_back(std::move(cell));
      }
      raw.body.push_back(std::move(cells));
    }
    if (auto it = obj.find("topic_entity"); it != obj.end() && !it->is_null()) raw.topic_link = parse_link(*it);
  } catch (const json::exception& e) {
    throw ParseError(std::string("table ") + raw.table_id + ": " + e.what());
  }
  return raw;
}

std::string to_json_line(const RawTable& raw) {
  json body = json::array();
  for (const auto& row : raw.body) {
    json cells = json::array();
    for (const auto& c : row) {
      json links = json::array();
      for (const auto& l : c.links) links.push_back(json::array({l.entity_id, l.anchor}));
      cells.push_back({{"text", c.text}, {"links", links}});
    }
    body.push_back(cells);
  }
  json obj = {{"table_id", raw.table_id},       {"page_title", raw.page_title}, {"section_title", raw.section_title},
              {"caption", raw.caption},         {"header_rows", raw.header_rows}, {"body", body}};
  if (raw.topic_link) obj["topic_entity"] = json::array({raw.topic_link->entity_id, raw.topic_link->anchor});
  return obj.dump();
}

// ---------------------------------------------------------------- pipeline stages

std::vector<std::string> normalize_metadata(const RawTable& raw, const Tokenizer& tokenizer) {
  std::vector<std::string> tokens = tokenizer.tokenize(raw.page_title);
  append(tokens, tokenizer.tokenize(raw.section_title));
  append(tokens, tokenizer.tokenize(raw.caption));
  return tokens;
}

std::vector<std::string> concatenate_headers(const RawTable& raw) {
  const std::size_t width = raw.column_count();
  std::vector<std::string> headers(width);
  for (std::size_t c = 0; c < width; ++c) {
    std::vector<std::string> parts;
    for (const auto& row : raw.header_rows) {
      if (c < row.size()) {
        const auto part = trim(row[c]);
        if (!part.empty()) parts.emplace_back(part);
      }
    }
    headers[c] = join(parts, " ");
  }
  return headers;
}

bool is_legal_header(std::string_view header) {
  const std::string norm = normalize_label(header);
  if (norm.empty() || all_digits(norm)) return false;
  return norm != "note" && norm != "comment" && norm != "reference";
}

std::vector<int> identify_entity_columns(const RawTable& raw, const std::vector<std::string>& headers) {
  std::vector<int> out;
  for (std::size_t c = 0; c < headers.size(); ++c) {
    if (!is_legal_header(headers[c])) continue;
    const bool linked = std::any_of(raw.body.begin(), raw.body.end(),
                                    [&](const auto& row) { return c < row.size() && !row[c].links.empty(); });
    if (linked) out.push_back(static_cast<int>(c));
  }
  return out;
}

std::optional<int> detect_subject_column(const RawTable& raw, const std::vector<int>& entity_columns) {
  for (int c : {0, 1}) {
    if (std::find(entity_columns.begin(), entity_columns.end(), c) == entity_columns.end()) continue;
    std::set<std::string> seen;
    bool unique = true;
    for (const auto& row : raw.body) {
      const auto& cell = row[static_cast<std::size_t>(c)];
      if (cell.links.empty()) continue;
      if (!seen.insert(cell.links.front().entity_id).second) {
        unique = false;
        break;
      }
    }
    if (unique) return c;
  }
  return std::nullopt;
}

ProcessedTable process_table(const RawTable& raw, const Tokenizer& tokenizer) {
  ProcessedTable t;
  t.table_id = raw.table_id;
  t.caption_tokens = normalize_metadata(raw, tokenizer);
  const auto headers = concatenate_headers(raw);
  for (const auto& h : headers) {
    t.headers.push_back(tokenizer.tokenize(h));
    t.header_texts.push_back(normalize_label(h));
  }
  t.entity_columns = identify_entity_columns(raw, headers);
  t.subject_column = detect_subject_column(raw, t.entity_columns);
  t.row_count = static_cast<int>(raw.body.size());

  const auto mention_of = [&](const RawCell& cell) {
    auto m = tokenizer.tokenize(cell.text);
    if (m.empty()) m = tokenizer.tokenize(cell.links.front().anchor);
    if (m.empty()) m = tokenizer.tokenize(cell.links.front().entity_id);
    if (m.empty()) m.emplace_back("[UNK]");
    return m;
  };
  for (std::size_t r = 0; r < raw.body.size(); ++r) {
    for (int c : t.entity_columns) {
      const auto& cell = raw.body[r][static_cast<std::size_t>(c)];
      if (cell.links.empty()) continue;
      EntityCell e;
      e.entity_id = cell.links.front().entity_id;
      e.mention = mention_of(cell);
      e.row = static_cast<int>(r);
      e.column = c;
      e.kind = (t.subject_column && *t.subject_column == c) ? EntityKind::subject : EntityKind::object;
      t.cells.push_back(std::move(e));
    }
  }
  if (raw.topic_link) {
    EntityCell topic;
    topic.entity_id = raw.topic_link->entity_id;
    topic.mention = tokenizer.tokenize(raw.page_title);
    if (topic.mention.empty()) topic.mention = tokenizer.tokenize(raw.topic_link->anchor);
    if (topic.mention.empty()) topic.mention.emplace_back("[UNK]");
    topic.kind = EntityKind::topic;
    t.topic_entity = std::move(topic);
  }
  return t;
}

bool filter_relational(const ProcessedTable& table, FilterMode mode, const FilterThresholds& th) {
  if (!table.subject_column) return false;
  if (table.cells.size() < th.min_entities) return false;
  if (table.column_count() > th.max_columns) return false;
  if (mode == FilterMode::pretrain) return true;

  const auto subject_linked = table.column_cells(*table.subject_column).size();
  if (subject_linked < th.eval_min_subject_entities) return false;
  if (table.entity_columns.size() < th.eval_min_entity_columns) return false;
  const double grid = static_cast<double>(table.row_count) * static_cast<double>(table.entity_columns.size());
  return grid > 0 && static_cast<double>(table.cells.size()) / grid > th.eval_min_linked_fraction;
}

Partition partition(std::vector<ProcessedTable> relational, std::uint64_t seed, const FilterThresholds& th,
                    std::size_t heldout_cap) {
  std::sort(relational.begin(), relational.end(),
            [](const auto& a, const auto& b) { return a.table_id < b.table_id; });
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < relational.size(); ++i)
    if (filter_relational(relational[i], FilterMode::eval, th)) eligible.push_back(i);

  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(eligible));
  if (heldout_cap > 0 && eligible.size() > heldout_cap) eligible.resize(heldout_cap);

  std::vector<int> role(relational.size(), 0);  // 0 train, 1 valid, 2 test
  const std::size_t n_valid = eligible.size() / 2;
  for (std::size_t k = 0; k < eligible.size(); ++k) role[eligible[k]] = k < n_valid ? 1 : 2;

  Partition out;
  for (std::size_t i = 0; i < relational.size(); ++i) {
    auto& dst = role[i] == 0 ? out.train : role[i] == 1 ? out.valid : out.test;
    dst.push_back(std::move(relational[i]));
  }
  return out;
}

Vocabularies build_vocabularies(const std::vector<ProcessedTable>& train) {
  std::vector<const ProcessedTable*> sorted;
  for (const auto& t : train) sorted.push_back(&t);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->table_id < b->table_id; });

  std::map<std::string, std::int64_t> tokens;
  std::map<std::string, std::int64_t> entities;
  const auto count_cell = [&](const EntityCell& cell) {
    ++entities[cell.entity_id];
    for (const auto& w : cell.mention) ++tokens[w];
  };
  for (const auto* t : sorted) {
    for (const auto& w : t->caption_tokens) ++tokens[w];
    for (const auto& h : t->headers)
      for (const auto& w : h) ++tokens[w];
    if (t->topic_entity) count_cell(*t->topic_entity);
    for (const auto& c : t->cells) count_cell(c);
  }
  return Vocabularies{Vocabulary::from_counts(VocabKind::token, tokens, 1),
                      Vocabulary::from_counts(VocabKind::entity, entities, 2)};
}

std::unordered_map<std::string, std::vector<std::string>> collect_entity_names(
    const std::vector<ProcessedTable>& tables) {
  std::map<std::string, std::map<std::vector<std::string>, int>> mentions;
  for (const auto& t : tables) {
    if (t.topic_entity) ++mentions[t.topic_entity->entity_id][t.topic_entity->mention];
    for (const auto& c : t.cells) ++mentions[c.entity_id][c.mention];
  }
  std::unordered_map<std::string, std::vector<std::string>> out;
  for (const auto& [id, counts] : mentions) {
    const auto best = std::max_element(counts.begin(), counts.end(), [](const auto& a, const auto& b) {
      return a.second < b.second;  // first maximum in lexicographic order wins
    });
    out.emplace(id, best->first);
  }
  return out;
}

// ---------------------------------------------------------------- processed JSONL

namespace {

json cell_json(const EntityCell& c) {
  return {{"entity_id", c.entity_id}, {"mention", c.mention}, {"row", c.row}, {"column", c.column},
          {"kind", static_cast<int>(c.kind)}};
}

EntityCell cell_from_json(const json& j) {
  EntityCell c;
  c.entity_id = as_id(j.at("entity_id"));
  c.mention = j.at("mention").get<std::vector<std::string>>();
  c.row = j.at("row").get<int>();
  c.column = j.at("column").get<int>();
  const int kind = j.at("kind").get<int>();
  if (kind < 0 || kind > 2) throw ParseError("bad entity kind");
  c.kind = static_cast<EntityKind>(kind);
  return c;
}

}  // namespace

std::string to_json_line(const ProcessedTable& t) {
  json cells = json::array();
  for (const auto& c : t.cells) cells.push_back(cell_json(c));
  json obj = {{"table_id", t.table_id},
              {"caption_tokens", t.caption_tokens},
              {"headers", t.headers},
              {"header_texts", t.header_texts},
              {"entity_columns", t.entity_columns},
              {"row_count", t.row_count},
              {"cells", cells}};
  obj["subject_column"] = t.subject_column ? json(*t.subject_column) : json(nullptr);
  obj["topic_entity"] = t.topic_entity ? cell_json(*t.topic_entity) : json(nullptr);
  return obj.dump();
}

ProcessedTable processed_from_json_line(std::string_view line) {
  try {
    const json j = json::parse(line);
    ProcessedTable t;
    t.table_id = as_id(j.at("table_id"));
    t.caption_tokens = j.at("caption_tokens").get<std::vector<std::string>>();
    t.headers = j.at("headers").get<std::vector<std::vector<std::string>>>();
    t.header_texts = j.at("header_texts").get<std::vector<std::string>>();
    t.entity_columns = j.at("entity_columns").get<std::vector<int>>();
    t.row_count = j.at("row_count").get<int>();
    if (!j.at("subject_column").is_null()) t.subject_column = j.at("subject_column").get<int>();
    if (!j.at("topic_entity").is_null()) t.topic_entity = cell_from_json(j.at("topic_entity"));
    for (const auto& c : j.at("cells")) t.cells.push_back(cell_from_json(c));
    return t;
  } catch (const json::exception& e) {
    throw ParseError(e.what());
  }
}

std::vector<ProcessedTable> read_processed(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::vector<ProcessedTable> out;
  std::string line;
  while (std::getline(in, line))
    if (!trim(line).empty()) out.push_back(processed_from_json_line(line));
  return out;
}

void write_processed(const std::string& path, const std::vector<ProcessedTable>& tables) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& t : tables) out << to_json_line(t) << '\n';
}

std::vector<RawTable> read_raw_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::vector<RawTable> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(parse_raw_table(line));
    } catch (const ParseError& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

PreprocessResult preprocess(const std::vector<RawTable>& raw, const Tokenizer& tokenizer, std::uint64_t seed,
                            const FilterThresholds& thresholds, std::size_t heldout_cap) {
  PreprocessResult result;
  result.stats.raw = raw.size();
  std::vector<ProcessedTable> relational;
  for (const auto& r : raw) {
    if (r.header_rows.empty()) continue;
    auto t = process_table(r, tokenizer);
    if (filter_relational(t, FilterMode::pretrain, thresholds)) relational.push_back(std::move(t));
  }
  result.stats.relational = relational.size();
  result.partition = partition(std::move(relational), seed, thresholds, heldout_cap);
  result.vocabularies = build_vocabularies(result.partition.train);
  result.stats.train = result.partition.train.size();
  result.stats.valid = result.partition.valid.size();
  result.stats.test = result.partition.test.size();
  return result;
}

}  // namespace turl::corpus
