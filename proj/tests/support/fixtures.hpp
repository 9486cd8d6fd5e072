#pragma once

#include <string>
#include <vector>

#include "turl/corpus.hpp"
#include "turl/encoder.hpp"
#include "turl/pretrain.hpp"
#include "turl/synth.hpp"
#include "turl/tokenizer.hpp"

namespace fixture {

using turl::corpus::EntityCell;
using turl::corpus::EntityKind;
using turl::corpus::ProcessedTable;

/// Hand-built processed table: column 0 is the subject column, every column
/// is an entity column, "" leaves a cell unlinked. Mentions are the entity id.
inline ProcessedTable table(const std::string& id, const std::vector<std::string>& caption,
                            const std::vector<std::string>& headers, const std::vector<std::vector<std::string>>& rows) {
  ProcessedTable t;
  t.table_id = id;
  t.caption_tokens = caption;
  for (std::size_t c = 0; c < headers.size(); ++c) {
    t.headers.push_back({headers[c]});
    t.header_texts.push_back(headers[c]);
    t.entity_columns.push_back(static_cast<int>(c));
  }
  t.subject_column = 0;
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      if (rows[r][c].empty()) continue;
      EntityCell e;
      e.entity_id = rows[r][c];
      e.mention = {rows[r][c]};
      e.row = static_cast<int>(r);
      e.column = static_cast<int>(c);
      e.kind = c == 0 ? EntityKind::subject : EntityKind::object;
      t.cells.push_back(e);
    }
  t.row_count = static_cast<int>(rows.size());
  return t;
}

struct Toy {
  turl::synth::KnowledgeBase kb;
  std::vector<ProcessedTable> tables;
  turl::corpus::Vocabularies vocab;
};

/// Synthetic corpus, processed and pretrain-filtered, vocabularies over all of it.
inline Toy toy_corpus(std::uint64_t seed = 1, int tables = 50) {
  turl::synth::SynthConfig sc;
  sc.seed = seed;
  sc.tables = tables;
  Toy toy;
  toy.kb = turl::synth::build_kb(sc);
  turl::BasicTokenizer tok;
  for (const auto& raw : turl::synth::generate_tables(toy.kb, sc)) {
    auto p = turl::corpus::process_table(raw, tok);
    if (turl::corpus::filter_relational(p, turl::corpus::FilterMode::pretrain)) toy.tables.push_back(std::move(p));
  }
  toy.vocab = turl::corpus::build_vocabularies(toy.tables);
  return toy;
}

/// N=2, d=64, k=4 encoder over the toy vocabularies.
inline turl::encoder::EncoderConfig toy_config(const turl::corpus::Vocabularies& v, int max_len = 128) {
  turl::encoder::EncoderConfig c;
  c.num_blocks = 2;
  c.d_model = 64;
  c.d_intermediate = 128;
  c.num_heads = 4;
  c.max_len = max_len;
  c.token_vocab = static_cast<int>(v.tokens.size());
  c.entity_vocab = static_cast<int>(v.entities.size());
  return c;
}

inline turl::encoder::ModelWeights<float> toy_model(const Toy& toy, std::uint64_t seed) {
  turl::Rng rng(seed);
  return turl::encoder::ModelWeights<float>::init(toy_config(toy.vocab), rng,
                                                  turl::pretrain::entity_name_ids(toy.tables, toy.vocab));
}

}  // namespace fixture
