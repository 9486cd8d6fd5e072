#include <doctest.h>

#include <sstream>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "turl/encoding.hpp"
#include "turl/errors.hpp"

using namespace turl;
using namespace turl::encoding;

namespace {

corpus::Vocabularies vocab_for(const std::vector<corpus::ProcessedTable>& tables) {
  auto v = corpus::build_vocabularies(tables);
  // keep every entity, even singletons
  for (const auto& t : tables)
    for (const auto& c : t.cells) v.entities.add(c.entity_id, 1);
  return v;
}

// Example table: caption "films", headers "film" / "lead", 2 rows.
corpus::ProcessedTable example() {
  auto t = fixture::table("ex", {"films", "list"}, {"film", "lead"}, {{"A", "X"}, {"B", "Y"}});
  t.topic_entity = corpus::EntityCell{"T", {"topic"}, -1, -1, corpus::EntityKind::topic};
  return t;
}

}  // namespace

TEST_CASE("linearize order and coordinates") {
  const auto t = example();
  const auto v = vocab_for({t});
  const auto seq = linearize(t, v.tokens, v.entities, 64);
  REQUIRE(seq.size() == 2 + 1 + 2 + 4);
  CHECK(seq.elements[0].kind == ElementKind::caption_token);
  CHECK(seq.elements[1].position == 1);
  CHECK(seq.elements[2].kind == ElementKind::topic_entity);
  CHECK(seq.elements[2].seg_type == static_cast<int>(corpus::EntityKind::topic));
  CHECK(seq.elements[3].kind == ElementKind::header_token);
  CHECK(seq.elements[3].column == 0);
  CHECK(seq.elements[3].seg_type == kHeaderSegment);
  CHECK(seq.elements[4].column == 1);
  CHECK(seq.elements[4].position == 0);
  CHECK(seq.elements[5].kind == ElementKind::cell_entity);
  CHECK(seq.elements[5].id == v.entities.lookup("A"));
  CHECK(seq.elements[5].position == 0);
  CHECK(seq.elements[6].row == 0);
  CHECK(seq.elements[6].column == 1);
  CHECK(seq.elements[8].row == 1);
  CHECK(seq.cell_indices(1) == std::vector<int>{6, 8});
  CHECK(seq.header_indices(0) == std::vector<int>{3});
  CHECK(seq.token_indices() == std::vector<int>{0, 1, 3, 4});
}

TEST_CASE("truncation drops whole trailing rows") {
  const auto t = example();
  const auto v = vocab_for({t});
  const auto seq = linearize(t, v.tokens, v.entities, 8);  // 5 metadata + one 2-cell row fits, not two
  CHECK(seq.size() == 7);
  for (const auto& e : seq.elements)
    if (e.kind == ElementKind::cell_entity) CHECK(e.row == 0);
  CHECK(build_visibility(seq).size() == 7);
  const auto tiny = linearize(t, v.tokens, v.entities, 3);
  CHECK(tiny.size() == 3);
  auto empty = corpus::ProcessedTable{};
  empty.table_id = "e";
  CHECK_THROWS_AS(linearize(empty, v.tokens, v.entities, 8), TableTooSmall);
}

TEST_CASE("visibility follows the structural rules") {
  const auto t = example();
  const auto v = vocab_for({t});
  const auto seq = linearize(t, v.tokens, v.entities, 64);
  const auto m = build_visibility(seq);
  CHECK(m.is_symmetric());
  for (std::size_t i = 0; i < seq.size(); ++i) CHECK(m(i, i) == 1);
  // caption and topic see everything
  for (std::size_t j = 0; j < seq.size(); ++j) {
    CHECK(m(0, j) == 1);
    CHECK(m(2, j) == 1);
  }
  CHECK(m(3, 4) == 1);  // header film <-> header lead
  CHECK(m(3, 5) == 1);  // header film <-> A (same column)
  CHECK(m(3, 6) == 0);  // header film <-> X (other column)
  CHECK(m(5, 6) == 1);  // A <-> X same row
  CHECK(m(5, 7) == 1);  // A <-> B same column
  CHECK(m(5, 8) == 0);  // A <-> Y neither
  CHECK(m(6, 7) == 0);  // X <-> B neither
  const auto o = oracle::visibility(seq);
  for (std::size_t i = 0; i < seq.size(); ++i)
    for (std::size_t j = 0; j < seq.size(); ++j) CHECK(m(i, j) == o[i][j]);
}

TEST_CASE("visibility dump format") {
  VisibilityMatrix m(2);
  m.set(0, 0, 1);
  m.set(1, 0, 1);
  std::ostringstream out;
  m.dump(out);
  CHECK(out.str() == "1 0\n1 0\n");
  CHECK_FALSE(m.is_symmetric());
  CHECK(VisibilityMatrix::all_visible(3)(2, 0) == 1);
}

TEST_CASE("unknown tokens and entities map to UNK") {
  const auto t = example();
  const auto v = corpus::build_vocabularies({fixture::table("o", {"other"}, {"h"}, {{"Z"}})});
  const auto seq = linearize(t, v.tokens, v.entities, 64);
  for (const auto& e : seq.elements) CHECK(e.id == corpus::Vocabulary::kUnk);
  const auto cell = make_entity(7, {1, 2}, corpus::EntityKind::object, 3, 4);
  CHECK(cell.kind == ElementKind::cell_entity);
  CHECK(cell.seg_type == 1);
  CHECK(cell.row == 3);
}
