#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "turl/baselines.hpp"
#include "turl/errors.hpp"

using namespace turl;
using namespace turl::baselines;
namespace fs = std::filesystem;

namespace {

const std::vector<std::vector<std::string>> kDocs = {{"a", "b"}, {"a", "c", "c"}, {"d"}};

std::vector<corpus::ProcessedTable> sports() {
  // the (S1, C1) fact appears under "city" and "home"
  return {fixture::table("t1", {"teams"}, {"team", "city"}, {{"S1", "C1"}, {"S2", "C2"}}),
          fixture::table("t2", {"clubs"}, {"club", "home"}, {{"S1", "C1"}, {"S3", "C3"}}),
          fixture::table("t3", {"teams", "list"}, {"team", "city", "coach"}, {{"S2", "C2", "P1"}})};
}

}  // namespace

TEST_CASE("bm25 by hand") {
  Bm25Index idx(kDocs);
  // avgdl 2; single-term queries
  const double idf_c = std::log(2.5 / 1.5 + 1), idf_a = std::log(1.5 / 2.5 + 1);
  CHECK(idx.idf("c") == doctest::Approx(idf_c));
  CHECK(idx.idf("zzz") == doctest::Approx(std::log(3.5 / 0.5 + 1)));
  auto s = idx.score_all({"c"});
  REQUIRE(s.size() == 1);
  CHECK(s[0].first == 1);
  CHECK(s[0].second == doctest::Approx(idf_c * 2 * 2.2 / (2 + 1.2 * (0.25 + 0.75 * 1.5))));
  s = idx.score_all({"a", "a"});
  REQUIRE(s.size() == 2);
  CHECK(s[0].first == 0);
  CHECK(s[0].second == doctest::Approx(idf_a));
  CHECK(s[1].second == doctest::Approx(idf_a * 2.2 / (1 + 1.2 * 1.375)));
  CHECK(idx.retrieve({"a", "c", "d"}, 2).size() == 2);
  CHECK(idx.score_all({"a", "d"}).size() == 3);
  for (const auto& [doc, score] : idx.score_all({"a", "c", "d"}))
    CHECK(score == doctest::Approx(oracle::bm25(kDocs, {"a", "c", "d"}, doc)));
}

TEST_CASE("tf-idf vectors and neighbours") {
  TfIdfIndex idx(kDocs);
  const auto v = idx.vectorize({"c", "c", "q"});
  REQUIRE(v.size() == 1);
  CHECK(v.at("c") == doctest::Approx(2 * std::log(3.0)));
  CHECK(TfIdfIndex::cosine(v, v) == doctest::Approx(1.0));
  CHECK(TfIdfIndex::cosine(v, {}) == 0.0);
  const auto nn = idx.nearest({"a", "b"}, 5);
  REQUIRE(nn.size() == 2);
  CHECK(nn[0].first == 0);
  CHECK(idx.nearest({"a", "b"}, 5, 0).front().first == 1);
}

TEST_CASE("header statistics") {
  const auto tables = sports();
  const auto stats = HeaderStats::build(tables);
  CHECK(stats.count("home", "city") == 1);
  CHECK(stats.count("city", "home") == 1);
  CHECK(stats.count("city", "city") == 1);  // (S2, C2) in t1 and t3
  CHECK(stats.relatedness("home", "city") == doctest::Approx(0.5));
  CHECK(stats.relatedness("coach", "city") == 0.0);
  CHECK(stats.relatedness("x", "y") == 0.0);
  for (const auto& h : stats.headers())
    for (const auto& hp : stats.headers())
      CHECK(stats.relatedness(hp, h) == doctest::Approx(oracle::relatedness(tables, hp, h)));
  CHECK(stats.row_mates("S1").count({"C1", "home"}));
  CHECK(stats.row_mates("nobody").empty());
}

TEST_CASE("cell filling") {
  const auto stats = HeaderStats::build(sports());
  const auto all = cell_filling_candidates("S2", "city", stats, false);
  std::set<std::string> ents;
  for (const auto& c : all) ents.insert(c.entity);
  CHECK(ents == std::set<std::string>{"C2", "P1"});
  const auto kept = cell_filling_candidates("S2", "city", stats, true);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].entity == "C2");
  const auto exact = cell_fill_rank(all, "city", FillMode::exact, stats);
  REQUIRE(exact.size() == 2);
  CHECK(exact[0].first == "C2");
  CHECK(exact[0].second == 1.0);
  CHECK(exact[1].second == 0.0);
  const auto h2h = cell_fill_rank(cell_filling_candidates("S1", "city", stats, false), "city", FillMode::h2h, stats);
  REQUIRE_FALSE(h2h.empty());
  CHECK(h2h[0].first == "C1");
}

TEST_CASE("knn schema augmentation matches the reference") {
  const auto tables = sports();
  std::vector<TableDoc> docs;
  std::vector<std::vector<std::string>> caps;
  for (const auto& t : tables) {
    docs.push_back(make_doc(t));
    caps.push_back(docs.back().caption);
  }
  std::vector<std::vector<std::string>> schemas;
  for (const auto& d : docs) schemas.push_back(d.headers);
  const TfIdfIndex idx(caps);
  for (const std::vector<std::string> seeds : {std::vector<std::string>{}, {"team"}, {"team", "city"}}) {
    const auto got = knn_schema_augment({"teams"}, seeds, idx, docs, 2);
    const auto want = oracle::knn_scores(caps, schemas, {"teams"}, seeds, 2);
    REQUIRE(got.size() == want.size());
    for (const auto& [h, s] : got) CHECK(s == doctest::Approx(want.at(h)));
    for (const auto& [h, s] : got) CHECK(std::find(seeds.begin(), seeds.end(), h) == seeds.end());
  }
}

TEST_CASE("relation vote") {
  RelationMap rel{{{"a", "b"}, {"r1", "r2"}}, {{"c", "d"}, {"r1"}}};
  CHECK(*el_vote_relations({{"a", "b"}, {"c", "d"}}, rel, 1.0) == std::set<std::string>{"r1"});
  CHECK(*el_vote_relations({{"a", "b"}, {"c", "d"}}, rel, 0.5) == std::set<std::string>{"r1", "r2"});
  CHECK(el_vote_relations({{"a", "b"}, {"x", "y"}}, rel, 0.6)->empty());
  CHECK_FALSE(el_vote_relations({}, rel, 0.5).has_value());
}

TEST_CASE("baseline index persistence") {
  const auto idx = BaselineIndex::build(sports());
  CHECK(idx.docs.size() == 3);
  CHECK(idx.find("t2") == 1);
  CHECK_FALSE(idx.find("zz").has_value());
  const auto pop = idx.row_population_candidates({"teams"}, false, 5);
  CHECK(pop == std::vector<std::string>{"S1", "S2"});  // t1 (shorter caption) then t3, deduplicated
  CHECK(idx.row_population_candidates({"teams"}, false, 5, "t1") == std::vector<std::string>{"S2"});

  const auto dir = fs::temp_directory_path() / "turl_index_test";
  fs::create_directories(dir);
  const auto path = (dir / "idx.bin").string();
  idx.save(path);
  const auto back = BaselineIndex::load(path);
  CHECK(back.docs.size() == 3);
  CHECK(back.header_stats.counts == idx.header_stats.counts);
  CHECK(back.row_population_candidates({"teams"}, false, 5) == pop);
  CHECK(back.caption_bm25.score_all({"list"}) == idx.caption_bm25.score_all({"list"}));

  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(BaselineIndex::load(path), CorruptCheckpoint);
  {
    auto flipped = bytes;
    flipped[flipped.size() / 2] ^= 0x5a;
    std::ofstream out(path, std::ios::binary);
    out.write(flipped.data(), static_cast<std::streamsize>(flipped.size()));
  }
  CHECK_THROWS_AS(BaselineIndex::load(path), CorruptCheckpoint);
  CHECK_THROWS_AS(BaselineIndex::load((dir / "missing.bin").string()), IoError);
  fs::remove_all(dir);
}
