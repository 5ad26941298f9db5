#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "support.hpp"
#include "tilp/dataset.hpp"
#include "tilp/errors.hpp"

using namespace tilp;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("tilp-test-" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST_SUITE("tkg-store") {

TEST_CASE("temporal relation classes on grounding examples") {
  CHECK(temporal_relation(ResolvedInterval{2005, 2005}, ResolvedInterval{2009, 2009}) == TemporalRelation::Before);
  CHECK(temporal_relation(ResolvedInterval{1977, 1977}, ResolvedInterval{1977, 1977}) == TemporalRelation::Touching);
  CHECK(temporal_relation(ResolvedInterval{2010, 2012}, ResolvedInterval{2000, 2009}) == TemporalRelation::After);
}

TEST_CASE("Allen configurations over small intervals map to three classes") {
  // Hand-built representative of each of the 13 Allen relations (a vs b).
  struct Case {
    const char* name;
    ResolvedInterval a, b;
    TemporalRelation expected;
  };
  const Case cases[] = {
      {"before", {0, 1}, {3, 5}, TemporalRelation::Before},
      {"meets", {0, 2}, {2, 5}, TemporalRelation::Touching},
      {"overlaps", {0, 3}, {2, 5}, TemporalRelation::Touching},
      {"starts", {0, 2}, {0, 5}, TemporalRelation::Touching},
      {"during", {1, 3}, {0, 5}, TemporalRelation::Touching},
      {"finishes", {2, 5}, {0, 5}, TemporalRelation::Touching},
      {"equals", {1, 3}, {1, 3}, TemporalRelation::Touching},
      {"finished-by", {0, 5}, {2, 5}, TemporalRelation::Touching},
      {"contains", {0, 5}, {1, 3}, TemporalRelation::Touching},
      {"started-by", {0, 5}, {0, 2}, TemporalRelation::Touching},
      {"overlapped-by", {2, 5}, {0, 3}, TemporalRelation::Touching},
      {"met-by", {2, 5}, {0, 2}, TemporalRelation::Touching},
      {"after", {3, 5}, {0, 1}, TemporalRelation::After},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    CHECK(temporal_relation(c.a, c.b) == c.expected);
    CHECK(temporal_relation(c.b, c.a) == converse(c.expected));
  }
}

TEST_CASE("unresolved endpoints are a contract violation") {
  const Interval open{Endpoint::known(2000), Endpoint::unknown()};
  CHECK_THROWS_AS(temporal_relation(open, Interval::at(2000)), ContractViolation);
  CHECK(resolve(Interval{Endpoint::known(1962), Endpoint::present()}, 2020) == ResolvedInterval{1962, 2020});
  CHECK_THROWS_AS(resolve(open, 2020), ContractViolation);
}

TEST_CASE("endpoint tokens") {
  CHECK(parse_endpoint("1994").first == Endpoint::known(1994));
  CHECK(parse_endpoint("-431").first == Endpoint::known(-431));
  const auto [month, truncated] = parse_endpoint("2003-07");
  CHECK(month == Endpoint::known(2003));
  CHECK(truncated);
  CHECK(parse_endpoint("1990-##-##").first == Endpoint::known(1990));
  CHECK(parse_endpoint("####").first == Endpoint::unknown());
  CHECK(parse_endpoint("").first == Endpoint::unknown());
  CHECK(parse_endpoint("present").first == Endpoint::present());
  CHECK_THROWS_AS(parse_endpoint("19x4"), ParseError);
}

TEST_CASE("loading files") {
  const auto dir = temp_dir("load");
  SUBCASE("empty files give an empty split") {
    for (const char* f : {"train.txt", "valid.txt", "test.txt"}) write_file(dir / f, "");
    const auto d = load_dataset(dir / "train.txt", dir / "valid.txt", dir / "test.txt");
    CHECK(d.train.empty());
    CHECK(d.entities.size() == 0);
    CHECK(d.relations.size() == 0);
  }
  SUBCASE("month-resolved dates truncate to the year") {
    write_file(dir / "train.txt",
               "a\tr0\tb\t2003-07\t2005\n"
               "b\tr1\tc\t1999\t####\n"
               "c\tr0\ta\t####\t2001\n");
    write_file(dir / "valid.txt", "a\tr1\tz\t2010\t2011\n");
    write_file(dir / "test.txt", "");
    const auto d = load_dataset(dir / "train.txt", dir / "valid.txt", dir / "test.txt");
    REQUIRE(d.train.size() == 3);
    CHECK(d.train[0].interval.start == Endpoint::known(2003));
    CHECK(d.stats.truncated_dates == 1);
    CHECK(d.train[1].interval.end == Endpoint::unknown());
    CHECK(d.train[2].interval.start == Endpoint::unknown());
    // The vocabulary is the union over splits.
    CHECK(d.entities.size() == 4);
    CHECK(d.relations.size() == 2);
  }
  SUBCASE("malformed line reports its number") {
    write_file(dir / "train.txt", "a\tr0\tb\t2000\t2001\nbroken line\n");
    write_file(dir / "valid.txt", "");
    write_file(dir / "test.txt", "");
    try {
      (void)load_dataset(dir / "train.txt", dir / "valid.txt", dir / "test.txt");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
  }
  SUBCASE("years past the valid range become unknown and swapped intervals are fixed") {
    write_file(dir / "train.txt", "a\tr0\tb\t2000\t2999\nb\tr0\tc\t2005\t2001\n");
    write_file(dir / "valid.txt", "");
    write_file(dir / "test.txt", "");
    const auto d = load_dataset(dir / "train.txt", dir / "valid.txt", dir / "test.txt");
    CHECK(d.train[0].interval.end == Endpoint::unknown());
    CHECK(d.stats.corrected_years == 1);
    CHECK(d.train[1].interval == Interval::span(2001, 2005));
    CHECK(d.stats.swapped_intervals == 1);
  }
}

TEST_CASE("graph stores inverses") {
  const std::vector<Quadruple> one{{0, 0, 1, Interval::span(2000, 2001)}};
  const auto g = TemporalGraph::build(one, 2, 1);
  REQUIRE(g.size() == 2);
  CHECK(g.fact(1).subject == 1);
  CHECK(g.fact(1).relation == 1);
  CHECK(g.fact(1).object == 0);
  CHECK(g.fact(0).edge_id == g.fact(1).edge_id);
  const auto out_b = g.outgoing(1);
  REQUIRE(out_b.size() == 1);
  CHECK(g.fact(out_b[0]).relation == g.inverse(0));

  const std::vector<Quadruple> open{{0, 0, 1, Interval{Endpoint::known(2000), Endpoint::unknown()}}};
  const auto go = TemporalGraph::build(open, 2, 1);
  CHECK(go.fact(1).interval.end == Endpoint::unknown());
  CHECK(go.has_unresolved());
}

TEST_CASE("duplicate quadruples are merged and counted") {
  const Quadruple q{0, 0, 1, Interval::span(2000, 2001)};
  const std::vector<Quadruple> facts{q, q, {1, 0, 0, Interval::at(1999)}};
  const auto g = TemporalGraph::build(facts, 2, 1);
  CHECK(g.size() == 4);
  CHECK(g.duplicates_removed() == 1);
}

TEST_CASE("indices agree with a linear scan") {
  std::mt19937_64 rng(11);
  const auto g = testing::random_graph(rng);
  for (EntityId e = 0; e < g.num_entities(); ++e) {
    std::vector<FactIndex> scan;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (g.fact(static_cast<FactIndex>(i)).subject == e) scan.push_back(static_cast<FactIndex>(i));
    std::vector<FactIndex> idx(g.outgoing(e).begin(), g.outgoing(e).end());
    std::sort(idx.begin(), idx.end());
    CHECK(idx == scan);
    for (RelationId r = 0; r < g.num_relations(); ++r)
      for (FactIndex i : g.outgoing(e, r)) CHECK(g.fact(i).relation == r);
  }
}

TEST_CASE("present resolves to the graph's present year") {
  const std::vector<Quadruple> facts{{0, 0, 1, Interval{Endpoint::known(1962), Endpoint::present()}},
                                     {1, 0, 2, Interval::span(1990, 2015)}};
  const auto g = TemporalGraph::build(facts, 3, 1);
  CHECK(g.present_year() == 2015);
  CHECK(g.resolved(0) == ResolvedInterval{1962, 2015});
}

TEST_CASE("time-shift resplit") {
  DatasetSplit d;
  for (int i = 0; i < 10; ++i) {
    d.entities.add("e" + std::to_string(i));
    d.train.push_back({i, 0, (i + 1) % 10, Interval::at(2000 + i)});
  }
  d.entities.add("e10");
  d.relations.add("r");
  SUBCASE("hand count") {
    const auto s = time_shift_resplit(d, 2004, 2007);
    CHECK(s.train.size() == 5);
    CHECK(s.valid.size() == 3);
    CHECK(s.test.size() == 2);
  }
  SUBCASE("missing start goes to train") {
    d.test.push_back({0, 0, 10, Interval{Endpoint::unknown(), Endpoint::known(2009)}});
    const auto s = time_shift_resplit(d, 2004, 2007);
    CHECK(s.train.size() == 6);
  }
  SUBCASE("degenerate boundaries") {
    DatasetSplit same = d;
    for (auto& q : same.train) q.interval = Interval::at(2000);
    const auto s = time_shift_resplit(same, 2000, 2001);
    CHECK(s.train.size() == 10);
    CHECK(s.valid.empty());
    CHECK(s.test.empty());
  }
  CHECK_THROWS_AS(time_shift_resplit(d, 2007, 2007), ContractViolation);
}

TEST_CASE("snapshot round trip") {
  DatasetSplit d;
  d.entities.add("a");
  d.entities.add("b");
  d.relations.add("r");
  d.train = {{0, 0, 1, Interval{Endpoint::known(1962), Endpoint::present()}},
             {1, 0, 0, Interval{Endpoint::unknown(), Endpoint::known(1970)}}};
  const auto g = d.train_graph();
  const auto path = temp_dir("snapshot") / "snap.json";
  save_snapshot(path, g, d.entities, d.relations);
  const auto s = load_snapshot(path);
  REQUIRE(s.graph.size() == g.size());
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(s.graph.fact(static_cast<FactIndex>(i)) == g.fact(static_cast<FactIndex>(i)));
  CHECK(s.entities.names() == d.entities.names());
}

TEST_CASE("reference statistics") {
  const auto w = reference_stats("WIKIDATA12k");
  REQUIRE(w);
  CHECK(w->train == 32497);
  CHECK(w->entities == 12544);
  CHECK(w->relations == 24);
  CHECK(2 * w->train == 64994);
  DatasetSplit tiny;
  CHECK_FALSE(validate_against_reference("WIKIDATA12k", tiny).empty());
  CHECK(validate_against_reference("something-else", tiny).empty());
}

}  // TEST_SUITE
