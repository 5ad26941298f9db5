#include <doctest.h>

#include "tilp/errors.hpp"
#include "tilp/ranker.hpp"

using namespace tilp;
using TR = TemporalRelation;

namespace {

Query query(EntityId s, RelationId r, ResolvedInterval iv, std::optional<EntityId> answer = {}) {
  Query q;
  q.subject = s;
  q.relation = r;
  q.interval = iv;
  q.answer = answer;
  return q;
}

// 0 -r0-> {1, 2}, then 1 -r1-> 3 three times and 2 -r1-> 4 once (all before 2010).
TemporalGraph four_walk_graph() {
  const std::vector<Quadruple> facts{{0, 0, 1, Interval::at(2000)}, {0, 0, 2, Interval::at(2000)},
                                     {1, 1, 3, Interval::at(2001)}, {1, 1, 3, Interval::at(2002)},
                                     {1, 1, 3, Interval::at(2003)}, {2, 1, 4, Interval::at(2001)}};
  return TemporalGraph::build(facts, 5, 3);
}

}  // namespace

TEST_SUITE("ranker-eval") {

TEST_CASE("arriving rates") {
  const auto g = four_walk_graph();
  SUBCASE("single walk") {
    const std::vector<RuleTemplate> rules{{2, {1}, {TR::Before}, {}}};
    const auto app = apply_rules(g, query(3, 2, {2010, 2010}), std::span<const RuleTemplate>(rules));
    CHECK(app.results.empty());
    const auto a2 = apply_rules(g, query(2, 2, {2010, 2010}), std::span<const RuleTemplate>(rules));
    REQUIRE(a2.results.size() == 1);
    CHECK(a2.results[0].rate(4) == 1.0);
  }
  SUBCASE("three of four walks reach one candidate") {
    const std::vector<RuleTemplate> rules{{2, {0, 1}, {TR::Before, TR::Before}, {TR::Before}}};
    const auto app = apply_rules(g, query(0, 2, {2010, 2010}), std::span<const RuleTemplate>(rules));
    REQUIRE(app.results.size() == 1);
    CHECK(app.results[0].total == 4);
    CHECK(app.results[0].rate(3) == doctest::Approx(0.75));
    CHECK(app.results[0].rate(4) == doctest::Approx(0.25));
    CHECK(app.results[0].rate(0) == 0.0);
    CHECK(app.results[0].groundings.at(3).size() == 3);
  }
  SUBCASE("no temporal match") {
    const std::vector<RuleTemplate> rules{{2, {0, 1}, {TR::Before, TR::Before}, {TR::Before}}};
    const auto app = apply_rules(g, query(0, 2, {1990, 1990}), std::span<const RuleTemplate>(rules));
    CHECK(app.results.empty());
  }
  SUBCASE("walk evidence covers both walks") {
    // Two rule walks to candidate 3 through different edges.
    const std::vector<RuleTemplate> rules{{2, {0, 1}, {TR::Before, TR::Before}, {TR::Before}}};
    const auto app = apply_rules(g, query(0, 2, {2010, 2010}), std::span<const RuleTemplate>(rules));
    const auto& part = app.walk_evidence.at(3);
    CHECK(part.relations == std::vector<RelationId>{0, 1});
    // The closest start of r1 to 2010 is 2003.
    CHECK(part.closest_start[1] == 2003);
  }
}

TEST_CASE("rule-score aggregation") {
  QueryApplication app;
  app.results.push_back({0, 2, {{5, 1}, {6, 1}}, {}, false});
  app.results.push_back({1, 1, {{5, 1}}, {}, false});
  const std::vector<double> scores{0.2, 0.1};
  const auto s = phi_tlr(app, scores);
  CHECK(s.at(5) == doctest::Approx(0.2));
  CHECK(s.at(6) == doctest::Approx(0.1));
  CHECK_FALSE(s.contains(7));
  QueryApplication single;
  single.results.push_back({0, 1, {{3, 1}}, {}, false});
  const std::vector<double> one{0.37};
  CHECK(phi_tlr(single, one).at(3) == doctest::Approx(0.37));
}

TEST_CASE("time-aware filter") {
  const std::vector<Quadruple> facts{{0, 0, 1, Interval::span(2000, 2005)},
                                     {0, 0, 2, Interval::span(1980, 1985)},
                                     {0, 0, 3, Interval::span(2003, 2004)}};
  const auto known = TemporalGraph::build(facts, 5, 1);
  const std::vector<EntityId> all{1, 2, 3, 4};
  CHECK(time_aware_filter(known, query(4, 0, {2000, 2005}, 0), all) == all);
  const auto kept = time_aware_filter(known, query(0, 0, {2000, 2005}, 3), all);
  // 1 overlaps and is removed; 2 is disjoint in time and stays; 3 is the answer.
  CHECK(kept == std::vector<EntityId>{2, 3, 4});
}

TEST_CASE("ranks and metrics on a hand fixture") {
  // Five queries over five entities; truth marked by index.
  struct Q {
    std::vector<double> scores;
    EntityId truth;
    double rank;
  };
  const std::vector<Q> qs{
      {{0.9, 0.1, 0.0, 0.0, 0.0}, 0, 1.0},
      {{0.5, 0.9, 0.1, 0.7, 0.0}, 0, 3.0},
      {{0.8, 0.8, 0.1, 0.0, 0.0}, 1, 1.5},
      {{0.0, 0.0, 0.0, 0.0, 0.0}, 2, 3.0},
      {{0.3, 0.3, 0.3, 0.9, 0.0}, 2, 3.0},
  };
  std::vector<double> ranks;
  for (const auto& q : qs) {
    ranks.push_back(rank_of_truth(q.scores, q.truth));
    CHECK(ranks.back() == q.rank);
  }
  const auto m = metrics(ranks);
  CHECK(m.mrr == doctest::Approx((1.0 + 1.0 / 3 + 2.0 / 3 + 1.0 / 3 + 1.0 / 3) / 5));
  CHECK(m.hit1 == doctest::Approx(0.2));
  CHECK(m.hit10 == doctest::Approx(1.0));
  CHECK(m.count == 5);

  const std::vector<double> spread{1, 4, 20};
  const auto m2 = metrics(spread);
  CHECK(m2.mrr == doctest::Approx(0.4333).epsilon(1e-4));
  CHECK(m2.hit10 == doctest::Approx(2.0 / 3));
  const std::vector<double> top{1, 1, 1};
  CHECK(metrics(top).mrr == 1.0);
  CHECK(metrics(top).hit1 == 1.0);

  // Filtering removes a competitor from the count.
  const std::vector<double> s{0.9, 0.5, 0.1};
  const std::vector<char> mask{1, 0, 0};
  CHECK(rank_of_truth(s, 1, &mask) == 1.0);
  CHECK_THROWS_AS(rank_of_truth(s, 7), ContractViolation);
}

TEST_CASE("model scoring and explanations") {
  const auto g = four_walk_graph();
  Vocabulary ents, rels;
  for (int i = 0; i < 5; ++i) ents.add("e" + std::to_string(i));
  for (const char* r : {"first", "second", "target"}) rels.add(r);

  TilpModel m;
  m.use_tfm = false;
  m.attention = AttentionModel::zeros(6, 2, 2);
  m.rules[2] = {{{2, {0, 1}, {TR::Before, TR::Before}, {TR::Before}}, 4}};
  m.weights = TfmWeights::initial(6);
  m.refresh_rule_scores();
  REQUIRE(m.scores_for(2).size() == 1);

  const auto sq = score_query(g, m, query(0, 2, {2010, 2010}, 3));
  REQUIRE(sq.candidates.size() == 2);
  CHECK(sq.candidates[0].entity == 3);
  CHECK(sq.candidates[0].score == doctest::Approx(0.75 * m.scores_for(2)[0]));
  const auto dense = sq.dense(g.num_entities());
  CHECK(rank_of_truth(dense, 3) == 1.0);

  const auto ex = explain_candidate(m, sq, 3);
  REQUIRE(ex.size() == 1);
  REQUIRE(ex[0].grounding);
  CHECK(render_grounding(g, *ex[0].grounding, ents, rels).starts_with("(e0, first, e1, [2000, 2000]) ^ (e1, second, e3, "));
  const auto j = ranking_json(g, m, sq, 1.0, ents, rels);
  CHECK(j["candidates"][0]["entity"] == "e3");
  CHECK(j["candidates"][0]["explanations"][0]["rule"].get<std::string>().starts_with("target(E1,E3,I3) <- first(E1,E2,I1)"));
  CHECK(j["truth_rank"] == 1.0);
}

TEST_CASE("candidate universe") {
  const auto g = four_walk_graph();
  QueryApplication app;
  app.results.push_back({0, 1, {{4, 1}}, {}, false});
  // Subject 1 has facts with 0 (inverse) and 3.
  auto u = candidate_universe(g, query(1, 2, {2010, 2010}, 2), app, {});
  CHECK(u == std::vector<EntityId>{0, 3, 4});
  ScoringOptions train;
  train.include_answer = true;
  u = candidate_universe(g, query(1, 2, {2010, 2010}, 2), app, train);
  CHECK(u == std::vector<EntityId>{0, 2, 3, 4});
  ScoringOptions all;
  all.exhaustive = true;
  CHECK(candidate_universe(g, query(1, 2, {2010, 2010}), app, all).size() == 5);
}

}  // TEST_SUITE
