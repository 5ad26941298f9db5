#pragma once

// Fixtures and brute-force oracles shared by the unit tests and the
// acceptance runner. Nothing here calls into the walk engine.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "tilp/graph.hpp"
#include "tilp/rule.hpp"

namespace tilp::testing {

// Interval comparison written from the endpoint case analysis, independent of
// the library's temporal_relation.
inline TemporalRelation oracle_relation(ResolvedInterval a, ResolvedInterval b) {
  const bool ends_before = a.end < b.start;
  const bool starts_after = a.start > b.end;
  if (ends_before) return TemporalRelation::Before;
  if (starts_after) return TemporalRelation::After;
  return TemporalRelation::Touching;
}

struct RandomGraphSpec {
  int max_entities = 50;
  int max_facts = 300;
  int base_relations = 2;
  Year first_year = 1990;
  Year last_year = 2010;
};

inline TemporalGraph random_graph(std::mt19937_64& rng, const RandomGraphSpec& spec = {}) {
  std::uniform_int_distribution<int> n_ent(2, spec.max_entities);
  const int ne = n_ent(rng);
  std::uniform_int_distribution<int> n_facts(1, spec.max_facts);
  const int nf = n_facts(rng);
  std::uniform_int_distribution<int> ent(0, ne - 1), rel(0, spec.base_relations - 1);
  std::uniform_int_distribution<Year> year(spec.first_year, spec.last_year), len(0, 4);
  std::vector<Quadruple> facts;
  for (int i = 0; i < nf; ++i) {
    const Year s = year(rng);
    facts.push_back({ent(rng), rel(rng), ent(rng), Interval::span(s, s + len(rng))});
  }
  return TemporalGraph::build(facts, ne, spec.base_relations);
}

// Calls visit(walk) for every walk of 1..max_len steps from `start` without a
// repeated edge id, found by scanning the whole fact list at each step. Walks
// come out in lexicographic order.
template <typename F>
void for_each_brute_force_walk(const TemporalGraph& g, EntityId start, int max_len, F&& visit) {
  std::vector<FactIndex> walk;
  auto rec = [&](auto&& self, EntityId at) -> void {
    if (!walk.empty()) visit(static_cast<const std::vector<FactIndex>&>(walk));
    if (static_cast<int>(walk.size()) == max_len) return;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto& f = g.fact(static_cast<FactIndex>(i));
      if (f.subject != at) continue;
      bool reused = false;
      for (FactIndex w : walk) reused = reused || g.fact(w).edge_id == f.edge_id;
      if (reused) continue;
      walk.push_back(static_cast<FactIndex>(i));
      self(self, f.object);
      walk.pop_back();
    }
  };
  rec(rec, start);
}

inline void brute_force_walks(const TemporalGraph& g, EntityId start, int max_len,
                              std::vector<std::vector<FactIndex>>& out) {
  for_each_brute_force_walk(g, start, max_len, [&](const std::vector<FactIndex>& w) { out.push_back(w); });
}

// The template a walk grounds, computed with oracle_relation, written into `r`.
inline void oracle_template(const TemporalGraph& g, const std::vector<FactIndex>& walk, RelationId head,
                            ResolvedInterval query, RuleTemplate& r) {
  r.head = head;
  r.predicates.clear();
  r.query_relations.clear();
  r.pair_relations.clear();
  const int l = static_cast<int>(walk.size());
  for (FactIndex i : walk) {
    r.predicates.push_back(g.fact(i).relation);
    r.query_relations.push_back(oracle_relation(g.resolved(i), query));
  }
  for (int j = 0; j < l; ++j)
    for (int k = j + 1; k < l; ++k)
      r.pair_relations.push_back(oracle_relation(g.resolved(walk[static_cast<std::size_t>(j)]),
                                                 g.resolved(walk[static_cast<std::size_t>(k)])));
}

inline RuleTemplate oracle_template(const TemporalGraph& g, const std::vector<FactIndex>& walk,
                                    RelationId head, ResolvedInterval query) {
  RuleTemplate r;
  oracle_template(g, walk, head, query, r);
  return r;
}

// Walks grouped by the template they satisfy; a walk satisfies exactly one.
inline std::map<RuleTemplate, std::set<std::vector<FactIndex>>> oracle_matches(
    const TemporalGraph& g, EntityId start, int max_len, RelationId head, ResolvedInterval query) {
  // Bucket on a packed code first (a byte per predicate, two bits per relation
  // class); the ordered map is built once at the end.
  std::unordered_map<std::uint64_t, std::pair<RuleTemplate, std::set<std::vector<FactIndex>>>> buckets;
  RuleTemplate r;
  for_each_brute_force_walk(g, start, max_len, [&](const std::vector<FactIndex>& w) {
    oracle_template(g, w, head, query, r);
    std::uint64_t code = r.predicates.size();
    for (RelationId p : r.predicates) code = (code << 8) | static_cast<std::uint64_t>(p & 0xff);
    for (auto t : r.query_relations) code = (code << 2) | static_cast<std::uint64_t>(t);
    for (auto t : r.pair_relations) code = (code << 2) | static_cast<std::uint64_t>(t);
    auto& bucket = buckets[code];
    if (bucket.second.empty()) bucket.first = r;
    // Lexicographic arrival makes appending at the end exact.
    bucket.second.insert(bucket.second.end(), w);
  });
  std::map<RuleTemplate, std::set<std::vector<FactIndex>>> out;
  for (auto& [code, bucket] : buckets) out.emplace(std::move(bucket.first), std::move(bucket.second));
  return out;
}

// Packed template key: length, a byte per predicate and two bits per query
// relation, then the pairwise assignment as a base-3 number (first pair least
// significant) in the low byte. Lengths up to 3, predicates below 256.
inline std::uint64_t template_key(const RuleTemplate& r) {
  std::uint64_t key = r.predicates.size();
  for (RelationId p : r.predicates) key = (key << 8) | static_cast<std::uint64_t>(p & 0xff);
  for (auto t : r.query_relations) key = (key << 2) | static_cast<std::uint64_t>(t);
  std::uint64_t code = 0;
  for (auto it = r.pair_relations.rbegin(); it != r.pair_relations.rend(); ++it)
    code = 3 * code + static_cast<std::uint64_t>(*it);
  return (key << 8) | code;
}

using FlatWalk = std::array<FactIndex, 3>;  // unused slots hold -1

inline FlatWalk flat_walk(std::span<const FactIndex> w) {
  FlatWalk f;
  f.fill(-1);
  std::copy(w.begin(), w.end(), f.begin());
  return f;
}

// The same grouping as oracle_matches, stored flat for large walk counts:
// (key, walk) pairs sorted by key then walk.
struct FlatOracle {
  std::vector<std::pair<std::uint64_t, FlatWalk>> walks;
  std::map<std::uint64_t, RuleTemplate> templates;

  std::span<const std::pair<std::uint64_t, FlatWalk>> of(std::uint64_t key) const {
    const auto lo = std::lower_bound(walks.begin(), walks.end(), key,
                                     [](const auto& e, std::uint64_t k) { return e.first < k; });
    auto hi = lo;
    while (hi != walks.end() && hi->first == key) ++hi;
    return {lo, hi};
  }
};

inline FlatOracle flat_oracle(const TemporalGraph& g, EntityId start, int max_len, RelationId head,
                              ResolvedInterval query) {
  if (max_len > 3) throw std::invalid_argument("flat_oracle: walks longer than 3");
  FlatOracle out;
  RuleTemplate r;
  for_each_brute_force_walk(g, start, max_len, [&](const std::vector<FactIndex>& w) {
    oracle_template(g, w, head, query, r);
    const auto key = template_key(r);
    if (!out.templates.contains(key)) out.templates.emplace(key, r);
    out.walks.emplace_back(key, flat_walk(w));
  });
  std::sort(out.walks.begin(), out.walks.end());
  return out;
}

// Calls f(template) for every template of the given length over `num_relations`
// predicates (all query and pairwise relation assignments).
template <typename F>
void for_each_template(int length, int num_relations, RelationId head, F&& f) {
  RuleTemplate r;
  r.head = head;
  r.predicates.assign(static_cast<std::size_t>(length), 0);
  r.query_relations.assign(static_cast<std::size_t>(length), TemporalRelation::Before);
  r.pair_relations.assign(RuleTemplate::num_pairs(length), TemporalRelation::Before);
  std::vector<int> digits;
  std::vector<int> radix;
  for (int i = 0; i < length; ++i) radix.push_back(num_relations);
  for (int i = 0; i < length; ++i) radix.push_back(3);
  for (std::size_t i = 0; i < r.pair_relations.size(); ++i) radix.push_back(3);
  digits.assign(radix.size(), 0);
  while (true) {
    std::size_t at = 0;
    for (auto& p : r.predicates) p = digits[at++];
    for (auto& t : r.query_relations) t = static_cast<TemporalRelation>(digits[at++]);
    for (auto& t : r.pair_relations) t = static_cast<TemporalRelation>(digits[at++]);
    f(static_cast<const RuleTemplate&>(r));
    std::size_t i = 0;
    while (i < digits.size() && ++digits[i] == radix[i]) digits[i++] = 0;
    if (i == digits.size()) return;
  }
}

}  // namespace tilp::testing
