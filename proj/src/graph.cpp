#include "tilp/graph.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "tilp/errors.hpp"

namespace tilp {

std::int32_t Vocabulary::add(std::string_view name) {
  std::string key(name);
  if (auto it = index_.find(key); it != index_.end()) return it->second;
  const auto id = static_cast<std::int32_t>(names_.size());
  names_.push_back(key);
  index_.emplace(std::move(key), id);
  return id;
}

std::optional<std::int32_t> Vocabulary::find(std::string_view name) const {
  if (auto it = index_.find(std::string(name)); it != index_.end()) return it->second;
  return std::nullopt;
}

namespace {

void build_csr(std::size_t buckets, std::span<const Fact> facts,
               const std::function<std::int32_t(const Fact&)>& key,
               std::vector<std::int32_t>& offsets, std::vector<FactIndex>& index) {
  offsets.assign(buckets + 1, 0);
  for (const auto& f : facts) ++offsets[static_cast<std::size_t>(key(f)) + 1];
  std::partial_sum(offsets.begin(), offsets.end(), offsets.begin());
  index.assign(facts.size(), 0);
  auto cursor = offsets;
  for (std::size_t i = 0; i < facts.size(); ++i)
    index[static_cast<std::size_t>(cursor[static_cast<std::size_t>(key(facts[i]))]++)] =
        static_cast<FactIndex>(i);
}

}  // namespace

TemporalGraph TemporalGraph::build(std::span<const Quadruple> facts, std::int32_t num_entities,
                                   std::int32_t num_base_relations, const Options& options) {
  TemporalGraph g;
  g.num_entities_ = num_entities;
  g.num_base_relations_ = num_base_relations;

  std::set<Quadruple> seen;
  Year lo = std::numeric_limits<Year>::max();
  Year hi = std::numeric_limits<Year>::min();
  g.facts_.reserve(2 * facts.size());
  for (const auto& q : facts) {
    if (q.subject < 0 || q.subject >= num_entities || q.object < 0 || q.object >= num_entities ||
        q.relation < 0 || q.relation >= num_base_relations)
      throw ContractViolation("build_graph: fact references an id outside the vocabulary");
    if (!seen.insert(q).second) {
      ++g.duplicates_removed_;
      continue;
    }
    const auto edge = static_cast<EdgeId>(g.facts_.size() / 2);
    g.facts_.push_back({q.subject, q.relation, q.object, q.interval, edge});
    g.facts_.push_back({q.object, q.relation + num_base_relations, q.subject, q.interval, edge});
    for (const auto& e : {q.interval.start, q.interval.end}) {
      if (!e.is_known()) continue;
      lo = std::min(lo, e.year);
      hi = std::max(hi, e.year);
    }
  }
  if (lo > hi) lo = hi = 0;
  g.present_year_ = options.present_year.value_or(hi);
  g.min_year_ = options.min_year.value_or(lo);

  g.resolved_.resize(g.facts_.size());
  g.is_resolved_.assign(g.facts_.size(), 0);
  for (std::size_t i = 0; i < g.facts_.size(); ++i) {
    const auto& iv = g.facts_[i].interval;
    if (iv.start.kind == EndpointKind::Unknown || iv.end.kind == EndpointKind::Unknown) {
      ++g.unresolved_count_;
      continue;
    }
    g.resolved_[i] = resolve(iv, g.present_year_);
    g.is_resolved_[i] = 1;
  }

  build_csr(static_cast<std::size_t>(num_entities), g.facts_,
            [](const Fact& f) { return f.subject; }, g.subject_offsets_, g.subject_index_);
  for (std::int32_t e = 0; e < num_entities; ++e) {
    auto first = g.subject_index_.begin() + g.subject_offsets_[static_cast<std::size_t>(e)];
    auto last = g.subject_index_.begin() + g.subject_offsets_[static_cast<std::size_t>(e) + 1];
    std::stable_sort(first, last, [&](FactIndex a, FactIndex b) {
      return g.facts_[static_cast<std::size_t>(a)].relation <
             g.facts_[static_cast<std::size_t>(b)].relation;
    });
  }
  build_csr(static_cast<std::size_t>(g.num_relations()), g.facts_,
            [](const Fact& f) { return f.relation; }, g.relation_offsets_, g.relation_index_);
  return g;
}

std::span<const FactIndex> TemporalGraph::outgoing(EntityId subject) const {
  if (subject < 0 || subject >= num_entities_) return {};
  const auto s = static_cast<std::size_t>(subject);
  return std::span<const FactIndex>(subject_index_)
      .subspan(static_cast<std::size_t>(subject_offsets_[s]),
               static_cast<std::size_t>(subject_offsets_[s + 1] - subject_offsets_[s]));
}

std::span<const FactIndex> TemporalGraph::outgoing(EntityId subject, RelationId relation) const {
  const auto all = outgoing(subject);
  auto rel = [&](FactIndex i) { return facts_[static_cast<std::size_t>(i)].relation; };
  auto first = std::partition_point(all.begin(), all.end(),
                                    [&](FactIndex i) { return rel(i) < relation; });
  auto last = std::partition_point(first, all.end(), [&](FactIndex i) { return rel(i) == relation; });
  return {first, last};
}

std::span<const FactIndex> TemporalGraph::with_relation(RelationId relation) const {
  if (relation < 0 || relation >= num_relations()) return {};
  const auto r = static_cast<std::size_t>(relation);
  return std::span<const FactIndex>(relation_index_)
      .subspan(static_cast<std::size_t>(relation_offsets_[r]),
               static_cast<std::size_t>(relation_offsets_[r + 1] - relation_offsets_[r]));
}

void TemporalGraph::unresolved_error(FactIndex i) const {
  throw ContractViolation("fact " + std::to_string(i) + " has an unknown endpoint " +
                          to_string(facts_[static_cast<std::size_t>(i)].interval) +
                          " and no imputation was applied");
}

TemporalGraph TemporalGraph::with_resolution(const IntervalResolver& resolver) const {
  TemporalGraph g = *this;
  for (std::size_t i = 0; i < g.facts_.size(); i += 2) {
    if (g.is_resolved_[i]) continue;
    // The inverse partner shares the interval and gets the same resolution.
    const auto r = resolver(g.facts_[i]);
    g.resolved_[i] = g.resolved_[i + 1] = r;
    g.is_resolved_[i] = g.is_resolved_[i + 1] = 1;
  }
  g.unresolved_count_ = 0;
  return g;
}

std::vector<Quadruple> TemporalGraph::base_facts() const {
  std::vector<Quadruple> out;
  out.reserve(facts_.size() / 2);
  for (std::size_t i = 0; i < facts_.size(); i += 2) {
    const auto& f = facts_[i];
    out.push_back({f.subject, f.relation, f.object, f.interval});
  }
  return out;
}

}  // namespace tilp
