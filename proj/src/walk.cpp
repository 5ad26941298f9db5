#include "tilp/walk.hpp"

#include <algorithm>
#include <deque>
#include <limits>

#include "tilp/errors.hpp"

namespace tilp {

StepOperator build_step_operator(const TemporalGraph& graph, MarkovConstraint constraint,
                                 ResolvedInterval query, EdgeId excluded_edge) {
  using Triplet = Eigen::Triplet<std::int64_t>;
  std::vector<Triplet> entries;
  for (FactIndex i : graph.with_relation(constraint.predicate)) {
    const auto& f = graph.fact(i);
    if (f.edge_id == excluded_edge) continue;
    if (temporal_relation(graph.resolved(i), query) != constraint.to_query) continue;
    entries.emplace_back(f.object, f.subject, 1);
  }
  StepOperator m(graph.num_entities(), graph.num_entities());
  m.setFromTriplets(entries.begin(), entries.end(),
                    [](const std::int64_t& a, const std::int64_t& b) { return std::max(a, b); });
  return m;
}

std::vector<IndicatorVector> propagate(std::span<const StepOperator> operators, EntityId start) {
  if (operators.empty()) throw ContractViolation("propagate: no step operators");
  const auto n = operators.front().cols();
  std::vector<IndicatorVector> v;
  v.reserve(operators.size() + 1);
  v.push_back(IndicatorVector::Zero(n));
  v.back()(start) = 1;
  for (const auto& m : operators) v.push_back(m * v.back());
  return v;
}

namespace {

// Backward reconstruction shared by enumerate_walks and WalkContext.
class Backtracker {
 public:
  Backtracker(const TemporalGraph& graph, std::span<const MarkovConstraint> steps,
              ResolvedInterval query, std::span<const IndicatorVector* const> frontier,
              EdgeId excluded, const RuleTemplate* pairwise, std::size_t max_walks,
              const WalkVisitor& visit)
      : graph_(graph),
        steps_(steps),
        query_(query),
        frontier_(frontier),
        excluded_(excluded),
        pairwise_(pairwise),
        max_walks_(max_walks),
        visit_(visit),
        chosen_(steps.size()),
        chosen_edges_(steps.size()),
        chosen_intervals_(steps.size()) {
    if (pairwise_) {
      const int l = static_cast<int>(steps.size());
      pair_table_.resize(steps.size() * steps.size());
      for (int j = 0; j < l; ++j)
        for (int k = j + 1; k < l; ++k)
          pair_table_[static_cast<std::size_t>(j * l + k)] =
              pairwise_->pair_relations[RuleTemplate::pair_index(j, k, l)];
    }
  }

  WalkContext::MatchStats run(std::optional<EntityId> target) {
    const auto& last = *frontier_.back();
    if (target) {
      if (*target >= 0 && *target < last.size() && last(*target) > 0) descend(steps_.size(), *target);
    } else {
      for (Eigen::Index x = 0; x < last.size() && !stopped_; ++x)
        if (last(x) > 0) descend(steps_.size(), static_cast<EntityId>(x));
    }
    return stats_;
  }

 private:
  // `remaining` steps still to fill (indices remaining-1 .. 0); `at` is the
  // entity reached after step `remaining`.
  void descend(std::size_t remaining, EntityId at) {
    if (stopped_) return;
    if (remaining == 0) {
      if (max_walks_ && stats_.walks == max_walks_) {
        stats_.truncated = true;
        stopped_ = true;
        return;
      }
      ++stats_.walks;
      if (!visit_(chosen_)) stopped_ = true;
      return;
    }
    const std::size_t i = remaining - 1;
    const auto& step = steps_[i];
    const auto& before = *frontier_[i];
    // Facts y -> at with relation P are the partners of facts at -> y with P^-1.
    for (FactIndex inv : graph_.outgoing(at, graph_.inverse(step.predicate))) {
      const FactIndex fi = TemporalGraph::partner(inv);
      const auto& f = graph_.fact(fi);
      if (before(f.subject) <= 0 || f.edge_id == excluded_) continue;
      const auto iv = graph_.resolved(fi);
      if (temporal_relation(iv, query_) != step.to_query) continue;
      if (!compatible(i, f.edge_id, iv)) continue;
      chosen_[i] = fi;
      chosen_edges_[i] = f.edge_id;
      chosen_intervals_[i] = iv;
      descend(i, f.subject);
      if (stopped_) return;
    }
  }

  bool compatible(std::size_t i, EdgeId edge, ResolvedInterval iv) const {
    const std::size_t l = steps_.size();
    for (std::size_t k = i + 1; k < l; ++k) {
      if (chosen_edges_[k] == edge) return false;
      if (pairwise_ && temporal_relation(iv, chosen_intervals_[k]) != pair_table_[i * l + k]) return false;
    }
    return true;
  }

  const TemporalGraph& graph_;
  std::span<const MarkovConstraint> steps_;
  ResolvedInterval query_;
  std::span<const IndicatorVector* const> frontier_;
  EdgeId excluded_;
  const RuleTemplate* pairwise_;
  std::size_t max_walks_;
  const WalkVisitor& visit_;
  std::vector<TemporalRelation> pair_table_;  // (j, k) at j * l + k
  std::vector<FactIndex> chosen_;
  std::vector<EdgeId> chosen_edges_;
  std::vector<ResolvedInterval> chosen_intervals_;
  WalkContext::MatchStats stats_;
  bool stopped_ = false;
};

WalkSet collect(const std::function<WalkContext::MatchStats(const WalkVisitor&)>& run) {
  WalkSet out;
  const auto stats = run([&](std::span<const FactIndex> w) {
    out.walks.emplace_back(w.begin(), w.end());
    return true;
  });
  out.truncated = stats.truncated;
  std::sort(out.walks.begin(), out.walks.end());
  return out;
}

}  // namespace

WalkSet enumerate_walks(const TemporalGraph& graph, std::span<const MarkovConstraint> steps,
                        ResolvedInterval query, std::span<const IndicatorVector> frontier,
                        EntityId start, const EnumerateOptions& options) {
  if (frontier.size() != steps.size() + 1)
    throw ContractViolation("enumerate_walks: frontier must hold l + 1 indicator vectors");
  if (frontier.front()(start) <= 0)
    throw ContractViolation("enumerate_walks: frontier does not originate at the start entity");
  std::vector<const IndicatorVector*> ptrs;
  for (const auto& v : frontier) ptrs.push_back(&v);
  return collect([&](const WalkVisitor& visit) {
    return Backtracker(graph, steps, query, ptrs, options.excluded_edge, nullptr, options.max_walks,
                       visit)
        .run(options.target);
  });
}

WalkSet enumerate_walks(const TemporalGraph& graph, std::span<const MarkovConstraint> steps,
                        ResolvedInterval query, EntityId start, const EnumerateOptions& options) {
  std::vector<StepOperator> ops;
  for (const auto& c : steps) ops.push_back(build_step_operator(graph, c, query, options.excluded_edge));
  const auto frontier = propagate(ops, start);
  return enumerate_walks(graph, steps, query, frontier, start, options);
}

WalkSet filter_non_markovian(const TemporalGraph& graph, const WalkSet& walks,
                             const PairwiseRelations& pairs) {
  WalkSet out;
  out.truncated = walks.truncated;
  if (walks.walks.empty()) return out;
  // Dense (j, k) table for the walk length at hand; lengths can differ within a set.
  std::size_t table_len = 0;
  std::vector<TemporalRelation> table;
  std::vector<ResolvedInterval> iv;
  for (const auto& w : walks.walks) {
    const std::size_t l = w.size();
    if (l != table_len) {
      table.assign(l * l, TemporalRelation::Touching);
      for (std::size_t j = 0; j + 1 < l; ++j)
        for (std::size_t k = j + 1; k < l; ++k) {
          auto it = pairs.find({static_cast<int>(j), static_cast<int>(k)});
          if (it == pairs.end())
            throw ContractViolation("filter_non_markovian: missing pairwise relation (" +
                                    std::to_string(j + 1) + "," + std::to_string(k + 1) + ")");
          table[j * l + k] = it->second;
        }
      table_len = l;
    }
    iv.clear();
    for (FactIndex f : w) iv.push_back(graph.resolved(f));
    bool keep = true;
    for (std::size_t j = 0; j + 1 < l && keep; ++j)
      for (std::size_t k = j + 1; k < l && keep; ++k)
        keep = temporal_relation(iv[j], iv[k]) == table[j * l + k];
    if (keep) out.walks.push_back(w);
  }
  return out;
}

std::vector<MarkovConstraint> markov_constraints(const RuleTemplate& rule) {
  std::vector<MarkovConstraint> out;
  for (int i = 0; i < rule.length(); ++i)
    out.push_back({rule.predicates[static_cast<std::size_t>(i)],
                   rule.query_relations[static_cast<std::size_t>(i)]});
  return out;
}

PairwiseRelations pairwise_relations(const RuleTemplate& rule) {
  PairwiseRelations out;
  for (int j = 0; j < rule.length(); ++j)
    for (int k = j + 1; k < rule.length(); ++k) out[{j, k}] = rule.pair(j, k);
  return out;
}

WalkContext::WalkContext(const TemporalGraph& graph, ResolvedInterval query, EntityId start,
                         EdgeId excluded_edge)
    : graph_(graph), query_(query), start_(start), excluded_(excluded_edge) {
  origin_ = IndicatorVector::Zero(graph.num_entities());
  if (start >= 0 && start < graph.num_entities()) origin_(start) = 1;
}

const StepOperator& WalkContext::step_operator(MarkovConstraint constraint) {
  auto it = operators_.find(constraint);
  if (it == operators_.end())
    it = operators_.emplace(constraint, build_step_operator(graph_, constraint, query_, excluded_)).first;
  return it->second;
}

std::vector<const IndicatorVector*> WalkContext::frontier(std::span<const MarkovConstraint> steps) {
  std::vector<const IndicatorVector*> out{&origin_};
  std::vector<MarkovConstraint> prefix;
  for (const auto& c : steps) {
    prefix.push_back(c);
    auto it = frontiers_.find(prefix);
    if (it == frontiers_.end()) {
      IndicatorVector next = out.back()->isZero() ? IndicatorVector::Zero(origin_.size())
                                                  : IndicatorVector(step_operator(c) * *out.back());
      it = frontiers_.emplace(prefix, std::move(next)).first;
    }
    out.push_back(&it->second);
  }
  return out;
}

WalkContext::MatchStats WalkContext::for_each_match(const RuleTemplate& rule, const WalkVisitor& visit,
                                                    std::size_t max_walks,
                                                    std::optional<EntityId> target) {
  const auto steps = markov_constraints(rule);
  const auto front = frontier(steps);
  if (front.back()->isZero()) return {};
  return Backtracker(graph_, steps, query_, front, excluded_, &rule, max_walks, visit).run(target);
}

WalkSet match_rule(const TemporalGraph& graph, const RuleTemplate& rule, ResolvedInterval query,
                   EntityId start, const EnumerateOptions& options) {
  WalkContext ctx(graph, query, start, options.excluded_edge);
  return collect([&](const WalkVisitor& visit) {
    return ctx.for_each_match(rule, visit, options.max_walks, options.target);
  });
}

void for_each_path(const TemporalGraph& graph, EntityId from, EntityId to, int max_length,
                   EdgeId excluded_edge, const WalkVisitor& visit) {
  if (max_length < 1 || from < 0 || to < 0 || from >= graph.num_entities() ||
      to >= graph.num_entities())
    return;
  // Every edge has an inverse, so hop distance to `to` equals distance from it.
  constexpr int kFar = std::numeric_limits<int>::max() / 2;
  std::vector<int> dist(static_cast<std::size_t>(graph.num_entities()), kFar);
  std::deque<EntityId> queue{to};
  dist[static_cast<std::size_t>(to)] = 0;
  while (!queue.empty()) {
    const auto x = queue.front();
    queue.pop_front();
    const int dx = dist[static_cast<std::size_t>(x)];
    if (dx >= max_length) continue;
    for (FactIndex i : graph.outgoing(x)) {
      const auto& f = graph.fact(i);
      if (f.edge_id == excluded_edge) continue;
      auto& dy = dist[static_cast<std::size_t>(f.object)];
      if (dy == kFar) {
        dy = dx + 1;
        queue.push_back(f.object);
      }
    }
  }

  std::vector<FactIndex> path;
  std::vector<EdgeId> used;
  bool stopped = false;
  std::function<void(EntityId)> dfs = [&](EntityId x) {
    const int depth = static_cast<int>(path.size());
    if (depth > 0 && x == to && !visit(path)) {
      stopped = true;
      return;
    }
    if (depth == max_length) return;
    for (FactIndex i : graph.outgoing(x)) {
      const auto& f = graph.fact(i);
      if (f.edge_id == excluded_edge) continue;
      if (dist[static_cast<std::size_t>(f.object)] > max_length - depth - 1) continue;
      if (std::find(used.begin(), used.end(), f.edge_id) != used.end()) continue;
      path.push_back(i);
      used.push_back(f.edge_id);
      dfs(f.object);
      path.pop_back();
      used.pop_back();
      if (stopped) return;
    }
  };
  dfs(from);
}

std::vector<Walk> find_all_paths(const TemporalGraph& graph, EntityId from, EntityId to,
                                 int max_length, EdgeId excluded_edge) {
  std::vector<Walk> out;
  for_each_path(graph, from, to, max_length, excluded_edge, [&](std::span<const FactIndex> w) {
    out.emplace_back(w.begin(), w.end());
    return true;
  });
  std::sort(out.begin(), out.end());
  return out;
}

RuleTemplate extract_rule(const TemporalGraph& graph, std::span<const FactIndex> walk,
                          RelationId head, ResolvedInterval query) {
  RuleTemplate rule;
  rule.head = head;
  const int l = static_cast<int>(walk.size());
  std::vector<ResolvedInterval> iv;
  for (FactIndex i : walk) {
    rule.predicates.push_back(graph.fact(i).relation);
    iv.push_back(graph.resolved(i));
    rule.query_relations.push_back(temporal_relation(iv.back(), query));
  }
  for (int j = 0; j < l; ++j)
    for (int k = j + 1; k < l; ++k)
      rule.pair_relations.push_back(
          temporal_relation(iv[static_cast<std::size_t>(j)], iv[static_cast<std::size_t>(k)]));
  return rule;
}

bool rule_accepts(const TemporalGraph& graph, const RuleTemplate& rule,
                  std::span<const FactIndex> walk, ResolvedInterval query) {
  if (static_cast<int>(walk.size()) != rule.length()) return false;
  for (std::size_t i = 0; i + 1 < walk.size(); ++i)
    if (graph.fact(walk[i]).object != graph.fact(walk[i + 1]).subject) return false;
  for (std::size_t i = 0; i < walk.size(); ++i)
    for (std::size_t k = i + 1; k < walk.size(); ++k)
      if (graph.fact(walk[i]).edge_id == graph.fact(walk[k]).edge_id) return false;
  return extract_rule(graph, walk, rule.head, query) == rule;
}

}  // namespace tilp
