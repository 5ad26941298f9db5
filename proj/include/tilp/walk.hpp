#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "tilp/graph.hpp"
#include "tilp/rule.hpp"

namespace tilp {

// Per-step constraint checkable without walk history: body predicate plus the
// temporal relation of the step's interval to the query interval.
struct MarkovConstraint {
  RelationId predicate = 0;
  TemporalRelation to_query = TemporalRelation::Touching;

  friend bool operator==(const MarkovConstraint&, const MarkovConstraint&) = default;
  friend auto operator<=>(const MarkovConstraint&, const MarkovConstraint&) = default;
};

// |E| x |E| 0/1 matrix; entry (x, y) is 1 iff some admissible fact runs y -> x.
using StepOperator = Eigen::SparseMatrix<std::int64_t, Eigen::RowMajor>;
// Walk counts over entities; positive entries mark reachable entities.
using IndicatorVector = Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1>;

// Fact indices into the graph, step by step. Consecutive facts are chained
// (object of step i == subject of step i + 1).
using Walk = std::vector<FactIndex>;

StepOperator build_step_operator(const TemporalGraph& graph, MarkovConstraint constraint,
                                 ResolvedInterval query, EdgeId excluded_edge = kNoEdge);

// v_1 = one-hot(start), v_{i+1} = M_i v_i. Returns v_1 .. v_{l+1}.
std::vector<IndicatorVector> propagate(std::span<const StepOperator> operators, EntityId start);

struct EnumerateOptions {
  std::optional<EntityId> target;
  std::size_t max_walks = 0;  // 0: exhaustive
  EdgeId excluded_edge = kNoEdge;
};

struct WalkSet {
  std::vector<Walk> walks;  // sorted, unique
  bool truncated = false;
};

// Reconstructs every walk satisfying the Markovian constraints by backtracking
// from the terminal frontier v_{l+1} towards `start`. Walks that reuse an
// edge_id (an edge and its inverse count as one) are dropped.
WalkSet enumerate_walks(const TemporalGraph& graph, std::span<const MarkovConstraint> steps,
                        ResolvedInterval query, std::span<const IndicatorVector> frontier,
                        EntityId start, const EnumerateOptions& options = {});
WalkSet enumerate_walks(const TemporalGraph& graph, std::span<const MarkovConstraint> steps,
                        ResolvedInterval query, EntityId start, const EnumerateOptions& options = {});

// Required pairwise relations between body intervals, keyed by 0-based (j, k), j < k.
using PairwiseRelations = std::map<std::pair<int, int>, TemporalRelation>;

// Keeps walks whose every body-interval pair matches. Throws ContractViolation
// when a required (j, k) entry is missing.
WalkSet filter_non_markovian(const TemporalGraph& graph, const WalkSet& walks,
                             const PairwiseRelations& pairs);

std::vector<MarkovConstraint> markov_constraints(const RuleTemplate& rule);
PairwiseRelations pairwise_relations(const RuleTemplate& rule);

// Returns false from the visitor to stop early.
using WalkVisitor = std::function<bool(std::span<const FactIndex>)>;

// Evaluates many rules against one query, caching step operators and frontier
// vectors across rules that share constraint prefixes.
class WalkContext {
 public:
  WalkContext(const TemporalGraph& graph, ResolvedInterval query, EntityId start,
              EdgeId excluded_edge = kNoEdge);

  const StepOperator& step_operator(MarkovConstraint constraint);
  // Pointers to v_1 .. v_{l+1}; valid for the context's lifetime.
  std::vector<const IndicatorVector*> frontier(std::span<const MarkovConstraint> steps);

  struct MatchStats {
    std::size_t walks = 0;
    bool truncated = false;
  };
  // Visits every walk satisfying all constraints of `rule` (pairwise checks
  // are applied while backtracking). `max_walks` = 0 means exhaustive.
  MatchStats for_each_match(const RuleTemplate& rule, const WalkVisitor& visit,
                            std::size_t max_walks = 0, std::optional<EntityId> target = {});

  const TemporalGraph& graph() const noexcept { return graph_; }
  ResolvedInterval query() const noexcept { return query_; }
  EntityId start() const noexcept { return start_; }

 private:
  const TemporalGraph& graph_;
  ResolvedInterval query_;
  EntityId start_;
  EdgeId excluded_;
  std::map<MarkovConstraint, StepOperator> operators_;
  std::map<std::vector<MarkovConstraint>, IndicatorVector> frontiers_;
  IndicatorVector origin_;
};

// All walks satisfying `rule` from `start` (Markovian and pairwise constraints).
WalkSet match_rule(const TemporalGraph& graph, const RuleTemplate& rule, ResolvedInterval query,
                   EntityId start, const EnumerateOptions& options = {});

// Every walk of length 1..max_length from `from` to `to` with no repeated
// edge_id and without `excluded_edge`. Unconstrained by predicates or time.
void for_each_path(const TemporalGraph& graph, EntityId from, EntityId to, int max_length,
                   EdgeId excluded_edge, const WalkVisitor& visit);
std::vector<Walk> find_all_paths(const TemporalGraph& graph, EntityId from, EntityId to,
                                 int max_length, EdgeId excluded_edge = kNoEdge);

// Reads off the rule a walk grounds for a query with relation `head` over `query`.
RuleTemplate extract_rule(const TemporalGraph& graph, std::span<const FactIndex> walk,
                          RelationId head, ResolvedInterval query);

// True when `walk` satisfies every constraint of `rule` for the query interval.
bool rule_accepts(const TemporalGraph& graph, const RuleTemplate& rule,
                  std::span<const FactIndex> walk, ResolvedInterval query);

}  // namespace tilp
