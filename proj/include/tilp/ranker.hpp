#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tilp/learner.hpp"
#include "tilp/rule.hpp"
#include "tilp/tfm.hpp"
#include "tilp/walk.hpp"

namespace tilp {

// ---- rule application -----------------------------------------------------

struct ApplyOptions {
  std::size_t max_walks = 0;   // per rule; 0 = exhaustive
  std::size_t groundings = 3;  // walks kept per (rule, candidate) for explanations
  bool walk_evidence = true;   // collect tfm part-3 evidence per candidate
};

// One rule applied to one query: N walks in total, N_c of them ending at c.
struct RuleApplicationResult {
  std::size_t rule = 0;  // index into the applied rule list
  std::size_t total = 0;
  std::vector<std::pair<EntityId, std::size_t>> counts;  // sorted by entity
  std::map<EntityId, std::vector<Walk>> groundings;
  bool truncated = false;

  double rate(EntityId c) const;
};

struct QueryApplication {
  std::vector<RuleApplicationResult> results;  // rules with N > 0 only
  std::map<EntityId, EvidencePart> walk_evidence;
  bool truncated = false;
};

QueryApplication apply_rules(const TemporalGraph& graph, const Query& query,
                             std::span<const RuleTemplate> rules, const ApplyOptions& options = {});
QueryApplication apply_rules(const TemporalGraph& graph, const Query& query,
                             std::span<const LearnedRule> rules, const ApplyOptions& options = {});

// phi_TLR(c) = sum over rules of alpha_c(rule) * score(rule).
std::map<EntityId, double> phi_tlr(const QueryApplication& app, std::span<const double> rule_scores);

// ---- ranking --------------------------------------------------------------

// Candidates c != answer with a known (subject, relation, c, I') overlapping
// the query interval. `known` is the resolved graph over every split.
std::vector<char> time_aware_mask(const TemporalGraph& known, const Query& query);
std::vector<EntityId> time_aware_filter(const TemporalGraph& known, const Query& query,
                                        std::span<const EntityId> candidates);

// 1 + #(higher) + #(tied others) / 2 over every entity not masked out.
double rank_of_truth(std::span<const double> scores, EntityId truth,
                     const std::vector<char>* filtered = nullptr);

struct Metrics {
  double mrr = 0.0;
  double hit1 = 0.0;
  double hit10 = 0.0;
  std::size_t count = 0;
};
Metrics metrics(std::span<const double> ranks);

// ---- full model -----------------------------------------------------------

struct TilpModel {
  RuleSet rules;
  AttentionModel attention;
  DistributionParams distributions;
  TfmWeights weights;
  bool use_tfm = true;

  // rule_scores[head][i] = score of rules[head][i] under the attention model.
  std::map<RelationId, std::vector<double>> rule_scores;
  void refresh_rule_scores();
  std::span<const LearnedRule> rules_for(RelationId head) const;
  std::span<const double> scores_for(RelationId head) const;
};

struct ScoringOptions {
  ApplyOptions apply;
  bool exhaustive = false;     // score every entity instead of the reachable set
  bool include_answer = false; // training: the answer always joins the candidates
};

struct CandidateScore {
  EntityId entity = 0;
  double tlr = 0.0;
  double tfm = 0.0;
  double score = 0.0;
};

struct ScoredQuery {
  Query query;
  QueryApplication application;
  std::vector<CandidateScore> candidates;  // sorted by score desc, entity asc

  std::vector<double> dense(std::int32_t num_entities) const;
};

// Candidates: entities reached by a rule plus entities with a fact towards the
// subject (tfm part 1). Everything else scores 0.
std::vector<EntityId> candidate_universe(const TemporalGraph& graph, const Query& query,
                                         const QueryApplication& app, const ScoringOptions& options);

TfmFeatures candidate_features(const TemporalGraph& graph, const DistributionParams& params,
                               const Query& query, const QueryApplication& app, EntityId candidate);

ScoredQuery score_query(const TemporalGraph& graph, const TilpModel& model, const Query& query,
                        const ScoringOptions& options = {});

// ---- explanations ---------------------------------------------------------

struct RuleContribution {
  std::size_t rule = 0;  // index into model.rules[head]
  double rate = 0.0;
  double score = 0.0;
  std::optional<Walk> grounding;
};

// Top `k` rules for a candidate by alpha_c * score, each with one stored walk.
std::vector<RuleContribution> explain_candidate(const TilpModel& model, const ScoredQuery& scored,
                                                EntityId candidate, std::size_t k = 3);

// "(a, r, b, [1962, present])" style text for a walk.
std::string render_grounding(const TemporalGraph& graph, std::span<const FactIndex> walk,
                             const Vocabulary& entities, const Vocabulary& relations);

nlohmann::json ranking_json(const TemporalGraph& graph, const TilpModel& model, const ScoredQuery& scored,
                            std::optional<double> truth_rank, const Vocabulary& entities,
                            const Vocabulary& relations, std::size_t top_k = 10, std::size_t explain_k = 3);

}  // namespace tilp
