#include "tilp/ranker.hpp"

#include <algorithm>
#include <set>

#include "tilp/attention.hpp"
#include "tilp/errors.hpp"

namespace tilp {

// ---- rule application -----------------------------------------------------

double RuleApplicationResult::rate(EntityId c) const {
  if (total == 0) return 0.0;
  const auto it = std::lower_bound(counts.begin(), counts.end(), c,
                                   [](const auto& p, EntityId e) { return p.first < e; });
  if (it == counts.end() || it->first != c) return 0.0;
  return static_cast<double>(it->second) / static_cast<double>(total);
}

namespace {

template <typename GetRule>
QueryApplication apply_impl(const TemporalGraph& graph, const Query& query, std::size_t n,
                            GetRule&& get, const ApplyOptions& options) {
  QueryApplication app;
  if (n == 0) return app;
  WalkContext ctx(graph, query.interval, query.subject, query.excluded_edge);
  std::map<EntityId, std::size_t> counts;
  for (std::size_t i = 0; i < n; ++i) {
    RuleApplicationResult res;
    res.rule = i;
    counts.clear();
    const auto stats = ctx.for_each_match(
        get(i),
        [&](std::span<const FactIndex> walk) {
          const EntityId end = graph.fact(walk.back()).object;
          ++counts[end];
          if (options.groundings > 0) {
            auto& kept = res.groundings[end];
            if (kept.size() < options.groundings) kept.emplace_back(walk.begin(), walk.end());
          }
          if (options.walk_evidence)
            add_walk_evidence(graph, walk, query.interval.start, app.walk_evidence[end]);
          return true;
        },
        options.max_walks);
    res.total = stats.walks;
    res.truncated = stats.truncated;
    app.truncated = app.truncated || stats.truncated;
    if (res.total == 0) continue;
    res.counts.assign(counts.begin(), counts.end());
    app.results.push_back(std::move(res));
  }
  return app;
}

}  // namespace

QueryApplication apply_rules(const TemporalGraph& graph, const Query& query,
                             std::span<const RuleTemplate> rules, const ApplyOptions& options) {
  return apply_impl(graph, query, rules.size(), [&](std::size_t i) -> const RuleTemplate& { return rules[i]; },
                    options);
}

QueryApplication apply_rules(const TemporalGraph& graph, const Query& query,
                             std::span<const LearnedRule> rules, const ApplyOptions& options) {
  return apply_impl(graph, query, rules.size(),
                    [&](std::size_t i) -> const RuleTemplate& { return rules[i].rule; }, options);
}

std::map<EntityId, double> phi_tlr(const QueryApplication& app, std::span<const double> rule_scores) {
  std::map<EntityId, double> out;
  for (const auto& res : app.results) {
    const double s = rule_scores[res.rule];
    for (const auto& [c, n] : res.counts)
      out[c] += static_cast<double>(n) / static_cast<double>(res.total) * s;
  }
  return out;
}

// ---- ranking --------------------------------------------------------------

std::vector<char> time_aware_mask(const TemporalGraph& known, const Query& query) {
  std::vector<char> mask(static_cast<std::size_t>(known.num_entities()), 0);
  for (FactIndex i : known.outgoing(query.subject, query.relation)) {
    const EntityId c = known.fact(i).object;
    if (query.answer && c == *query.answer) continue;
    if (temporal_relation(known.resolved(i), query.interval) == TemporalRelation::Touching)
      mask[static_cast<std::size_t>(c)] = 1;
  }
  return mask;
}

std::vector<EntityId> time_aware_filter(const TemporalGraph& known, const Query& query,
                                        std::span<const EntityId> candidates) {
  const auto mask = time_aware_mask(known, query);
  std::vector<EntityId> out;
  for (EntityId c : candidates)
    if (static_cast<std::size_t>(c) >= mask.size() || !mask[static_cast<std::size_t>(c)]) out.push_back(c);
  return out;
}

double rank_of_truth(std::span<const double> scores, EntityId truth, const std::vector<char>* filtered) {
  const auto t = static_cast<std::size_t>(truth);
  if (t >= scores.size()) throw ContractViolation("rank_of_truth: truth outside the score vector");
  const double st = scores[t];
  std::size_t above = 0, tied = 0;
  for (std::size_t c = 0; c < scores.size(); ++c) {
    if (c == t || (filtered && c < filtered->size() && (*filtered)[c])) continue;
    if (scores[c] > st)
      ++above;
    else if (scores[c] == st)
      ++tied;
  }
  return 1.0 + static_cast<double>(above) + 0.5 * static_cast<double>(tied);
}

Metrics metrics(std::span<const double> ranks) {
  Metrics m;
  m.count = ranks.size();
  if (ranks.empty()) return m;
  for (double r : ranks) {
    m.mrr += 1.0 / r;
    m.hit1 += r <= 1.0 ? 1.0 : 0.0;
    m.hit10 += r <= 10.0 ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(ranks.size());
  m.mrr /= n;
  m.hit1 /= n;
  m.hit10 /= n;
  return m;
}

// ---- full model -----------------------------------------------------------

void TilpModel::refresh_rule_scores() {
  rule_scores.clear();
  for (const auto& [head, list] : rules) {
    auto& out = rule_scores[head];
    if (list.empty()) continue;
    const auto bundle = forward_attention(attention, head);
    out.reserve(list.size());
    for (const auto& r : list) out.push_back(rule_score(bundle, r.rule));
  }
}

std::span<const LearnedRule> TilpModel::rules_for(RelationId head) const {
  const auto it = rules.find(head);
  if (it == rules.end()) return {};
  return it->second;
}

std::span<const double> TilpModel::scores_for(RelationId head) const {
  const auto it = rule_scores.find(head);
  if (it == rule_scores.end()) return {};
  return it->second;
}

std::vector<double> ScoredQuery::dense(std::int32_t num_entities) const {
  std::vector<double> out(static_cast<std::size_t>(num_entities), 0.0);
  for (const auto& c : candidates) out[static_cast<std::size_t>(c.entity)] = c.score;
  return out;
}

std::vector<EntityId> candidate_universe(const TemporalGraph& graph, const Query& query,
                                         const QueryApplication& app, const ScoringOptions& options) {
  if (options.exhaustive) {
    std::vector<EntityId> all(static_cast<std::size_t>(graph.num_entities()));
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<EntityId>(i);
    return all;
  }
  std::set<EntityId> set;
  for (const auto& res : app.results)
    for (const auto& [c, n] : res.counts) set.insert(c);
  // c has a fact towards the subject iff the subject has the inverse fact towards c.
  for (FactIndex i : graph.outgoing(query.subject))
    if (graph.fact(i).edge_id != query.excluded_edge) set.insert(graph.fact(i).object);
  if (options.include_answer && query.answer) set.insert(*query.answer);
  return {set.begin(), set.end()};
}

TfmFeatures candidate_features(const TemporalGraph& graph, const DistributionParams& params,
                               const Query& query, const QueryApplication& app, EntityId candidate) {
  auto ev = collect_evidence(graph, query.subject, query.interval.start, candidate, query.excluded_edge);
  if (const auto it = app.walk_evidence.find(candidate); it != app.walk_evidence.end())
    ev.parts[2] = it->second;
  return compute_features(params, query.relation, query.interval.start, ev);
}

ScoredQuery score_query(const TemporalGraph& graph, const TilpModel& model, const Query& query,
                        const ScoringOptions& options) {
  ScoredQuery out;
  out.query = query;
  ApplyOptions apply = options.apply;
  apply.walk_evidence = apply.walk_evidence && model.use_tfm;
  out.application = apply_rules(graph, query, model.rules_for(query.relation), apply);
  const auto tlr = phi_tlr(out.application, model.scores_for(query.relation));

  std::vector<EntityId> universe;
  if (model.use_tfm) {
    universe = candidate_universe(graph, query, out.application, options);
  } else {
    for (const auto& [c, s] : tlr) universe.push_back(c);
    if (options.include_answer && query.answer && !tlr.contains(*query.answer))
      universe.insert(std::lower_bound(universe.begin(), universe.end(), *query.answer), *query.answer);
  }

  const double g_tlr = model.weights.gamma_tlr(), g_tfm = model.weights.gamma_tfm();
  out.candidates.reserve(universe.size());
  for (EntityId c : universe) {
    CandidateScore cs;
    cs.entity = c;
    if (const auto it = tlr.find(c); it != tlr.end()) cs.tlr = it->second;
    if (model.use_tfm) {
      cs.tfm = phi_tfm(candidate_features(graph, model.distributions, query, out.application, c),
                       query.relation, model.weights);
      cs.score = phi_tilp(cs.tlr, cs.tfm, g_tlr, g_tfm);
    } else {
      cs.score = cs.tlr;
    }
    out.candidates.push_back(cs);
  }
  std::sort(out.candidates.begin(), out.candidates.end(), [](const auto& a, const auto& b) {
    return a.score != b.score ? a.score > b.score : a.entity < b.entity;
  });
  return out;
}

// ---- explanations ---------------------------------------------------------

std::vector<RuleContribution> explain_candidate(const TilpModel& model, const ScoredQuery& scored,
                                                EntityId candidate, std::size_t k) {
  const auto scores = model.scores_for(scored.query.relation);
  std::vector<RuleContribution> out;
  for (const auto& res : scored.application.results) {
    const double rate = res.rate(candidate);
    if (rate <= 0) continue;
    RuleContribution rc{res.rule, rate, scores[res.rule], std::nullopt};
    if (const auto it = res.groundings.find(candidate); it != res.groundings.end() && !it->second.empty())
      rc.grounding = it->second.front();
    out.push_back(std::move(rc));
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.rate * a.score > b.rate * b.score;
  });
  if (out.size() > k) out.resize(k);
  return out;
}

std::string render_grounding(const TemporalGraph& graph, std::span<const FactIndex> walk,
                             const Vocabulary& entities, const Vocabulary& relations) {
  std::string out;
  for (FactIndex i : walk) {
    const auto& f = graph.fact(i);
    if (!out.empty()) out += " ^ ";
    out += "(" + entities.name(f.subject) + ", " + relation_name(f.relation, relations) + ", " +
           entities.name(f.object) + ", " + to_string(f.interval) + ")";
  }
  return out;
}

nlohmann::json ranking_json(const TemporalGraph& graph, const TilpModel& model, const ScoredQuery& scored,
                            std::optional<double> truth_rank, const Vocabulary& entities,
                            const Vocabulary& relations, std::size_t top_k, std::size_t explain_k) {
  const auto& q = scored.query;
  nlohmann::json query{{"subject", entities.name(q.subject)},
                       {"relation", relation_name(q.relation, relations)},
                       {"interval", {q.interval.start, q.interval.end}}};
  if (q.answer) query["answer"] = entities.name(*q.answer);

  const auto rules = model.rules_for(q.relation);
  nlohmann::json cands = nlohmann::json::array();
  for (std::size_t i = 0; i < std::min(top_k, scored.candidates.size()); ++i) {
    const auto& c = scored.candidates[i];
    nlohmann::json expl = nlohmann::json::array();
    for (const auto& rc : explain_candidate(model, scored, c.entity, explain_k)) {
      nlohmann::json e{{"rule", render_rule(rules[rc.rule].rule, relations)},
                       {"rate", rc.rate},
                       {"rule_score", rc.score}};
      if (rc.grounding) e["grounding"] = render_grounding(graph, *rc.grounding, entities, relations);
      expl.push_back(std::move(e));
    }
    cands.push_back({{"entity", entities.name(c.entity)},
                     {"score", c.score},
                     {"tlr", c.tlr},
                     {"tfm", c.tfm},
                     {"rank", i + 1},
                     {"explanations", std::move(expl)}});
  }
  nlohmann::json j{{"query", std::move(query)}, {"candidates", std::move(cands)}};
  j["truth_rank"] = truth_rank ? nlohmann::json(*truth_rank) : nlohmann::json(nullptr);
  return j;
}

}  // namespace tilp
