#include "tilp/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <unordered_map>

#include "tilp/errors.hpp"
#include "tilp/parallel.hpp"
#include "tilp/synthetic.hpp"

namespace tilp {

// ---- config ---------------------------------------------------------------

namespace {

nlohmann::json train_json(const TrainConfig& t) {
  return {{"epochs", t.epochs}, {"batch_size", t.batch_size}, {"learning_rate", t.learning_rate},
          {"decay", t.decay}};
}

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (const auto it = j.find(key); it != j.end()) out = it->get<T>();
}

void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed, std::string_view where) {
  if (!j.is_object()) throw ParseError(std::string(where) + ": expected an object");
  for (const auto& [k, v] : j.items())
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
      throw ParseError(std::string(where) + ": unknown key '" + k + "'");
}

TrainConfig train_from_json(const nlohmann::json& j, TrainConfig t, std::string_view where) {
  check_keys(j, {"epochs", "batch_size", "learning_rate", "decay"}, where);
  read_key(j, "epochs", t.epochs);
  read_key(j, "batch_size", t.batch_size);
  read_key(j, "learning_rate", t.learning_rate);
  read_key(j, "decay", t.decay);
  return t;
}

}  // namespace

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json scenario{{"fractions", c.scenario.fractions},
                          {"rounds", c.scenario.rounds},
                          {"relations", c.scenario.relations}};
  if (c.scenario.boundaries)
    scenario["boundaries"] = {c.scenario.boundaries->first, c.scenario.boundaries->second};
  return {{"dataset", c.dataset},
          {"train", c.train_path.string()},
          {"valid", c.valid_path.string()},
          {"test", c.test_path.string()},
          {"max_rule_length", c.max_rule_length},
          {"dim", c.dim},
          {"init_scale", c.init_scale},
          {"phase1", train_json(c.phase1)},
          {"phase2", train_json(c.phase2)},
          {"seed", c.seed},
          {"workers", c.workers},
          {"max_walks_per_rule", c.max_walks_per_rule},
          {"max_paths_per_example", c.max_paths_per_example},
          {"max_rules_per_head", c.max_rules_per_head},
          {"max_training_queries", c.max_training_queries},
          {"training_fraction", c.training_fraction},
          {"groundings", c.groundings},
          {"exhaustive_candidates", c.exhaustive_candidates},
          {"use_tfm", c.use_tfm},
          {"max_valid_year", c.max_valid_year},
          {"scenario", std::move(scenario)},
          {"output", c.output.string()}};
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    check_keys(j,
               {"dataset", "train", "valid", "test", "max_rule_length", "dim", "init_scale", "phase1", "phase2",
                "seed", "workers", "max_walks_per_rule", "max_paths_per_example", "max_rules_per_head",
                "max_training_queries", "training_fraction", "groundings", "exhaustive_candidates", "use_tfm", "max_valid_year",
                "scenario", "output"},
               "config");
    read_key(j, "dataset", c.dataset);
    if (j.contains("train")) c.train_path = j["train"].get<std::string>();
    if (j.contains("valid")) c.valid_path = j["valid"].get<std::string>();
    if (j.contains("test")) c.test_path = j["test"].get<std::string>();
    read_key(j, "max_rule_length", c.max_rule_length);
    read_key(j, "dim", c.dim);
    read_key(j, "init_scale", c.init_scale);
    if (j.contains("phase1")) c.phase1 = train_from_json(j["phase1"], c.phase1, "config.phase1");
    if (j.contains("phase2")) c.phase2 = train_from_json(j["phase2"], c.phase2, "config.phase2");
    read_key(j, "seed", c.seed);
    read_key(j, "workers", c.workers);
    read_key(j, "max_walks_per_rule", c.max_walks_per_rule);
    read_key(j, "max_paths_per_example", c.max_paths_per_example);
    read_key(j, "max_rules_per_head", c.max_rules_per_head);
    read_key(j, "max_training_queries", c.max_training_queries);
    read_key(j, "training_fraction", c.training_fraction);
    read_key(j, "groundings", c.groundings);
    read_key(j, "exhaustive_candidates", c.exhaustive_candidates);
    read_key(j, "use_tfm", c.use_tfm);
    read_key(j, "max_valid_year", c.max_valid_year);
    if (j.contains("output")) c.output = j["output"].get<std::string>();
    if (j.contains("scenario")) {
      const auto& s = j["scenario"];
      check_keys(s, {"fractions", "rounds", "relations", "boundaries"}, "config.scenario");
      read_key(s, "fractions", c.scenario.fractions);
      read_key(s, "rounds", c.scenario.rounds);
      read_key(s, "relations", c.scenario.relations);
      if (s.contains("boundaries") && !s["boundaries"].is_null()) {
        const auto b = s["boundaries"].get<std::vector<Year>>();
        if (b.size() != 2) throw ParseError("config.scenario.boundaries: expected two years");
        c.scenario.boundaries = std::pair{b[0], b[1]};
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  if (c.max_rule_length < 1) throw ParseError("config: max_rule_length must be at least 1");
  if (c.dim < 1) throw ParseError("config: dim must be at least 1");
  if (!(c.training_fraction > 0.0 && c.training_fraction <= 1.0))
    throw ParseError("config: training_fraction must be in (0, 1]");
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config " + path.string());
  try {
    return config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("config " + path.string() + ": " + e.what());
  }
}

std::string config_hash(const ExperimentConfig& config) {
  // Output location and worker count do not change results.
  auto j = to_json(config);
  j.erase("output");
  j.erase("workers");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view stage) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : stage) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::uint64_t x = root ^ h;
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

DatasetSplit load_experiment_data(const ExperimentConfig& config) {
  if (config.dataset == "planted") return make_planted_dataset().split;
  return load_dataset(config.train_path, config.valid_path, config.test_path,
                      LoadOptions{config.max_valid_year});
}

// ---- discovery ------------------------------------------------------------

RuleSet discover_rules(const TemporalGraph& graph, const DiscoveryOptions& options, DiscoveryStats* stats) {
  const auto positives = training_queries(graph);
  return discover_rules(graph, positives, options, stats);
}

RuleSet discover_rules(const TemporalGraph& graph, std::span<const Query> positives,
                       const DiscoveryOptions& options, DiscoveryStats* stats) {
  using Counts = std::unordered_map<RuleTemplate, std::size_t, RuleTemplateHash>;
  Counts total;
  DiscoveryStats st;
  const std::size_t n = positives.size();
  constexpr std::size_t kChunk = 512;
  std::vector<Counts> local;
  std::vector<std::size_t> paths;
  std::vector<char> truncated;
  for (std::size_t first = 0; first < n; first += kChunk) {
    const std::size_t m = std::min(kChunk, n - first);
    local.assign(m, {});
    paths.assign(m, 0);
    truncated.assign(m, 0);
    parallel_for(m, options.workers, [&](std::size_t k) {
      const auto& q = positives[first + k];
      for_each_path(graph, q.subject, q.answer.value(), options.max_length, q.excluded_edge,
                    [&](std::span<const FactIndex> walk) {
                      ++local[k][extract_rule(graph, walk, q.relation, q.interval)];
                      if (options.max_paths_per_example && ++paths[k] >= options.max_paths_per_example) {
                        truncated[k] = 1;
                        return false;
                      }
                      if (!options.max_paths_per_example) ++paths[k];
                      return true;
                    });
    });
    for (std::size_t k = 0; k < m; ++k) {
      for (auto& [rule, c] : local[k]) total[rule] += c;
      st.paths += paths[k];
      st.truncated_examples += truncated[k];
    }
  }
  st.examples = n;

  RuleSet out;
  for (auto& [rule, c] : total) out[rule.head].push_back({rule, c});
  for (auto& [head, list] : out) {
    std::sort(list.begin(), list.end(), [](const LearnedRule& a, const LearnedRule& b) {
      return a.discovery_count != b.discovery_count ? a.discovery_count > b.discovery_count : a.rule < b.rule;
    });
    if (options.max_rules_per_head && list.size() > options.max_rules_per_head) {
      st.dropped_rules += list.size() - options.max_rules_per_head;
      list.resize(options.max_rules_per_head);
    }
  }
  if (stats) *stats = st;
  return out;
}

// ---- learning -------------------------------------------------------------

std::vector<Query> training_queries(const TemporalGraph& graph) {
  std::vector<Query> out;
  out.reserve(graph.size());
  for (std::size_t i = 0; i < graph.size(); ++i) {
    const auto fi = static_cast<FactIndex>(i);
    const auto& f = graph.fact(fi);
    out.push_back({f.subject, f.relation, graph.resolved(fi), f.object, f.edge_id});
  }
  return out;
}

namespace {

std::span<const LearnedRule> rules_of(const RuleSet& rules, RelationId head) {
  const auto it = rules.find(head);
  if (it == rules.end()) return {};
  return it->second;
}

}  // namespace

Phase1Data build_phase1_data(const TemporalGraph& graph, const RuleSet& rules, std::span<const Query> queries,
                             const ApplyOptions& apply, unsigned workers) {
  Phase1Data data;
  for (const auto& [head, list] : rules) {
    data.head_offset[head] = data.rule_table.size();
    for (const auto& r : list) data.rule_table.push_back(r.rule);
  }
  data.examples.resize(queries.size());
  data.fit_samples.resize(queries.size());
  ApplyOptions opts = apply;
  opts.groundings = 0;
  opts.walk_evidence = true;
  parallel_for(queries.size(), workers, [&](std::size_t qi) {
    const auto& q = queries[qi];
    const EntityId truth = q.answer.value();
    const auto app = apply_rules(graph, q, rules_of(rules, q.relation), opts);

    auto& ex = data.examples[qi];
    ex.head = q.relation;
    std::set<EntityId> cands{truth};
    for (const auto& res : app.results)
      for (const auto& [c, n] : res.counts) cands.insert(c);
    ex.candidates.assign(cands.begin(), cands.end());
    ex.truth = static_cast<std::size_t>(std::lower_bound(ex.candidates.begin(), ex.candidates.end(), truth) -
                                        ex.candidates.begin());
    const auto offset = app.results.empty() ? 0 : data.head_offset.at(q.relation);
    for (const auto& res : app.results) {
      Phase1Example::Arrivals a;
      a.rule = offset + res.rule;
      for (const auto& [c, n] : res.counts) {
        const auto idx = std::lower_bound(ex.candidates.begin(), ex.candidates.end(), c) - ex.candidates.begin();
        a.rates.emplace_back(static_cast<std::uint32_t>(idx),
                             static_cast<double>(n) / static_cast<double>(res.total));
      }
      ex.rules.push_back(std::move(a));
    }

    auto& fs = data.fit_samples[qi];
    fs.relation = q.relation;
    fs.query_start = q.interval.start;
    fs.evidence = collect_evidence(graph, q.subject, q.interval.start, truth, q.excluded_edge);
    if (const auto it = app.walk_evidence.find(truth); it != app.walk_evidence.end())
      fs.evidence.parts[2] = it->second;
  });
  return data;
}

std::vector<Phase2Example> build_phase2_data(const TemporalGraph& graph, const TilpModel& model,
                                             std::span<const Query> queries, const ApplyOptions& apply,
                                             unsigned workers) {
  std::vector<Phase2Example> out(queries.size());
  ApplyOptions opts = apply;
  opts.groundings = 0;
  opts.walk_evidence = true;
  ScoringOptions scoring;
  scoring.include_answer = true;
  parallel_for(queries.size(), workers, [&](std::size_t qi) {
    const auto& q = queries[qi];
    const auto app = apply_rules(graph, q, model.rules_for(q.relation), opts);
    const auto tlr = phi_tlr(app, model.scores_for(q.relation));
    auto& ex = out[qi];
    ex.relation = q.relation;
    ex.candidates = candidate_universe(graph, q, app, scoring);
    ex.truth = static_cast<std::size_t>(
        std::lower_bound(ex.candidates.begin(), ex.candidates.end(), q.answer.value()) - ex.candidates.begin());
    for (EntityId c : ex.candidates) {
      const auto it = tlr.find(c);
      ex.tlr.push_back(it == tlr.end() ? 0.0 : it->second);
      ex.features.push_back(candidate_features(graph, model.distributions, q, app, c));
    }
  });
  return out;
}

Imputer make_imputer(const DistributionParams& params, const DatasetSplit& data, std::uint64_t seed) {
  const auto span = data.year_span();
  return Imputer(&params, derive_seed(seed, "impute"), span.first, span.last);
}

ResolvedGraphs resolve_graphs(const DatasetSplit& data, std::uint64_t seed) {
  ResolvedGraphs out;
  const auto raw = data.train_graph();
  fit_durations(raw, out.durations);
  const auto imputer = make_imputer(out.durations, data, seed);
  out.train = raw.with_resolution(imputer);
  out.known = data.all_graph().with_resolution(imputer);
  return out;
}

TilpModel learn(const DatasetSplit& data, const ExperimentConfig& config, LearnReport* report,
                const LearnHooks& hooks) {
  auto log = [&](const std::string& msg) {
    if (hooks.log) hooks.log(msg);
  };
  LearnReport rep;
  auto rg = resolve_graphs(data, config.seed);
  const TemporalGraph& g = rg.train;

  auto queries = training_queries(g);
  const auto wanted = [&] {
    auto n = static_cast<std::size_t>(std::llround(config.training_fraction * static_cast<double>(queries.size())));
    n = std::max<std::size_t>(std::min<std::size_t>(n, queries.size()), queries.empty() ? 0 : 1);
    return config.max_training_queries ? std::min(n, config.max_training_queries) : n;
  }();
  if (wanted < queries.size()) {
    std::vector<std::size_t> idx(queries.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(config.seed, "training-queries"));
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(wanted);
    std::sort(idx.begin(), idx.end());
    std::vector<Query> kept;
    for (auto i : idx) kept.push_back(queries[i]);
    queries = std::move(kept);
  }

  const auto t0 = std::chrono::steady_clock::now();
  TilpModel model;
  model.rules = discover_rules(g, queries,
                               {config.max_rule_length, config.max_paths_per_example, config.max_rules_per_head,
                                config.workers},
                               &rep.discovery);
  rep.discovery_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& [h, list] : model.rules) rep.rules += list.size();
  log("discovered " + std::to_string(rep.rules) + " rules from " + std::to_string(rep.discovery.paths) +
      " paths in " + std::to_string(rep.discovery_seconds) + " s");

  ApplyOptions apply;
  apply.max_walks = config.max_walks_per_rule;
  auto p1 = build_phase1_data(g, model.rules, queries, apply, config.workers);
  auto init = AttentionModel::random(g.num_relations(), config.dim, config.max_rule_length,
                                     derive_seed(config.seed, "attention"), config.init_scale);
  TrainConfig t1 = config.phase1;
  t1.seed = derive_seed(config.seed, "phase1");
  auto r1 = train_phase1(std::move(init), p1.rule_table, p1.examples, t1, hooks.phase1);
  model.attention = std::move(r1.params);
  rep.phase1_examples = p1.examples.size() - r1.skipped;
  rep.phase1_skipped = r1.skipped;
  rep.phase1_loss = r1.loss_trace;
  log("phase 1: " + std::to_string(rep.phase1_examples) + " examples, " + std::to_string(r1.skipped) +
      " without rule support");

  model.distributions = rg.durations;
  fit_feature_tables(p1.fit_samples, model.distributions);
  p1 = {};
  model.refresh_rule_scores();
  model.use_tfm = config.use_tfm;
  model.weights = TfmWeights::initial(g.num_relations());

  if (config.use_tfm) {
    const auto p2 = build_phase2_data(g, model, queries, apply, config.workers);
    TrainConfig t2 = config.phase2;
    t2.seed = derive_seed(config.seed, "phase2");
    auto r2 = train_phase2(model.weights, p2, t2, hooks.phase2);
    model.weights = std::move(r2.weights);
    rep.phase2_examples = p2.size();
    rep.phase2_loss = r2.loss_trace;
    log("phase 2: " + std::to_string(p2.size()) + " examples");
  }
  if (report) *report = std::move(rep);
  return model;
}

// ---- evaluation -----------------------------------------------------------

std::vector<Query> evaluation_queries(std::span<const Quadruple> facts, const Imputer& imputer,
                                      std::int32_t num_base_relations) {
  std::vector<Query> out;
  out.reserve(2 * facts.size());
  for (const auto& f : facts) {
    const auto iv = imputer.resolve(f.subject, f.relation, f.object, f.interval);
    out.push_back({f.subject, f.relation, iv, f.object, kNoEdge});
    out.push_back({f.object, f.relation + num_base_relations, iv, f.subject, kNoEdge});
  }
  return out;
}

EvalReport evaluate(const TemporalGraph& background, const TemporalGraph& known, const TilpModel& model,
                    std::span<const Query> queries, const ScoringOptions& options, unsigned workers,
                    const RankingSink& sink) {
  EvalReport report;
  report.ranks.resize(queries.size());
  constexpr std::size_t kChunk = 256;
  std::vector<ScoredQuery> scored;
  for (std::size_t first = 0; first < queries.size(); first += kChunk) {
    const std::size_t m = std::min(kChunk, queries.size() - first);
    scored.assign(m, {});
    parallel_for(m, workers, [&](std::size_t k) {
      const auto& q = queries[first + k];
      scored[k] = score_query(background, model, q, options);
      const auto dense = scored[k].dense(background.num_entities());
      const auto mask = time_aware_mask(known, q);
      auto& qr = report.ranks[first + k];
      qr.relation = q.relation;
      qr.subject_side = q.relation >= background.num_base_relations();
      qr.rank = rank_of_truth(dense, q.answer.value(), &mask);
      qr.raw_rank = rank_of_truth(dense, q.answer.value());
    });
    if (sink)
      for (std::size_t k = 0; k < m; ++k) sink(scored[k], report.ranks[first + k]);
  }
  report.all = metrics_where(report, [](const QueryRank&) { return true; });
  report.object = metrics_where(report, [](const QueryRank& r) { return !r.subject_side; });
  report.subject = metrics_where(report, [](const QueryRank& r) { return r.subject_side; });
  std::vector<double> raw;
  for (const auto& r : report.ranks) raw.push_back(r.raw_rank);
  report.raw = metrics(raw);
  return report;
}

Metrics metrics_where(const EvalReport& report, const std::function<bool(const QueryRank&)>& keep) {
  std::vector<double> ranks;
  for (const auto& r : report.ranks)
    if (keep(r)) ranks.push_back(r.rank);
  return metrics(ranks);
}

ScoringOptions scoring_options(const ExperimentConfig& config) {
  ScoringOptions s;
  s.apply.max_walks = config.max_walks_per_rule;
  s.apply.groundings = config.groundings;
  s.exhaustive = config.exhaustive_candidates;
  return s;
}

EvalReport run_experiment(const DatasetSplit& data, const ExperimentConfig& config, TilpModel* model_out) {
  TilpModel model = learn(data, config);
  const auto rg = resolve_graphs(data, config.seed);
  const auto imputer = make_imputer(rg.durations, data, config.seed);
  const auto queries = evaluation_queries(data.test, imputer, data.relations.size());
  auto options = scoring_options(config);
  options.apply.groundings = 0;
  auto report = evaluate(rg.train, rg.known, model, queries, options, config.workers);
  if (model_out) *model_out = std::move(model);
  return report;
}

// ---- checkpoints ----------------------------------------------------------

void save_checkpoint(const std::filesystem::path& dir, const ExperimentConfig& config, const TilpModel& model,
                     const Vocabulary& relations) {
  std::filesystem::create_directories(dir);
  const auto hash = config_hash(config);
  {
    std::ofstream out(dir / "rules.jsonl");
    out << nlohmann::json{{"meta", {{"config_hash", hash}, {"seed", config.seed}}}}.dump() << '\n';
    write_rules_jsonl(out, model.rules, &relations);
  }
  {
    auto j = to_json(model.distributions);
    j["config_hash"] = hash;
    j["seed"] = config.seed;
    std::ofstream(dir / "distributions.json") << j.dump(1) << '\n';
  }
  nlohmann::json ck{{"format", "tilp-checkpoint-v1"},
                    {"config", to_json(config)},
                    {"config_hash", hash},
                    {"seed", config.seed},
                    {"use_tfm", model.use_tfm},
                    {"attention", to_json(model.attention)},
                    {"tfm_weights", to_json(model.weights)},
                    {"rules_file", "rules.jsonl"},
                    {"distributions_file", "distributions.json"}};
  std::ofstream(dir / "checkpoint.json") << ck.dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto file = std::filesystem::is_directory(path) ? path / "checkpoint.json" : path;
  const auto dir = file.parent_path();
  std::ifstream in(file);
  if (!in) throw ParseError("cannot open checkpoint " + file.string());
  Checkpoint ck;
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.value("format", "") != "tilp-checkpoint-v1") throw ParseError("checkpoint: unsupported format");
    ck.config = config_from_json(j.at("config"));
    ck.model.use_tfm = j.at("use_tfm").get<bool>();
    ck.model.attention = attention_from_json(j.at("attention"));
    ck.model.weights = tfm_weights_from_json(j.at("tfm_weights"));
    std::ifstream rules(dir / j.at("rules_file").get<std::string>());
    if (!rules) throw ParseError("checkpoint: missing rules file");
    ck.model.rules = read_rules_jsonl(rules);
    std::ifstream dist(dir / j.at("distributions_file").get<std::string>());
    if (!dist) throw ParseError("checkpoint: missing distributions file");
    ck.model.distributions = distributions_from_json(nlohmann::json::parse(dist));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint " + file.string() + ": " + e.what());
  }
  ck.model.refresh_rule_scores();
  return ck;
}

void write_loss_csv(const std::filesystem::path& path, std::span<const double> trace,
                    const ExperimentConfig& config) {
  std::ofstream out(path);
  out << "# config_hash=" << config_hash(config) << " seed=" << config.seed << '\n';
  out << "epoch,mean_loss\n";
  out.precision(17);
  for (std::size_t e = 0; e < trace.size(); ++e) out << e << ',' << trace[e] << '\n';
}

}  // namespace tilp
