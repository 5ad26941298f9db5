#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tilp/dataset.hpp"
#include "tilp/learner.hpp"
#include "tilp/ranker.hpp"
#include "tilp/tfm.hpp"

namespace tilp {

struct ScenarioConfig {
  std::vector<double> fractions{0.25, 0.5, 0.75, 1.0};
  int rounds = 5;
  std::vector<std::string> relations;  // biased setting; empty = every base relation
  std::optional<std::pair<Year, Year>> boundaries;
};

struct ExperimentConfig {
  std::string dataset;  // "WIKIDATA12k", "YAGO11k", "planted" or a free name
  std::filesystem::path train_path, valid_path, test_path;
  int max_rule_length = 5;
  int dim = 32;
  double init_scale = 0.1;
  TrainConfig phase1{30, 32, 1e-2, 0.95, 0};
  TrainConfig phase2{10, 32, 5e-2, 0.95, 0};
  std::uint64_t seed = 0;
  unsigned workers = 1;
  std::size_t max_walks_per_rule = 0;      // 0 = exhaustive
  std::size_t max_paths_per_example = 0;   // 0 = exhaustive
  std::size_t max_rules_per_head = 200;    // 0 = keep all
  std::size_t max_training_queries = 0;    // 0 = every training fact
  double training_fraction = 1.0;          // share of training facts used as positives
  std::size_t groundings = 3;
  bool exhaustive_candidates = false;
  bool use_tfm = true;
  Year max_valid_year = 2022;
  ScenarioConfig scenario;
  std::filesystem::path output = "runs";
};

nlohmann::json to_json(const ExperimentConfig& config);
// Missing keys keep their defaults; unknown keys are a ParseError.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
// FNV-1a of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

// Independent stream seed for a named stage.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stage);

// Loads the configured dataset; "planted" generates the synthetic one.
DatasetSplit load_experiment_data(const ExperimentConfig& config);

// Every stored fact as a training query that hides its own edge.
std::vector<Query> training_queries(const TemporalGraph& graph);

// ---- rule discovery -------------------------------------------------------

struct DiscoveryOptions {
  int max_length = 5;
  std::size_t max_paths_per_example = 0;
  std::size_t max_rules_per_head = 0;
  unsigned workers = 1;
};

struct DiscoveryStats {
  std::size_t examples = 0;
  std::size_t paths = 0;
  std::size_t truncated_examples = 0;
  std::size_t dropped_rules = 0;  // beyond max_rules_per_head
};

// Walks from each positive's subject to its answer without using the positive's
// own edge, reads off rules and merges identical ones. Rules of a head are
// ordered by discovery count, then template.
RuleSet discover_rules(const TemporalGraph& graph, std::span<const Query> positives,
                       const DiscoveryOptions& options, DiscoveryStats* stats = nullptr);
// Every stored fact (inverses included) as a positive.
RuleSet discover_rules(const TemporalGraph& graph, const DiscoveryOptions& options,
                       DiscoveryStats* stats = nullptr);

// ---- learning -------------------------------------------------------------

struct Phase1Data {
  std::vector<RuleTemplate> rule_table;  // rules of every head, flattened
  std::map<RelationId, std::size_t> head_offset;
  std::vector<Phase1Example> examples;
  std::vector<FitSample> fit_samples;  // evidence of the true answers
};

Phase1Data build_phase1_data(const TemporalGraph& graph, const RuleSet& rules,
                             std::span<const Query> queries, const ApplyOptions& apply, unsigned workers);

std::vector<Phase2Example> build_phase2_data(const TemporalGraph& graph, const TilpModel& model,
                                             std::span<const Query> queries, const ApplyOptions& apply,
                                             unsigned workers);

struct LearnReport {
  DiscoveryStats discovery;
  double discovery_seconds = 0.0;
  std::size_t rules = 0;
  std::size_t phase1_examples = 0;
  std::size_t phase1_skipped = 0;
  std::vector<double> phase1_loss;
  std::size_t phase2_examples = 0;
  std::vector<double> phase2_loss;
};

// Hooks for observing training; both optional.
struct LearnHooks {
  Phase1Callback phase1;
  Phase2Callback phase2;
  std::function<void(const std::string&)> log;
};

// Training graph with Unknown endpoints imputed from the fitted durations.
struct ResolvedGraphs {
  DistributionParams durations;
  TemporalGraph train;
  TemporalGraph known;  // every split, for time-aware filtering
};
ResolvedGraphs resolve_graphs(const DatasetSplit& data, std::uint64_t seed);
Imputer make_imputer(const DistributionParams& params, const DatasetSplit& data, std::uint64_t seed);

TilpModel learn(const DatasetSplit& data, const ExperimentConfig& config, LearnReport* report = nullptr,
                const LearnHooks& hooks = {});

// ---- evaluation -----------------------------------------------------------

struct QueryRank {
  RelationId relation = 0;  // query relation (inverse for subject queries)
  bool subject_side = false;
  double rank = 0.0;      // time-aware filtered
  double raw_rank = 0.0;  // unfiltered
};

struct EvalReport {
  Metrics all, object, subject;
  Metrics raw;
  std::vector<QueryRank> ranks;
};

// Object query (s, r, ?, I) and subject query (o, r^-1, ?, I) for every fact.
std::vector<Query> evaluation_queries(std::span<const Quadruple> facts, const Imputer& imputer,
                                      std::int32_t num_base_relations);

using RankingSink = std::function<void(const ScoredQuery&, const QueryRank&)>;

EvalReport evaluate(const TemporalGraph& background, const TemporalGraph& known, const TilpModel& model,
                    std::span<const Query> queries, const ScoringOptions& options, unsigned workers,
                    const RankingSink& sink = {});

// Metrics over a subset of the ranks.
Metrics metrics_where(const EvalReport& report, const std::function<bool(const QueryRank&)>& keep);

ScoringOptions scoring_options(const ExperimentConfig& config);

// Learns on `data` and evaluates its test split.
EvalReport run_experiment(const DatasetSplit& data, const ExperimentConfig& config,
                          TilpModel* model_out = nullptr);

// ---- checkpoints ----------------------------------------------------------

// Writes checkpoint.json, rules.jsonl and distributions.json into `dir`.
void save_checkpoint(const std::filesystem::path& dir, const ExperimentConfig& config, const TilpModel& model,
                     const Vocabulary& relations);
struct Checkpoint {
  ExperimentConfig config;
  TilpModel model;
};
// `path` is a checkpoint.json file or the directory holding it.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// "epoch,mean_loss" CSV preceded by a comment line with config hash and seed.
void write_loss_csv(const std::filesystem::path& path, std::span<const double> trace,
                    const ExperimentConfig& config);

}  // namespace tilp
