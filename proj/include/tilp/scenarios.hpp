#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tilp/pipeline.hpp"

namespace tilp {

struct ScenarioRow {
  std::string setting;
  int round = 0;
  Metrics metrics;
};

// Retrains on a random `fraction` of the training facts, `rounds` times per fraction.
std::vector<ScenarioRow> scenario_few_samples(const DatasetSplit& data, const ExperimentConfig& config,
                                              std::span<const double> fractions, int rounds);

// Test queries rebalanced towards equal counts per relation: relations with at
// least total / #relations facts are sampled down to that quota, smaller ones
// keep a random half.
std::vector<Quadruple> balanced_test_set(std::span<const Quadruple> test, std::uint64_t seed);

// Per relation and round: MRR on that relation's (balanced) test queries with
// the full training set ("<rel>/full") and with half of its training edges
// removed ("<rel>/halved").
std::vector<ScenarioRow> scenario_biased(const DatasetSplit& data, const ExperimentConfig& config,
                                         std::span<const RelationId> relations, int rounds);

std::vector<ScenarioRow> scenario_time_shift(const DatasetSplit& data, const ExperimentConfig& config, Year b1,
                                             Year b2);

// CSV: setting,round,MRR,hit1,hit10 with a provenance comment line.
void write_scenario_csv(const std::filesystem::path& path, std::span<const ScenarioRow> rows,
                        const ExperimentConfig& config);
// Bar chart of mean MRR per setting with a one-standard-deviation whisker.
void write_scenario_svg(const std::filesystem::path& path, std::span<const ScenarioRow> rows,
                        const std::string& title);

}  // namespace tilp
