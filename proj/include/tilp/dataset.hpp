#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tilp/graph.hpp"

namespace tilp {

struct LoadOptions {
  // Years after this are data errors; such endpoints are loaded as Unknown.
  Year max_valid_year = 2022;
};

struct LoadStats {
  std::size_t lines = 0;
  std::size_t truncated_dates = 0;    // month/day information dropped
  std::size_t corrected_years = 0;    // endpoints beyond max_valid_year
  std::size_t swapped_intervals = 0;  // start > end after truncation
};

struct YearRange {
  Year first = 0;
  Year last = 0;
  std::size_t unknown_start = 0;
};

struct DatasetSplit {
  Vocabulary entities;
  Vocabulary relations;  // base relations only; inverses are implicit
  std::vector<Quadruple> train, valid, test;
  LoadStats stats;

  std::vector<Quadruple> all() const;
  // Min/max known year across every split.
  YearRange year_span() const;
  TemporalGraph graph(std::span<const Quadruple> facts) const;
  TemporalGraph train_graph() const { return graph(train); }
  TemporalGraph all_graph() const;
};

// One endpoint token: "1994", "-431", "2003-07", "1990-##-##", "####", "" or "present".
// Returns the endpoint and whether month/day information was dropped.
std::pair<Endpoint, bool> parse_endpoint(std::string_view token);

// Reads tab-separated "subject relation object start end" lines into `split`,
// growing the shared vocabularies.
std::vector<Quadruple> read_facts(std::istream& in, DatasetSplit& split, const LoadOptions& options);

DatasetSplit load_dataset(const std::filesystem::path& train, const std::filesystem::path& valid,
                          const std::filesystem::path& test, const LoadOptions& options = {});

// Partitions every fact by start year: [min, b1] -> train, (b1, b2] -> valid,
// (b2, max] -> test. Facts without a start year go to train.
DatasetSplit time_shift_resplit(const DatasetSplit& data, Year b1, Year b2);

YearRange start_year_range(std::span<const Quadruple> facts);

// Published split statistics for the two canonical benchmarks.
struct ReferenceStats {
  std::string_view name;
  std::size_t train, valid, test, entities, relations;
};
std::optional<ReferenceStats> reference_stats(std::string_view dataset_name);
// Human-readable mismatches against reference_stats (empty when matching or unknown).
std::vector<std::string> validate_against_reference(std::string_view dataset_name,
                                                    const DatasetSplit& split);

nlohmann::json metadata_json(const DatasetSplit& split);

// Lossless JSON graph snapshot: vocabularies plus base facts; the indices are
// rebuilt deterministically on load.
struct GraphSnapshot {
  Vocabulary entities;
  Vocabulary relations;
  TemporalGraph graph;
};
void save_snapshot(const std::filesystem::path& path, const TemporalGraph& graph,
                   const Vocabulary& entities, const Vocabulary& relations);
GraphSnapshot load_snapshot(const std::filesystem::path& path);

std::string endpoint_token(const Endpoint& e);

}  // namespace tilp
