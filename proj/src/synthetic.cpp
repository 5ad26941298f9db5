#include "tilp/synthetic.hpp"

#include <algorithm>
#include <random>

namespace tilp {

namespace {

enum : RelationId { kPlanted = 0, kFirst = 1, kSecond = 2, kNoiseA = 3, kNoiseB = 4, kBaseRelations = 5 };

}  // namespace

PlantedDataset make_planted_dataset(const PlantedConfig& config) {
  std::mt19937_64 rng(config.seed);
  auto uniform = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  PlantedDataset out;
  auto& split = out.split;
  for (const char* name : {"planted", "first", "second", "noise_a", "noise_b"}) split.relations.add(name);
  const int chain_entities = 3 * config.positives;
  const int total_entities = chain_entities + config.extra_entities;
  for (int e = 0; e < total_entities; ++e) split.entities.add("e" + std::to_string(e));
  auto extra = [&] { return chain_entities + uniform(0, std::max(0, config.extra_entities - 1)); };

  std::vector<Quadruple> planted;
  std::vector<Quadruple> body;
  for (int p = 0; p < config.positives; ++p) {
    const EntityId x = 3 * p, y = 3 * p + 1, z = 3 * p + 2;
    const Year t1 = uniform(1900, 1940);
    const Year a_end = t1 + uniform(0, 2);
    const Year t2 = a_end + uniform(1, 6);
    const Year h = uniform(1951, 2005);
    body.push_back({x, kFirst, y, Interval::span(t1, a_end)});
    body.push_back({y, kSecond, z, Interval::span(t2, 2010)});
    planted.push_back({x, kPlanted, z, Interval::span(h, h + uniform(0, 3))});
    auto decoy_interval = [&] {
      const Year de = t1 - uniform(1, 5);
      return Interval::span(de - uniform(0, 5), de);
    };
    for (int d = 0; d < config.decoys_per_positive; ++d) body.push_back({y, kSecond, extra(), decoy_interval()});
    if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < config.rival_fraction)
      body.push_back({y, kSecond, z, decoy_interval()});
  }
  for (int n = 0; n < config.noise_facts; ++n) {
    const EntityId s = uniform(0, total_entities - 1), o = uniform(0, total_entities - 1);
    const Year t = uniform(1900, 2005);
    body.push_back({s, uniform(0, 1) ? kNoiseA : kNoiseB, o, Interval::span(t, t + uniform(0, 10))});
  }

  std::shuffle(planted.begin(), planted.end(), rng);
  const auto n = planted.size();
  const auto n_test = static_cast<std::size_t>(config.test_fraction * static_cast<double>(n));
  const auto n_valid = static_cast<std::size_t>(config.valid_fraction * static_cast<double>(n));
  split.test.assign(planted.begin(), planted.begin() + static_cast<std::ptrdiff_t>(n_test));
  split.valid.assign(planted.begin() + static_cast<std::ptrdiff_t>(n_test),
                     planted.begin() + static_cast<std::ptrdiff_t>(n_test + n_valid));
  split.train.assign(planted.begin() + static_cast<std::ptrdiff_t>(n_test + n_valid), planted.end());
  split.train.insert(split.train.end(), body.begin(), body.end());
  std::sort(split.train.begin(), split.train.end());
  split.train.erase(std::unique(split.train.begin(), split.train.end()), split.train.end());

  using TR = TemporalRelation;
  out.rule = {kPlanted, {kFirst, kSecond}, {TR::Before, TR::Touching}, {TR::Before}};
  out.inverse_rule = {kPlanted + kBaseRelations,
                      {kSecond + kBaseRelations, kFirst + kBaseRelations},
                      {TR::Touching, TR::Before},
                      {TR::After}};
  return out;
}

}  // namespace tilp
