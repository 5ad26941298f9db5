#pragma once

#include <cstdint>

#include "tilp/dataset.hpp"
#include "tilp/rule.hpp"

namespace tilp {

// A small tKG with one planted length-2 rule
//   planted(X, Z, I3) <- first(X, Y, I1) ^ second(Y, Z, I2)
//                        ^ before(I1, I2) ^ before(I1, I3) ^ touching(I2, I3)
// Body facts start in 1900..1950; every `second` fact stays open until 2010 and
// each planted fact starts in 1951..2005 inside it. Decoy `second` edges end
// before `first` begins, so only the temporal constraints separate the answer
// from the decoys. Planted facts are split into train/valid/test; every body,
// decoy and noise fact goes to train.
struct PlantedConfig {
  int positives = 200;
  int decoys_per_positive = 2;
  int extra_entities = 100;
  int noise_facts = 400;
  double valid_fraction = 0.1;
  double test_fraction = 0.1;
  std::uint64_t seed = 7;
  // Share of positives whose object is also reached through a decoy-timed
  // second edge, so the same predicates with another temporal pattern get
  // discovered as a competing rule.
  double rival_fraction = 0.25;
};

struct PlantedDataset {
  DatasetSplit split;
  RuleTemplate rule;          // object direction
  RuleTemplate inverse_rule;  // subject direction (head planted^-1)
};

PlantedDataset make_planted_dataset(const PlantedConfig& config = {});

}  // namespace tilp
