#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tilp/interval.hpp"

namespace tilp {

using EntityId = std::int32_t;
using RelationId = std::int32_t;
using FactIndex = std::int32_t;
using EdgeId = std::int32_t;

inline constexpr EdgeId kNoEdge = -1;

// Bidirectional name <-> dense id table.
class Vocabulary {
 public:
  std::int32_t add(std::string_view name);
  std::optional<std::int32_t> find(std::string_view name) const;
  const std::string& name(std::int32_t id) const { return names_.at(static_cast<std::size_t>(id)); }
  std::int32_t size() const noexcept { return static_cast<std::int32_t>(names_.size()); }
  const std::vector<std::string>& names() const noexcept { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::int32_t> index_;
};

// A base (non-inverse) fact as read from a dataset.
struct Quadruple {
  EntityId subject = 0;
  RelationId relation = 0;
  EntityId object = 0;
  Interval interval;

  friend bool operator==(const Quadruple&, const Quadruple&) = default;
  friend auto operator<=>(const Quadruple&, const Quadruple&) = default;
};

// A stored edge. A base fact and its inverse share `edge_id`.
struct Fact {
  EntityId subject = 0;
  RelationId relation = 0;
  EntityId object = 0;
  Interval interval;
  EdgeId edge_id = 0;

  friend bool operator==(const Fact&, const Fact&) = default;
};

// Maps a fact to concrete years. Must be deterministic.
using IntervalResolver = std::function<ResolvedInterval(const Fact&)>;

// Immutable, indexed fact store. Every base fact (s, r, o, I) at index 2k is
// followed by its inverse (o, r + |R_base|, s, I) at index 2k + 1.
class TemporalGraph {
 public:
  struct Options {
    std::optional<Year> present_year;  // defaults to the max known year of the facts
    std::optional<Year> min_year;
  };

  TemporalGraph() = default;

  // Deduplicates exact quadruples (count kept in duplicates_removed()).
  static TemporalGraph build(std::span<const Quadruple> facts, std::int32_t num_entities,
                             std::int32_t num_base_relations, const Options& options);
  static TemporalGraph build(std::span<const Quadruple> facts, std::int32_t num_entities,
                             std::int32_t num_base_relations) {
    return build(facts, num_entities, num_base_relations, Options{});
  }

  std::span<const Fact> facts() const noexcept { return facts_; }
  const Fact& fact(FactIndex i) const { return facts_[static_cast<std::size_t>(i)]; }
  std::size_t size() const noexcept { return facts_.size(); }

  std::span<const FactIndex> outgoing(EntityId subject) const;
  std::span<const FactIndex> outgoing(EntityId subject, RelationId relation) const;
  std::span<const FactIndex> with_relation(RelationId relation) const;

  std::int32_t num_entities() const noexcept { return num_entities_; }
  std::int32_t num_base_relations() const noexcept { return num_base_relations_; }
  std::int32_t num_relations() const noexcept { return 2 * num_base_relations_; }

  RelationId inverse(RelationId r) const noexcept {
    return r < num_base_relations_ ? r + num_base_relations_ : r - num_base_relations_;
  }
  static constexpr FactIndex partner(FactIndex i) noexcept { return i ^ 1; }

  Year present_year() const noexcept { return present_year_; }
  Year min_year() const noexcept { return min_year_; }
  std::size_t duplicates_removed() const noexcept { return duplicates_removed_; }

  // Resolved interval of a fact. Present maps to present_year(); an Unknown
  // endpoint throws ContractViolation unless with_resolution() was applied.
  ResolvedInterval resolved(FactIndex i) const {
    const auto k = static_cast<std::size_t>(i);
    if (!is_resolved_[k]) unresolved_error(i);
    return resolved_[k];
  }
  bool has_unresolved() const noexcept { return unresolved_count_ > 0; }

  // Copy whose facts with Unknown endpoints are resolved through `resolver`.
  TemporalGraph with_resolution(const IntervalResolver& resolver) const;

  // The base quadruples, in storage order (inverses dropped).
  std::vector<Quadruple> base_facts() const;

 private:
  [[noreturn]] void unresolved_error(FactIndex i) const;

  std::vector<Fact> facts_;
  std::vector<ResolvedInterval> resolved_;
  std::vector<std::uint8_t> is_resolved_;
  std::vector<std::int32_t> subject_offsets_;
  std::vector<FactIndex> subject_index_;  // sorted by (subject, relation, fact index)
  std::vector<std::int32_t> relation_offsets_;
  std::vector<FactIndex> relation_index_;
  std::int32_t num_entities_ = 0;
  std::int32_t num_base_relations_ = 0;
  Year present_year_ = 0;
  Year min_year_ = 0;
  std::size_t duplicates_removed_ = 0;
  std::size_t unresolved_count_ = 0;
};

// A link-prediction query (subject, relation, ?, interval). `excluded_edge`
// hides one stored edge (the positive example itself during training).
struct Query {
  EntityId subject = 0;
  RelationId relation = 0;
  ResolvedInterval interval;
  std::optional<EntityId> answer;
  EdgeId excluded_edge = kNoEdge;
};

}  // namespace tilp
