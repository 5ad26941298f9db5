#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tilp/graph.hpp"
#include "tilp/interval.hpp"

namespace tilp {

// A chain rule of length l:
//   head(E1, E_{l+1}, I_{l+1}) <- AND_i predicates[i](E_i, E_{i+1}, I_i)
//                                 AND_i query_relations[i](I_i, I_{l+1})
//                                 AND_{j<k<=l} pair_relations[pair_index(j,k)](I_j, I_k)
// All step indices are 0-based.
struct RuleTemplate {
  RelationId head = 0;
  std::vector<RelationId> predicates;
  std::vector<TemporalRelation> query_relations;
  std::vector<TemporalRelation> pair_relations;

  int length() const noexcept { return static_cast<int>(predicates.size()); }

  static constexpr std::size_t num_pairs(int l) noexcept {
    return static_cast<std::size_t>(l) * static_cast<std::size_t>(l > 0 ? l - 1 : 0) / 2;
  }
  // Row-major index of the (j, k) pair, j < k < l.
  static constexpr std::size_t pair_index(int j, int k, int l) noexcept {
    return static_cast<std::size_t>(j * (2 * l - j - 1) / 2 + (k - j - 1));
  }
  TemporalRelation pair(int j, int k) const { return pair_relations.at(pair_index(j, k, length())); }

  // Throws ContractViolation when vector sizes disagree with the length.
  void validate(std::int32_t num_relations) const;

  friend bool operator==(const RuleTemplate&, const RuleTemplate&) = default;
  friend auto operator<=>(const RuleTemplate&, const RuleTemplate&) = default;
};

struct RuleTemplateHash {
  std::size_t operator()(const RuleTemplate& rule) const noexcept;
};

// A deduplicated rule with the number of (example, walk) discoveries behind it.
struct LearnedRule {
  RuleTemplate rule;
  std::size_t discovery_count = 0;
};

// Rules grouped by head predicate (inverse relations included).
using RuleSet = std::map<RelationId, std::vector<LearnedRule>>;

nlohmann::json to_json(const LearnedRule& rule);
LearnedRule learned_rule_from_json(const nlohmann::json& j);

// One JSON object per line: {head, length, predicates, tr_query, tr_pairs, discovery_count}.
// Lines carrying a "meta" key are provenance headers and are skipped on read.
void write_rules_jsonl(std::ostream& out, const RuleSet& rules,
                       const Vocabulary* relation_names = nullptr);
RuleSet read_rules_jsonl(std::istream& in);

// Display name of a relation id; inverses get a "^-1" suffix.
std::string relation_name(RelationId r, const Vocabulary& base_relations);

// Renders e.g. "receiveAward(E1,E3,I3) <- nominatedFor(E1,E2,I1) ^ ... ^ before(I1,I2)".
std::string render_rule(const RuleTemplate& rule, const Vocabulary& base_relations);

}  // namespace tilp
