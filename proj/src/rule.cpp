#include "tilp/rule.hpp"

#include <istream>
#include <ostream>
#include <sstream>

#include "tilp/errors.hpp"

namespace tilp {

void RuleTemplate::validate(std::int32_t num_relations) const {
  const int l = length();
  if (l < 1) throw ContractViolation("rule has no body");
  if (query_relations.size() != static_cast<std::size_t>(l) || pair_relations.size() != num_pairs(l))
    throw ContractViolation("rule temporal relation count does not match its length");
  for (auto p : predicates)
    if (p < 0 || p >= num_relations) throw ContractViolation("rule predicate out of vocabulary");
  if (head < 0 || head >= num_relations) throw ContractViolation("rule head out of vocabulary");
}

std::size_t RuleTemplateHash::operator()(const RuleTemplate& rule) const noexcept {
  std::size_t h = std::hash<RelationId>{}(rule.head);
  auto mix = [&](std::size_t v) { h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2); };
  for (auto p : rule.predicates) mix(static_cast<std::size_t>(p));
  for (auto t : rule.query_relations) mix(static_cast<std::size_t>(t) + 101);
  for (auto t : rule.pair_relations) mix(static_cast<std::size_t>(t) + 211);
  return h;
}

nlohmann::json to_json(const LearnedRule& learned) {
  const auto& rule = learned.rule;
  const int l = rule.length();
  nlohmann::json tr_query = nlohmann::json::array();
  for (auto t : rule.query_relations) tr_query.push_back(to_string(t));
  nlohmann::json tr_pairs = nlohmann::json::object();
  for (int j = 0; j < l; ++j)
    for (int k = j + 1; k < l; ++k)
      tr_pairs["(" + std::to_string(j + 1) + "," + std::to_string(k + 1) + ")"] =
          to_string(rule.pair(j, k));
  return {{"head", rule.head},
          {"length", l},
          {"predicates", rule.predicates},
          {"tr_query", std::move(tr_query)},
          {"tr_pairs", std::move(tr_pairs)},
          {"discovery_count", learned.discovery_count}};
}

LearnedRule learned_rule_from_json(const nlohmann::json& j) {
  LearnedRule out;
  auto& rule = out.rule;
  rule.head = j.at("head").get<RelationId>();
  rule.predicates = j.at("predicates").get<std::vector<RelationId>>();
  const int l = j.at("length").get<int>();
  if (l != rule.length()) throw ParseError("rule length does not match predicate count");
  for (const auto& t : j.at("tr_query")) rule.query_relations.push_back(parse_temporal_relation(t.get<std::string>()));
  rule.pair_relations.resize(RuleTemplate::num_pairs(l));
  const auto& pairs = j.at("tr_pairs");
  for (int a = 0; a < l; ++a)
    for (int b = a + 1; b < l; ++b) {
      const auto key = "(" + std::to_string(a + 1) + "," + std::to_string(b + 1) + ")";
      if (!pairs.contains(key)) throw ParseError("rule is missing pair " + key);
      rule.pair_relations[RuleTemplate::pair_index(a, b, l)] =
          parse_temporal_relation(pairs.at(key).get<std::string>());
    }
  if (rule.query_relations.size() != static_cast<std::size_t>(l))
    throw ParseError("rule tr_query size does not match length");
  out.discovery_count = j.value("discovery_count", std::size_t{0});
  return out;
}

void write_rules_jsonl(std::ostream& out, const RuleSet& rules, const Vocabulary* relation_names) {
  for (const auto& [head, list] : rules)
    for (const auto& r : list) {
      auto j = to_json(r);
      if (relation_names) j["text"] = render_rule(r.rule, *relation_names);
      out << j.dump() << '\n';
    }
}

RuleSet read_rules_jsonl(std::istream& in) {
  RuleSet rules;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.contains("meta")) continue;  // provenance header
      auto r = learned_rule_from_json(j);
      rules[r.rule.head].push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("rules file: ") + e.what(), line_no);
    } catch (const ParseError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return rules;
}

std::string relation_name(RelationId r, const Vocabulary& base_relations) {
  const auto base = base_relations.size();
  if (r < base) return base_relations.name(r);
  return base_relations.name(r - base) + "^-1";
}

std::string render_rule(const RuleTemplate& rule, const Vocabulary& base_relations) {
  const int l = rule.length();
  auto var = [](char c, int i) { return std::string(1, c) + std::to_string(i); };
  std::ostringstream os;
  os << relation_name(rule.head, base_relations) << "(E1," << var('E', l + 1) << ","
     << var('I', l + 1) << ") <- ";
  for (int i = 0; i < l; ++i) {
    if (i) os << " ^ ";
    os << relation_name(rule.predicates[static_cast<std::size_t>(i)], base_relations) << "("
       << var('E', i + 1) << "," << var('E', i + 2) << "," << var('I', i + 1) << ")";
  }
  for (int j = 0; j < l; ++j) {
    for (int k = j + 1; k < l; ++k)
      os << " ^ " << to_string(rule.pair(j, k)) << "(" << var('I', j + 1) << "," << var('I', k + 1) << ")";
    os << " ^ " << to_string(rule.query_relations[static_cast<std::size_t>(j)]) << "("
       << var('I', j + 1) << "," << var('I', l + 1) << ")";
  }
  return os.str();
}

}  // namespace tilp
