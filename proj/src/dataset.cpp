#include "tilp/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <limits>

#include "tilp/errors.hpp"

namespace tilp {

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    auto next = line.find('\t', pos);
    out.push_back(line.substr(pos, next == std::string_view::npos ? next : next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

std::pair<Endpoint, bool> parse_endpoint(std::string_view token) {
  token = trim(token);
  if (token.empty()) return {Endpoint::unknown(), false};
  if (token == "present" || token == "Present" || token == "PRESENT")
    return {Endpoint::present(), false};

  std::size_t year_len = token.front() == '-' ? 1 : 0;
  while (year_len < token.size() && token[year_len] != '-') ++year_len;
  const auto year_part = token.substr(0, year_len);
  const bool had_suffix = year_len < token.size();
  if (year_part.find('#') != std::string_view::npos) return {Endpoint::unknown(), false};

  Year year = 0;
  auto [ptr, ec] = std::from_chars(year_part.data(), year_part.data() + year_part.size(), year);
  if (ec != std::errc{} || ptr != year_part.data() + year_part.size())
    throw ParseError("bad date token '" + std::string(token) + "'");
  if (had_suffix) {
    // Only date-like suffixes ("-07", "-07-15", "-##-##") are accepted.
    for (char c : token.substr(year_len))
      if (c != '-' && c != '#' && (c < '0' || c > '9'))
        throw ParseError("bad date token '" + std::string(token) + "'");
  }
  return {Endpoint::known(year), had_suffix && token.substr(year_len).find_first_of("0123456789") !=
                                                   std::string_view::npos};
}

std::vector<Quadruple> read_facts(std::istream& in, DatasetSplit& split, const LoadOptions& options) {
  std::vector<Quadruple> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto view = trim(line);
    if (view.empty()) continue;
    const auto fields = split_tabs(view);
    if (fields.size() != 4 && fields.size() != 5)
      throw ParseError("expected 5 tab-separated fields, got " + std::to_string(fields.size()),
                       line_no);
    for (std::size_t i = 0; i < 3; ++i)
      if (trim(fields[i]).empty()) throw ParseError("empty subject/relation/object", line_no);

    Quadruple q;
    q.subject = split.entities.add(trim(fields[0]));
    q.relation = split.relations.add(trim(fields[1]));
    q.object = split.entities.add(trim(fields[2]));
    try {
      auto [start, t1] = parse_endpoint(fields[3]);
      auto [end, t2] = fields.size() == 5 ? parse_endpoint(fields[4]) : std::pair{start, false};
      split.stats.truncated_dates += (t1 || t2) ? 1 : 0;
      for (auto* e : {&start, &end}) {
        if (e->is_known() && e->year > options.max_valid_year) {
          *e = Endpoint::unknown();
          ++split.stats.corrected_years;
        }
      }
      if (start.is_known() && end.is_known() && start.year > end.year) {
        std::swap(start, end);
        ++split.stats.swapped_intervals;
      }
      q.interval = {start, end};
    } catch (const ParseError& e) {
      throw ParseError(e.message(), e.line() ? e.line() : line_no);
    }
    ++split.stats.lines;
    out.push_back(q);
  }
  return out;
}

DatasetSplit load_dataset(const std::filesystem::path& train, const std::filesystem::path& valid,
                          const std::filesystem::path& test, const LoadOptions& options) {
  DatasetSplit split;
  auto read = [&](const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw ParseError("cannot open dataset file " + p.string());
    try {
      return read_facts(in, split, options);
    } catch (const ParseError& e) {
      throw ParseError(p.filename().string() + ": " + e.message(), e.line());
    }
  };
  split.train = read(train);
  split.valid = read(valid);
  split.test = read(test);
  return split;
}

std::vector<Quadruple> DatasetSplit::all() const {
  std::vector<Quadruple> out;
  out.reserve(train.size() + valid.size() + test.size());
  out.insert(out.end(), train.begin(), train.end());
  out.insert(out.end(), valid.begin(), valid.end());
  out.insert(out.end(), test.begin(), test.end());
  return out;
}

YearRange DatasetSplit::year_span() const {
  YearRange r{std::numeric_limits<Year>::max(), std::numeric_limits<Year>::min(), 0};
  for (const auto* part : {&train, &valid, &test})
    for (const auto& q : *part)
      for (const auto& e : {q.interval.start, q.interval.end})
        if (e.is_known()) {
          r.first = std::min(r.first, e.year);
          r.last = std::max(r.last, e.year);
        }
  if (r.first > r.last) r.first = r.last = 0;
  return r;
}

TemporalGraph DatasetSplit::graph(std::span<const Quadruple> facts) const {
  const auto span = year_span();
  return TemporalGraph::build(facts, entities.size(), relations.size(),
                              {.present_year = span.last, .min_year = span.first});
}

TemporalGraph DatasetSplit::all_graph() const {
  const auto facts = all();
  return graph(facts);
}

YearRange start_year_range(std::span<const Quadruple> facts) {
  YearRange r{std::numeric_limits<Year>::max(), std::numeric_limits<Year>::min(), 0};
  for (const auto& q : facts) {
    if (!q.interval.start.is_known()) {
      ++r.unknown_start;
      continue;
    }
    r.first = std::min(r.first, q.interval.start.year);
    r.last = std::max(r.last, q.interval.start.year);
  }
  if (r.first > r.last) r.first = r.last = 0;
  return r;
}

DatasetSplit time_shift_resplit(const DatasetSplit& data, Year b1, Year b2) {
  if (b1 >= b2)
    throw ContractViolation("time_shift_resplit: boundaries must satisfy b1 < b2 (got " +
                            std::to_string(b1) + ", " + std::to_string(b2) + ")");
  DatasetSplit out;
  out.entities = data.entities;
  out.relations = data.relations;
  out.stats = data.stats;
  for (const auto& q : data.all()) {
    if (!q.interval.start.is_known() || q.interval.start.year <= b1)
      out.train.push_back(q);
    else if (q.interval.start.year <= b2)
      out.valid.push_back(q);
    else
      out.test.push_back(q);
  }
  return out;
}

std::optional<ReferenceStats> reference_stats(std::string_view dataset_name) {
  static constexpr ReferenceStats kTable[] = {
      {"WIKIDATA12k", 32497, 4062, 4062, 12544, 24},
      {"YAGO11k", 16408, 2051, 2050, 10622, 10},
  };
  for (const auto& s : kTable)
    if (s.name == dataset_name) return s;
  return std::nullopt;
}

std::vector<std::string> validate_against_reference(std::string_view dataset_name,
                                                    const DatasetSplit& split) {
  std::vector<std::string> issues;
  const auto ref = reference_stats(dataset_name);
  if (!ref) return issues;
  auto check = [&](std::string_view what, std::size_t got, std::size_t want) {
    if (got != want)
      issues.push_back(std::string(what) + ": " + std::to_string(got) + " (expected " +
                       std::to_string(want) + ")");
  };
  check("train", split.train.size(), ref->train);
  check("valid", split.valid.size(), ref->valid);
  check("test", split.test.size(), ref->test);
  check("entities", static_cast<std::size_t>(split.entities.size()), ref->entities);
  check("relations", static_cast<std::size_t>(split.relations.size()), ref->relations);
  return issues;
}

nlohmann::json metadata_json(const DatasetSplit& split) {
  const auto span = split.year_span();
  return {
      {"entities", split.entities.names()},
      {"relations", split.relations.names()},
      {"num_entities", split.entities.size()},
      {"num_base_relations", split.relations.size()},
      {"train", split.train.size()},
      {"valid", split.valid.size()},
      {"test", split.test.size()},
      {"min_year", span.first},
      {"max_year", span.last},
      {"stats",
       {{"lines", split.stats.lines},
        {"truncated_dates", split.stats.truncated_dates},
        {"corrected_years", split.stats.corrected_years},
        {"swapped_intervals", split.stats.swapped_intervals}}},
  };
}

std::string endpoint_token(const Endpoint& e) {
  switch (e.kind) {
    case EndpointKind::Known: return std::to_string(e.year);
    case EndpointKind::Present: return "present";
    default: return "####";
  }
}

void save_snapshot(const std::filesystem::path& path, const TemporalGraph& graph,
                   const Vocabulary& entities, const Vocabulary& relations) {
  nlohmann::json facts = nlohmann::json::array();
  for (const auto& q : graph.base_facts())
    facts.push_back({q.subject, q.relation, q.object, endpoint_token(q.interval.start),
                     endpoint_token(q.interval.end)});
  nlohmann::json doc = {
      {"format", "tilp-graph-v1"},
      {"entities", entities.names()},
      {"relations", relations.names()},
      {"num_entities", graph.num_entities()},
      {"num_base_relations", graph.num_base_relations()},
      {"present_year", graph.present_year()},
      {"min_year", graph.min_year()},
      {"facts", std::move(facts)},
  };
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write snapshot " + path.string());
  out << doc.dump() << '\n';
}

GraphSnapshot load_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open snapshot " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("snapshot " + path.string() + ": " + e.what());
  }
  if (doc.value("format", "") != "tilp-graph-v1")
    throw ParseError("snapshot " + path.string() + ": unsupported format");
  GraphSnapshot snap;
  for (const auto& n : doc.at("entities")) snap.entities.add(n.get<std::string>());
  for (const auto& n : doc.at("relations")) snap.relations.add(n.get<std::string>());
  std::vector<Quadruple> facts;
  for (const auto& f : doc.at("facts")) {
    Quadruple q{f.at(0).get<EntityId>(), f.at(1).get<RelationId>(), f.at(2).get<EntityId>(), {}};
    q.interval = {parse_endpoint(f.at(3).get<std::string>()).first,
                  parse_endpoint(f.at(4).get<std::string>()).first};
    facts.push_back(q);
  }
  snap.graph = TemporalGraph::build(facts, doc.at("num_entities").get<std::int32_t>(),
                                    doc.at("num_base_relations").get<std::int32_t>(),
                                    {.present_year = doc.at("present_year").get<Year>(),
                                     .min_year = doc.at("min_year").get<Year>()});
  return snap;
}

}  // namespace tilp
