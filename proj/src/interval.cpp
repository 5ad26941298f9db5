#include "tilp/interval.hpp"

#include "tilp/errors.hpp"

namespace tilp {

TemporalRelation temporal_relation(const Interval& a, const Interval& b) {
  if (!a.fully_known() || !b.fully_known())
    throw ContractViolation("temporal_relation: unresolved endpoint in " + to_string(a) + " or " +
                            to_string(b) + "; impute or resolve first");
  return temporal_relation(ResolvedInterval{a.start.year, a.end.year},
                           ResolvedInterval{b.start.year, b.end.year});
}

ResolvedInterval resolve(const Interval& interval, Year present_year) {
  auto pick = [&](const Endpoint& e) {
    switch (e.kind) {
      case EndpointKind::Known: return e.year;
      case EndpointKind::Present: return present_year;
      default: throw ContractViolation("resolve: unknown endpoint in " + to_string(interval));
    }
  };
  return {pick(interval.start), pick(interval.end)};
}

std::string_view to_string(TemporalRelation tr) noexcept {
  switch (tr) {
    case TemporalRelation::Before: return "before";
    case TemporalRelation::After: return "after";
    default: return "touching";
  }
}

TemporalRelation parse_temporal_relation(std::string_view text) {
  if (text == "before") return TemporalRelation::Before;
  if (text == "touching") return TemporalRelation::Touching;
  if (text == "after") return TemporalRelation::After;
  throw ParseError("unknown temporal relation '" + std::string(text) + "'");
}

namespace {
std::string endpoint_text(const Endpoint& e) {
  switch (e.kind) {
    case EndpointKind::Known: return std::to_string(e.year);
    case EndpointKind::Present: return "present";
    default: return "?";
  }
}
}  // namespace

std::string to_string(const Interval& interval) {
  return "[" + endpoint_text(interval.start) + ", " + endpoint_text(interval.end) + "]";
}

std::string to_string(ResolvedInterval interval) {
  return "[" + std::to_string(interval.start) + ", " + std::to_string(interval.end) + "]";
}

}  // namespace tilp
