#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

namespace tilp {

// Yearly resolution; negative values are BCE years.
using Year = std::int32_t;

enum class EndpointKind : std::uint8_t { Known, Unknown, Present };

struct Endpoint {
  EndpointKind kind = EndpointKind::Unknown;
  Year year = 0;

  static constexpr Endpoint known(Year y) noexcept { return {EndpointKind::Known, y}; }
  static constexpr Endpoint unknown() noexcept { return {EndpointKind::Unknown, 0}; }
  static constexpr Endpoint present() noexcept { return {EndpointKind::Present, 0}; }

  constexpr bool is_known() const noexcept { return kind == EndpointKind::Known; }
  friend constexpr bool operator==(const Endpoint&, const Endpoint&) = default;
  friend constexpr auto operator<=>(const Endpoint&, const Endpoint&) = default;
};

// A closed year range [start, end]; a timestamp is an interval with start == end.
struct Interval {
  Endpoint start;
  Endpoint end;

  static constexpr Interval at(Year y) noexcept { return {Endpoint::known(y), Endpoint::known(y)}; }
  static constexpr Interval span(Year s, Year e) noexcept {
    return {Endpoint::known(s), Endpoint::known(e)};
  }

  // True when both endpoints are known years (Present and Unknown need resolution).
  constexpr bool fully_known() const noexcept { return start.is_known() && end.is_known(); }

  friend constexpr bool operator==(const Interval&, const Interval&) = default;
  friend constexpr auto operator<=>(const Interval&, const Interval&) = default;
};

// An interval whose endpoints are concrete years, ready for temporal comparison.
struct ResolvedInterval {
  Year start = 0;
  Year end = 0;

  friend constexpr bool operator==(const ResolvedInterval&, const ResolvedInterval&) = default;
  friend constexpr auto operator<=>(const ResolvedInterval&, const ResolvedInterval&) = default;
};

enum class TemporalRelation : std::uint8_t { Before = 0, Touching = 1, After = 2 };
inline constexpr int kNumTemporalRelations = 3;

// Before iff a ends strictly before b starts, After iff a starts strictly after b
// ends, Touching for every overlapping configuration.
constexpr TemporalRelation temporal_relation(ResolvedInterval a, ResolvedInterval b) noexcept {
  if (a.end < b.start) return TemporalRelation::Before;
  if (a.start > b.end) return TemporalRelation::After;
  return TemporalRelation::Touching;
}

// Throws ContractViolation unless both intervals have known endpoints.
TemporalRelation temporal_relation(const Interval& a, const Interval& b);

constexpr TemporalRelation converse(TemporalRelation tr) noexcept {
  switch (tr) {
    case TemporalRelation::Before: return TemporalRelation::After;
    case TemporalRelation::After: return TemporalRelation::Before;
    default: return TemporalRelation::Touching;
  }
}

// Replaces Present with `present_year`; throws ContractViolation on Unknown.
ResolvedInterval resolve(const Interval& interval, Year present_year);

std::string_view to_string(TemporalRelation tr) noexcept;
TemporalRelation parse_temporal_relation(std::string_view text);
std::string to_string(const Interval& interval);
std::string to_string(ResolvedInterval interval);

}  // namespace tilp
