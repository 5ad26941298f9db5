#include "tilp/tfm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include <boost/math/distributions/normal.hpp>

#include "tilp/attention.hpp"
#include "tilp/errors.hpp"

namespace tilp {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;

// log(1 - Phi(a)), stable far into the upper tail.
double log_upper_tail(double a) {
  if (a < 30.0) return std::log(0.5 * std::erfc(a / std::numbers::sqrt2));
  const double a2 = a * a;
  return -0.5 * a2 - std::log(a) - kLogSqrt2Pi + std::log1p(-1.0 / a2 + 3.0 / (a2 * a2));
}

double sigmoid(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }

std::uint64_t splitmix(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t h, std::int64_t v) noexcept {
  return splitmix(h ^ static_cast<std::uint64_t>(v));
}

double unit_draw(std::uint64_t h) noexcept {
  return static_cast<double>(splitmix(h) >> 11) * 0x1.0p-53;
}

// Minimizes f over R^2 with the Nelder-Mead simplex method.
template <typename F>
Eigen::Vector2d nelder_mead(F&& f, Eigen::Vector2d x0, Eigen::Vector2d step, int max_iter = 2000,
                            double tol = 1e-12) {
  std::array<Eigen::Vector2d, 3> p{x0, x0 + Eigen::Vector2d(step.x(), 0), x0 + Eigen::Vector2d(0, step.y())};
  std::array<double, 3> fv{f(p[0]), f(p[1]), f(p[2])};
  for (int it = 0; it < max_iter; ++it) {
    std::array<int, 3> idx{0, 1, 2};
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return fv[a] < fv[b]; });
    const int best = idx[0], mid = idx[1], worst = idx[2];
    if (std::abs(fv[worst] - fv[best]) <= tol * (1.0 + std::abs(fv[best])) &&
        (p[worst] - p[best]).norm() <= 1e-9)
      break;
    const Eigen::Vector2d centroid = 0.5 * (p[best] + p[mid]);
    const Eigen::Vector2d xr = centroid + (centroid - p[worst]);
    const double fr = f(xr);
    if (fr < fv[best]) {
      const Eigen::Vector2d xe = centroid + 2.0 * (centroid - p[worst]);
      const double fe = f(xe);
      if (fe < fr) {
        p[worst] = xe, fv[worst] = fe;
      } else {
        p[worst] = xr, fv[worst] = fr;
      }
    } else if (fr < fv[mid]) {
      p[worst] = xr, fv[worst] = fr;
    } else {
      const bool outside = fr < fv[worst];
      const Eigen::Vector2d xc = outside ? Eigen::Vector2d(centroid + 0.5 * (xr - centroid))
                                         : Eigen::Vector2d(centroid + 0.5 * (p[worst] - centroid));
      const double fc = f(xc);
      if (fc < (outside ? fr : fv[worst])) {
        p[worst] = xc, fv[worst] = fc;
      } else {
        for (int i : {mid, worst}) {
          p[i] = p[best] + 0.5 * (p[i] - p[best]);
          fv[i] = f(p[i]);
        }
      }
    }
  }
  const auto best = static_cast<std::size_t>(std::min_element(fv.begin(), fv.end()) - fv.begin());
  return p[best];
}

}  // namespace

// ---- distributions --------------------------------------------------------

double bernoulli_h(double p, bool x) noexcept { return x ? p : 1.0 - p; }

double gaussian_density(double x, double mean, double stddev) noexcept {
  const double z = (x - mean) / stddev;
  return std::exp(-0.5 * z * z - kLogSqrt2Pi) / stddev;
}

double exponential_density(double x, double rate) noexcept {
  return x < 0 ? 0.0 : rate * std::exp(-rate * x);
}

BernoulliFit fit_bernoulli(std::size_t successes, std::size_t n) {
  if (n < 2) return {0.5, n, true};
  return {static_cast<double>(successes) / static_cast<double>(n), n, false};
}

GaussianFit fit_gaussian(std::span<const double> xs) {
  if (xs.empty()) return {};
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::max(kMinStddev, std::sqrt(ss / n))};
}

double fit_exponential_rate(std::span<const double> xs) {
  if (xs.empty()) return 1.0 / kMinGapMean;
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  return 1.0 / std::max(kMinGapMean, mean);
}

GapDistribution fit_gap_distribution(std::span<const double> gaps) {
  GapDistribution d;
  d.n = gaps.size();
  if (gaps.size() < 2) return d;
  d.fallback = false;
  const auto g = fit_gaussian(gaps);
  const double rate = fit_exponential_rate(gaps);
  double ll_gauss = 0.0, ll_exp = 0.0;
  for (double x : gaps) {
    const double z = (x - g.mean) / g.stddev;
    ll_gauss += -0.5 * z * z - kLogSqrt2Pi - std::log(g.stddev);
    ll_exp += std::log(rate) - rate * x;
  }
  d.mean = g.mean;
  d.stddev = g.stddev;
  d.rate = rate;
  d.model = ll_exp > ll_gauss ? GapModel::Exponential : GapModel::Gaussian;
  return d;
}

double TruncatedGaussian::log_likelihood(std::span<const double> xs) const {
  const double norm = std::log(stddev) + log_upper_tail(-mean / stddev);
  double ll = 0.0;
  for (double x : xs) {
    const double z = (x - mean) / stddev;
    ll += -0.5 * z * z - kLogSqrt2Pi - norm;
  }
  return ll;
}

double TruncatedGaussian::sample(double u) const {
  if (stddev <= 1e-12) return std::max(0.0, mean);
  const double z0 = -mean / stddev;
  double z;
  if (z0 > 30.0) {
    // Deep truncation: the tail is effectively exponential with rate z0.
    z = z0 - std::log1p(-u) / z0;
  } else {
    static const boost::math::normal_distribution<double> unit;
    const double tail = std::exp(log_upper_tail(z0));
    const double q = std::clamp((1.0 - u) * tail, std::numeric_limits<double>::min(), 1.0);
    z = std::max(z0, boost::math::quantile(boost::math::complement(unit, q)));
  }
  return std::max(0.0, mean + stddev * z);
}

TruncatedGaussian fit_truncated_gaussian(std::span<const double> xs) {
  TruncatedGaussian t;
  t.n = xs.size();
  if (xs.size() < 2) {
    if (xs.size() == 1) t.mean = xs[0];
    return t;
  }
  t.fallback = false;
  const auto g = fit_gaussian(xs);
  auto objective = [&](const Eigen::Vector2d& theta) {
    TruncatedGaussian probe;
    probe.mean = theta.x();
    probe.stddev = std::max(kMinStddev, std::exp(theta.y()));
    const double ll = probe.log_likelihood(xs);
    return std::isfinite(ll) ? -ll : std::numeric_limits<double>::max();
  };
  const Eigen::Vector2d best = nelder_mead(objective, Eigen::Vector2d(g.mean, std::log(g.stddev)),
                                           Eigen::Vector2d(std::max(1.0, g.stddev), 0.5));
  t.mean = best.x();
  t.stddev = std::max(kMinStddev, std::exp(best.y()));
  return t;
}

// ---- evidence -------------------------------------------------------------

bool EvidencePart::contains(RelationId r) const {
  return std::binary_search(relations.begin(), relations.end(), r);
}

void EvidencePart::add(RelationId r, Year start, Year query_start) {
  const auto it = std::lower_bound(relations.begin(), relations.end(), r);
  const auto pos = static_cast<std::size_t>(it - relations.begin());
  if (it == relations.end() || *it != r) {
    relations.insert(it, r);
    closest_start.insert(closest_start.begin() + static_cast<std::ptrdiff_t>(pos), start);
    return;
  }
  Year& cur = closest_start[pos];
  const auto d_new = std::abs(static_cast<std::int64_t>(start) - query_start);
  const auto d_cur = std::abs(static_cast<std::int64_t>(cur) - query_start);
  if (d_new < d_cur || (d_new == d_cur && start < cur)) cur = start;
}

EvidenceSets collect_evidence(const TemporalGraph& graph, EntityId subject, Year query_start,
                              EntityId candidate, EdgeId excluded_edge) {
  EvidenceSets ev;
  for (FactIndex i : graph.outgoing(candidate)) {
    const auto& f = graph.fact(i);
    if (f.edge_id == excluded_edge) continue;
    ev.parts[f.object == subject ? 0 : 1].add(f.relation, graph.resolved(i).start, query_start);
  }
  return ev;
}

void add_walk_evidence(const TemporalGraph& graph, std::span<const FactIndex> walk, Year query_start,
                       EvidencePart& part) {
  for (FactIndex i : walk) part.add(graph.fact(i).relation, graph.resolved(i).start, query_start);
}

// ---- fitting --------------------------------------------------------------

const TruncatedGaussian& DistributionParams::duration_for(RelationId r) const {
  if (r < 0 || static_cast<std::size_t>(r) >= duration.size()) return global_duration;
  const auto& d = duration[static_cast<std::size_t>(r)];
  return d.fallback ? global_duration : d;
}

namespace {

void ensure_tables(DistributionParams& params, int num_relations) {
  if (params.num_relations == num_relations && params.duration.size() == static_cast<std::size_t>(num_relations))
    return;
  const auto n = static_cast<std::size_t>(num_relations);
  params.num_relations = num_relations;
  for (auto& t : params.recurrence) t.assign(n, BernoulliFit{});
  for (auto& t : params.order) t.assign(n * n, BernoulliFit{});
  for (auto& t : params.pair) t.assign(n * n, GapDistribution{});
  params.duration.assign(n, TruncatedGaussian{});
}

}  // namespace

void fit_durations(const TemporalGraph& graph, DistributionParams& params) {
  ensure_tables(params, graph.num_relations());
  const auto base = static_cast<std::size_t>(graph.num_base_relations());
  std::vector<std::vector<double>> per(base);
  std::vector<double> all;
  for (std::size_t i = 0; i < graph.size(); i += 2) {
    const auto& f = graph.fact(static_cast<FactIndex>(i));
    if (!f.interval.fully_known()) continue;
    const double d = f.interval.end.year - f.interval.start.year;
    per[static_cast<std::size_t>(f.relation)].push_back(d);
    all.push_back(d);
  }
  params.global_duration = fit_truncated_gaussian(all);
  for (std::size_t r = 0; r < base; ++r) {
    params.duration[r] = fit_truncated_gaussian(per[r]);
    params.duration[r + base] = params.duration[r];
  }
}

void fit_feature_tables(std::span<const FitSample> samples, DistributionParams& params) {
  const auto n = static_cast<std::size_t>(params.num_relations);
  if (n == 0) throw ContractViolation("fit_feature_tables: tables not sized (fit durations first)");
  std::array<std::vector<std::size_t>, 2> rec_n, rec_k;
  std::array<std::vector<std::size_t>, kEvidenceParts> ord_n, ord_k;
  std::array<std::vector<std::vector<double>>, kEvidenceParts> gaps;
  for (int k = 0; k < 2; ++k) rec_n[k].assign(n, 0), rec_k[k].assign(n, 0);
  for (int k = 0; k < kEvidenceParts; ++k) {
    ord_n[k].assign(n * n, 0);
    ord_k[k].assign(n * n, 0);
    gaps[k].assign(n * n, {});
  }
  for (const auto& s : samples) {
    const auto r = static_cast<std::size_t>(s.relation);
    for (int k = 0; k < 2; ++k) {
      ++rec_n[k][r];
      if (s.evidence.parts[k].contains(s.relation)) ++rec_k[k][r];
    }
    for (int k = 0; k < kEvidenceParts; ++k) {
      const auto& part = s.evidence.parts[k];
      for (std::size_t e = 0; e < part.relations.size(); ++e) {
        const auto cell = params.at(s.relation, part.relations[e]);
        const Year t = part.closest_start[e];
        ++ord_n[k][cell];
        if (s.query_start < t) ++ord_k[k][cell];
        gaps[k][cell].push_back(std::abs(static_cast<double>(s.query_start) - t));
      }
    }
  }
  for (int k = 0; k < 2; ++k)
    for (std::size_t r = 0; r < n; ++r) params.recurrence[k][r] = fit_bernoulli(rec_k[k][r], rec_n[k][r]);
  for (int k = 0; k < kEvidenceParts; ++k)
    for (std::size_t c = 0; c < n * n; ++c) {
      params.order[k][c] = fit_bernoulli(ord_k[k][c], ord_n[k][c]);
      params.pair[k][c] = fit_gap_distribution(gaps[k][c]);
    }
}

DistributionParams fit_distributions(const TemporalGraph& graph) {
  DistributionParams params;
  fit_durations(graph, params);
  const TemporalGraph resolved =
      graph.has_unresolved()
          ? graph.with_resolution(Imputer(&params, 0, graph.min_year(), graph.present_year()))
          : graph;
  std::vector<FitSample> samples;
  samples.reserve(resolved.size());
  for (std::size_t i = 0; i < resolved.size(); ++i) {
    const auto fi = static_cast<FactIndex>(i);
    const auto& f = resolved.fact(fi);
    const Year ts = resolved.resolved(fi).start;
    samples.push_back({f.relation, ts, collect_evidence(resolved, f.subject, ts, f.object, f.edge_id)});
  }
  fit_feature_tables(samples, params);
  return params;
}

// ---- imputation -----------------------------------------------------------

ResolvedInterval Imputer::resolve(EntityId subject, RelationId relation, EntityId object,
                                  const Interval& iv) const {
  auto year_of = [&](const Endpoint& e) -> std::optional<Year> {
    if (e.kind == EndpointKind::Known) return e.year;
    if (e.kind == EndpointKind::Present) return present_year_;
    return std::nullopt;
  };
  const auto s = year_of(iv.start);
  const auto e = year_of(iv.end);
  if (s && e) return {*s, std::max(*s, *e)};
  if (!s && !e) return {min_year_, present_year_};

  std::uint64_t h = mix(mix(mix(splitmix(seed_), subject), relation), object);
  h = mix(mix(h, static_cast<int>(iv.start.kind)), iv.start.year);
  h = mix(mix(h, static_cast<int>(iv.end.kind)), iv.end.year);
  const auto& dist = params_ ? params_->duration_for(relation) : TruncatedGaussian{};
  const auto d = static_cast<Year>(std::lround(dist.sample(unit_draw(h))));
  if (s) return {*s, *s + d};
  return {*e - d, *e};
}

ResolvedInterval Imputer::operator()(const Fact& fact) const {
  return resolve(fact.subject, fact.relation, fact.object, fact.interval);
}

Interval impute_duration(const Fact& fact, const DistributionParams& params, std::uint64_t seed) {
  if (!fact.interval.start.is_known() || fact.interval.end.kind != EndpointKind::Unknown)
    throw ContractViolation("impute_duration: needs a known start and an unknown end");
  const Imputer imputer(&params, seed, fact.interval.start.year, fact.interval.start.year);
  const auto r = imputer(fact);
  return Interval::span(r.start, r.end);
}

// ---- scoring --------------------------------------------------------------

double integrate_scores(std::span<const double> h, std::span<const double> w,
                        std::span<const double> b) {
  if (h.empty()) return 0.0;
  const double top = *std::max_element(w.begin(), w.end());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double e = std::exp(w[i] - top);
    num += e * (h[i] + b[i]);
    den += e;
  }
  return num / den;
}

TfmFeatures compute_features(const DistributionParams& params, RelationId relation, Year query_start,
                             const EvidenceSets& evidence) {
  TfmFeatures f;
  const auto r = static_cast<std::size_t>(relation);
  for (int k = 0; k < 2; ++k)
    f.recurrence[k] = bernoulli_h(params.recurrence[k][r].p, evidence.parts[k].contains(relation));
  for (int k = 0; k < kEvidenceParts; ++k) {
    const auto& part = evidence.parts[k];
    for (std::size_t e = 0; e < part.relations.size(); ++e) {
      const RelationId r2 = part.relations[e];
      const Year t = part.closest_start[e];
      const auto cell = params.at(relation, r2);
      f.order[k].emplace_back(r2, bernoulli_h(params.order[k][cell].p, query_start < t));
      f.pair[k].emplace_back(r2, params.pair[k][cell].density(std::abs(static_cast<double>(query_start) - t)));
    }
  }
  return f;
}

double softplus(double x) noexcept { return x > 30 ? x : std::log1p(std::exp(x)); }

double inverse_softplus(double y) {
  if (y <= 0) throw ContractViolation("inverse_softplus: needs a positive value");
  return y > 30 ? y : std::log(std::expm1(y));
}

namespace {

template <typename W, typename F>
void visit_blocks(W& w, F&& f) {
  for (auto& v : w.rec_w) f(v.data(), v.size());
  for (auto& v : w.rec_b) f(v.data(), v.size());
  for (auto& m : w.order_w) f(m.data(), m.size());
  for (auto& m : w.order_b) f(m.data(), m.size());
  for (auto& m : w.pair_w) f(m.data(), m.size());
  for (auto& m : w.pair_b) f(m.data(), m.size());
  for (auto& v : w.part_mix) f(v.data(), v.size());
  f(w.part_gamma.data(), w.part_gamma.size());
  f(&w.tlr_gamma, Eigen::Index{1});
  f(&w.tfm_gamma, Eigen::Index{1});
}

TfmWeights zeros_like(int num_relations) {
  TfmWeights w;
  w.num_relations = num_relations;
  const Eigen::Index n = num_relations;
  for (int k = 0; k < 2; ++k) w.rec_w[k] = w.rec_b[k] = Eigen::VectorXd::Zero(n);
  for (int k = 0; k < kEvidenceParts; ++k) {
    w.order_w[k] = w.order_b[k] = w.pair_w[k] = w.pair_b[k] = Eigen::MatrixXd::Zero(n, n);
    w.part_mix[k] = Eigen::VectorXd::Zero(k == 2 ? 2 : 3);
  }
  w.part_gamma.setZero();
  return w;
}

// One integrated feature score: effective weights a_i (softmax of w) and the value.
struct Integrated {
  std::vector<double> a;
  double value = 0.0;
};

Integrated integrate_row(const std::vector<std::pair<RelationId, double>>& entries,
                         const Eigen::MatrixXd& w, const Eigen::MatrixXd& b, RelationId r) {
  Integrated out;
  if (entries.empty()) return out;
  out.a.resize(entries.size());
  double top = -std::numeric_limits<double>::infinity();
  for (const auto& [r2, h] : entries) top = std::max(top, w(r, r2));
  double den = 0.0;
  for (std::size_t i = 0; i < entries.size(); ++i) den += out.a[i] = std::exp(w(r, entries[i].first) - top);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    out.a[i] /= den;
    out.value += out.a[i] * (entries[i].second + softplus(b(r, entries[i].first)));
  }
  return out;
}

void integrate_backward(const std::vector<std::pair<RelationId, double>>& entries, const Integrated& fwd,
                        const Eigen::MatrixXd& b, RelationId r, double upstream, Eigen::MatrixXd& gw,
                        Eigen::MatrixXd& gb) {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const RelationId r2 = entries[i].first;
    const double bi = b(r, r2);
    gw(r, r2) += upstream * fwd.a[i] * (entries[i].second + softplus(bi) - fwd.value);
    gb(r, r2) += upstream * fwd.a[i] * sigmoid(bi);
  }
}

}  // namespace

TfmWeights TfmWeights::initial(int num_relations) {
  TfmWeights w = zeros_like(num_relations);
  const double one = inverse_softplus(1.0);
  for (int k = 0; k < 2; ++k) {
    w.rec_w[k].setConstant(one);
    w.rec_b[k].setConstant(-6.0);
  }
  for (int k = 0; k < kEvidenceParts; ++k) {
    w.order_b[k].setConstant(-6.0);
    w.pair_b[k].setConstant(-6.0);
  }
  w.part_gamma.setConstant(one);
  w.tlr_gamma = one;
  w.tfm_gamma = one;
  return w;
}

std::size_t TfmWeights::parameter_count() const {
  std::size_t n = 0;
  visit_blocks(*this, [&](const double*, Eigen::Index size) { n += static_cast<std::size_t>(size); });
  return n;
}

std::vector<double> TfmWeights::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  visit_blocks(*this, [&](const double* d, Eigen::Index size) { out.insert(out.end(), d, d + size); });
  return out;
}

void TfmWeights::unflatten(std::span<const double> flat) {
  std::size_t at = 0;
  visit_blocks(*this, [&](double* d, Eigen::Index size) {
    const auto n = static_cast<std::size_t>(size);
    if (at + n > flat.size()) throw ContractViolation("TfmWeights::unflatten: vector too short");
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), n, d);
    at += n;
  });
  if (at != flat.size()) throw ContractViolation("TfmWeights::unflatten: vector too long");
}

Eigen::VectorXd TfmWeights::mix(int part) const { return softmax(part_mix[static_cast<std::size_t>(part)]); }
double TfmWeights::gamma(int part) const { return softplus(part_gamma[part]); }
double TfmWeights::gamma_tlr() const { return softplus(tlr_gamma); }
double TfmWeights::gamma_tfm() const { return softplus(tfm_gamma); }
void TfmWeights::set_gamma_tlr(double v) { tlr_gamma = v > 0 ? inverse_softplus(v) : -1e3; }
void TfmWeights::set_gamma_tfm(double v) { tfm_gamma = v > 0 ? inverse_softplus(v) : -1e3; }

double phi_rec(const TfmFeatures& f, int part, RelationId relation, const TfmWeights& w) {
  const auto k = static_cast<std::size_t>(part);
  return softplus(w.rec_w[k][relation]) * f.recurrence[k] + softplus(w.rec_b[k][relation]);
}

double phi_order(const TfmFeatures& f, int part, RelationId relation, const TfmWeights& w) {
  const auto k = static_cast<std::size_t>(part);
  return integrate_row(f.order[k], w.order_w[k], w.order_b[k], relation).value;
}

double phi_pair(const TfmFeatures& f, int part, RelationId relation, const TfmWeights& w) {
  const auto k = static_cast<std::size_t>(part);
  return integrate_row(f.pair[k], w.pair_w[k], w.pair_b[k], relation).value;
}

TfmPartScores tfm_scores(const TfmFeatures& f, RelationId relation, const TfmWeights& w) {
  TfmPartScores s;
  for (int k = 0; k < kEvidenceParts; ++k) {
    if (k < 2) s.rec[k] = phi_rec(f, k, relation, w);
    s.order[k] = phi_order(f, k, relation, w);
    s.pair[k] = phi_pair(f, k, relation, w);
    const Eigen::VectorXd m = w.mix(k);
    s.part[k] = k < 2 ? m[0] * s.rec[k] + m[1] * s.order[k] + m[2] * s.pair[k]
                      : m[0] * s.order[k] + m[1] * s.pair[k];
    s.total += w.gamma(k) * s.part[k];
  }
  return s;
}

double phi_tfm(const TfmFeatures& f, RelationId relation, const TfmWeights& w) {
  return tfm_scores(f, relation, w).total;
}

double phi_tfm(std::span<const double, 3> parts, std::span<const double, 3> gammas) {
  return gammas[0] * parts[0] + gammas[1] * parts[1] + gammas[2] * parts[2];
}

// ---- phase 2 --------------------------------------------------------------

double phase2_loss(const TfmWeights& weights, std::span<const Phase2Example> batch,
                   std::vector<double>* grad) {
  std::size_t used = 0;
  for (const auto& ex : batch) used += ex.candidates.empty() ? 0 : 1;
  if (used == 0) return 0.0;
  const double scale = 1.0 / static_cast<double>(used);

  TfmWeights g = zeros_like(weights.num_relations);
  const double g_tlr = weights.gamma_tlr(), g_tfm = weights.gamma_tfm();
  std::array<Eigen::VectorXd, kEvidenceParts> mixes;
  for (int k = 0; k < kEvidenceParts; ++k) mixes[k] = weights.mix(k);

  double total = 0.0;
  std::vector<double> phi, dphi;
  std::vector<TfmPartScores> parts;
  for (const auto& ex : batch) {
    if (ex.candidates.empty()) continue;
    const RelationId r = ex.relation;
    parts.clear();
    phi.clear();
    for (std::size_t c = 0; c < ex.candidates.size(); ++c) {
      parts.push_back(tfm_scores(ex.features[c], r, weights));
      phi.push_back(phi_tilp(ex.tlr[c], parts.back().total, g_tlr, g_tfm));
    }
    total += candidate_loss(phi, ex.truth, kScoreSmoothing, grad ? &dphi : nullptr);
    if (!grad) continue;

    for (std::size_t c = 0; c < ex.candidates.size(); ++c) {
      const double d = dphi[c] * scale;
      const auto& s = parts[c];
      const auto& f = ex.features[c];
      g.tlr_gamma += d * ex.tlr[c] * sigmoid(weights.tlr_gamma);
      g.tfm_gamma += d * s.total * sigmoid(weights.tfm_gamma);
      const double dt = d * g_tfm;
      for (int k = 0; k < kEvidenceParts; ++k) {
        const auto ku = static_cast<std::size_t>(k);
        g.part_gamma[k] += dt * s.part[ku] * sigmoid(weights.part_gamma[k]);
        const double dp = dt * weights.gamma(k);
        const Eigen::VectorXd& m = mixes[ku];
        Eigen::VectorXd feature_scores(m.size());
        if (k < 2)
          feature_scores << s.rec[ku], s.order[ku], s.pair[ku];
        else
          feature_scores << s.order[ku], s.pair[ku];
        g.part_mix[ku] += softmax_backward<double>(m, dp * feature_scores);
        const int off = k < 2 ? 1 : 0;
        if (k < 2) {
          const double ds = dp * m[0];
          g.rec_w[ku][r] += ds * f.recurrence[ku] * sigmoid(weights.rec_w[ku][r]);
          g.rec_b[ku][r] += ds * sigmoid(weights.rec_b[ku][r]);
        }
        if (!f.order[ku].empty()) {
          const auto fwd = integrate_row(f.order[ku], weights.order_w[ku], weights.order_b[ku], r);
          integrate_backward(f.order[ku], fwd, weights.order_b[ku], r, dp * m[off], g.order_w[ku],
                             g.order_b[ku]);
        }
        if (!f.pair[ku].empty()) {
          const auto fwd = integrate_row(f.pair[ku], weights.pair_w[ku], weights.pair_b[ku], r);
          integrate_backward(f.pair[ku], fwd, weights.pair_b[ku], r, dp * m[off + 1], g.pair_w[ku],
                             g.pair_b[ku]);
        }
      }
    }
  }
  if (grad) {
    const auto flat = g.flatten();
    if (grad->empty()) grad->assign(flat.size(), 0.0);
    for (std::size_t i = 0; i < flat.size(); ++i) (*grad)[i] += flat[i];
  }
  return total * scale;
}

Phase2Result train_phase2(TfmWeights init, std::span<const Phase2Example> examples,
                          const TrainConfig& config, const Phase2Callback& on_step) {
  Phase2Result result{std::move(init), {}};
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < examples.size(); ++i)
    if (!examples[i].candidates.empty()) order.push_back(i);
  if (order.empty()) return result;

  std::mt19937_64 rng(config.seed);
  auto flat = result.weights.flatten();
  Adam adam(flat.size());
  std::vector<Phase2Example> batch;
  std::vector<double> grad;
  std::size_t step = 0;
  const std::size_t batch_size = std::max<std::size_t>(1, config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = config.learning_rate * std::pow(config.decay, epoch);
    double epoch_loss = 0.0;
    for (std::size_t first = 0; first < order.size(); first += batch_size) {
      batch.clear();
      for (std::size_t i = first; i < std::min(order.size(), first + batch_size); ++i)
        batch.push_back(examples[order[i]]);
      grad.assign(flat.size(), 0.0);
      const double loss = phase2_loss(result.weights, batch, &grad);
      if (!std::isfinite(loss))
        throw DivergenceError("phase 2 diverged at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(step) + " (loss " + std::to_string(loss) + ")");
      epoch_loss += loss * static_cast<double>(batch.size());
      adam.step(flat, grad, lr);
      result.weights.unflatten(flat);
      if (on_step) on_step(result.weights, epoch, step);
      ++step;
    }
    result.loss_trace.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  return result;
}

// ---- serialization --------------------------------------------------------

namespace {

nlohmann::json gap_json(const GapDistribution& d) {
  nlohmann::json j{{"n", d.n}, {"fallback", d.fallback}};
  if (d.model == GapModel::Gaussian) {
    j["model"] = "gaussian";
    j["mean"] = d.mean;
    j["stddev"] = d.stddev;
  } else {
    j["model"] = "exponential";
    j["rate"] = d.rate;
  }
  return j;
}

GapDistribution gap_from_json(const nlohmann::json& j) {
  GapDistribution d;
  d.n = j.at("n").get<std::size_t>();
  d.fallback = j.at("fallback").get<bool>();
  if (j.at("model").get<std::string>() == "gaussian") {
    d.model = GapModel::Gaussian;
    d.mean = j.at("mean").get<double>();
    d.stddev = j.at("stddev").get<double>();
  } else {
    d.model = GapModel::Exponential;
    d.rate = j.at("rate").get<double>();
  }
  return d;
}

nlohmann::json duration_json(const TruncatedGaussian& t) {
  return {{"mean", t.mean}, {"stddev", t.stddev}, {"n", t.n}, {"fallback", t.fallback}};
}

TruncatedGaussian duration_from_json(const nlohmann::json& j) {
  return {j.at("mean").get<double>(), j.at("stddev").get<double>(), j.at("n").get<std::size_t>(),
          j.at("fallback").get<bool>()};
}

}  // namespace

nlohmann::json to_json(const DistributionParams& p) {
  nlohmann::json j;
  j["num_relations"] = p.num_relations;
  j["global_duration"] = duration_json(p.global_duration);
  auto& dur = j["duration"] = nlohmann::json::array();
  for (const auto& d : p.duration) dur.push_back(duration_json(d));
  auto& rec = j["recurrence"] = nlohmann::json::array();
  for (int k = 0; k < 2; ++k) {
    auto part = nlohmann::json::array();
    for (std::size_t r = 0; r < p.recurrence[k].size(); ++r) {
      const auto& b = p.recurrence[k][r];
      if (!b.fallback) part.push_back({{"r", r}, {"p", b.p}, {"n", b.n}});
    }
    rec.push_back(std::move(part));
  }
  // Only fitted cells are stored; absent cells are fallback priors.
  auto& ord = j["order"] = nlohmann::json::array();
  auto& pair = j["pair"] = nlohmann::json::array();
  const auto n = static_cast<std::size_t>(p.num_relations);
  for (int k = 0; k < kEvidenceParts; ++k) {
    auto po = nlohmann::json::array(), pp = nlohmann::json::array();
    for (std::size_t c = 0; c < n * n; ++c) {
      const auto r = c / n, r2 = c % n;
      if (!p.order[k][c].fallback)
        po.push_back({{"r", r}, {"r2", r2}, {"p", p.order[k][c].p}, {"n", p.order[k][c].n}});
      if (!p.pair[k][c].fallback) {
        auto g = gap_json(p.pair[k][c]);
        g["r"] = r;
        g["r2"] = r2;
        pp.push_back(std::move(g));
      }
    }
    ord.push_back(std::move(po));
    pair.push_back(std::move(pp));
  }
  return j;
}

DistributionParams distributions_from_json(const nlohmann::json& j) {
  DistributionParams p;
  ensure_tables(p, j.at("num_relations").get<int>());
  p.global_duration = duration_from_json(j.at("global_duration"));
  const auto& dur = j.at("duration");
  if (dur.size() != p.duration.size()) throw ParseError("distributions: duration table size mismatch");
  for (std::size_t r = 0; r < dur.size(); ++r) p.duration[r] = duration_from_json(dur[r]);
  for (int k = 0; k < 2; ++k)
    for (const auto& e : j.at("recurrence").at(static_cast<std::size_t>(k)))
      p.recurrence[k].at(e.at("r").get<std::size_t>()) = {e.at("p").get<double>(), e.at("n").get<std::size_t>(), false};
  for (int k = 0; k < kEvidenceParts; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    for (const auto& e : j.at("order").at(ku))
      p.order[k].at(p.at(e.at("r").get<int>(), e.at("r2").get<int>())) = {e.at("p").get<double>(),
                                                                           e.at("n").get<std::size_t>(), false};
    for (const auto& e : j.at("pair").at(ku))
      p.pair[k].at(p.at(e.at("r").get<int>(), e.at("r2").get<int>())) = gap_from_json(e);
  }
  return p;
}

nlohmann::json to_json(const TfmWeights& w) {
  std::vector<double> gammas{w.gamma(0), w.gamma(1), w.gamma(2)};
  nlohmann::json mixes = nlohmann::json::array();
  for (int k = 0; k < kEvidenceParts; ++k) {
    const Eigen::VectorXd m = w.mix(k);
    mixes.push_back(std::vector<double>(m.data(), m.data() + m.size()));
  }
  return {{"num_relations", w.num_relations},
          {"raw", w.flatten()},
          {"effective", {{"gamma_tlr", w.gamma_tlr()}, {"gamma_tfm", w.gamma_tfm()}, {"gamma_parts", gammas},
                         {"part_mix", mixes}}}};
}

TfmWeights tfm_weights_from_json(const nlohmann::json& j) {
  TfmWeights w = zeros_like(j.at("num_relations").get<int>());
  w.unflatten(j.at("raw").get<std::vector<double>>());
  return w;
}

}  // namespace tilp
