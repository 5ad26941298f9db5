#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "tilp/graph.hpp"
#include "tilp/learner.hpp"

namespace tilp {

inline constexpr double kMinStddev = 0.5;  // years
inline constexpr double kMinGapMean = 0.5;

// ---- distributions --------------------------------------------------------

double bernoulli_h(double p, bool x) noexcept;
double gaussian_density(double x, double mean, double stddev) noexcept;
double exponential_density(double x, double rate) noexcept;

struct BernoulliFit {
  double p = 0.5;
  std::size_t n = 0;
  bool fallback = true;
};
BernoulliFit fit_bernoulli(std::size_t successes, std::size_t n);

struct GaussianFit {
  double mean = 0.0;
  double stddev = 100.0;
};
// Sample mean and (population) standard deviation, stddev floored at kMinStddev.
GaussianFit fit_gaussian(std::span<const double> xs);
// 1 / mean with the mean floored at kMinGapMean.
double fit_exponential_rate(std::span<const double> xs);

enum class GapModel : std::uint8_t { Gaussian, Exponential };

struct GapDistribution {
  GapModel model = GapModel::Gaussian;
  double mean = 0.0;
  double stddev = 100.0;
  double rate = 1.0;
  std::size_t n = 0;
  bool fallback = true;

  double density(double x) const noexcept {
    return model == GapModel::Gaussian ? gaussian_density(x, mean, stddev) : exponential_density(x, rate);
  }
};
// Fits both families and keeps the one with the larger log-likelihood.
// Fewer than two observations gives the wide Gaussian prior, flagged.
GapDistribution fit_gap_distribution(std::span<const double> gaps);

// Gaussian truncated to [0, inf).
struct TruncatedGaussian {
  double mean = 0.0;
  double stddev = 1.0;
  std::size_t n = 0;
  bool fallback = true;

  double log_likelihood(std::span<const double> xs) const;
  // Inverse-CDF draw from u in [0, 1).
  double sample(double u) const;
};
// Maximum likelihood over (mean, log stddev) by Nelder-Mead, stddev floored at kMinStddev.
TruncatedGaussian fit_truncated_gaussian(std::span<const double> xs);

// ---- evidence -------------------------------------------------------------

inline constexpr int kEvidenceParts = 3;

// Relations seen in one evidence part with, for each, the start year closest
// to the query start (ties go to the earlier year).
struct EvidencePart {
  std::vector<RelationId> relations;  // sorted
  std::vector<Year> closest_start;    // parallel to relations

  bool empty() const noexcept { return relations.empty(); }
  bool contains(RelationId r) const;
  void add(RelationId r, Year start, Year query_start);
};

// Parts: 0 = facts from the candidate to the query subject, 1 = other facts
// on the candidate, 2 = rule walks from the subject to the candidate.
struct EvidenceSets {
  std::array<EvidencePart, kEvidenceParts> parts;
};

// Fills parts 0 and 1 from the candidate's outgoing facts; `excluded_edge`
// hides the query fact during training.
EvidenceSets collect_evidence(const TemporalGraph& graph, EntityId subject, Year query_start,
                              EntityId candidate, EdgeId excluded_edge = kNoEdge);
// Adds the body relations and start years of one walk to `part`.
void add_walk_evidence(const TemporalGraph& graph, std::span<const FactIndex> walk, Year query_start,
                       EvidencePart& part);

// ---- fitted parameters ----------------------------------------------------

struct DistributionParams {
  int num_relations = 0;
  std::array<std::vector<BernoulliFit>, 2> recurrence;             // [part][r]
  std::array<std::vector<BernoulliFit>, kEvidenceParts> order;     // [part][r * |R| + r']
  std::array<std::vector<GapDistribution>, kEvidenceParts> pair;   // [part][r * |R| + r']
  std::vector<TruncatedGaussian> duration;                         // [r]
  TruncatedGaussian global_duration;

  std::size_t at(RelationId r, RelationId r2) const noexcept {
    return static_cast<std::size_t>(r) * static_cast<std::size_t>(num_relations) +
           static_cast<std::size_t>(r2);
  }
  const TruncatedGaussian& duration_for(RelationId r) const;
};

// A training positive seen from the query side: relation, query start and the
// evidence gathered for the true answer.
struct FitSample {
  RelationId relation = 0;
  Year query_start = 0;
  EvidenceSets evidence;
};

// Duration only, from facts with two known endpoints (inverses share their base's fit).
void fit_durations(const TemporalGraph& graph, DistributionParams& params);
// Recurrence, order and pair-gap tables from the samples.
void fit_feature_tables(std::span<const FitSample> samples, DistributionParams& params);
// Both of the above, with parts 0 and 1 of every training fact (inverses included).
DistributionParams fit_distributions(const TemporalGraph& graph);

nlohmann::json to_json(const DistributionParams& params);
DistributionParams distributions_from_json(const nlohmann::json& j);

// ---- imputation -----------------------------------------------------------

// Deterministic per-fact imputation of Unknown endpoints. The draw depends only
// on the seed and the fact's content, so train and evaluation graphs agree.
class Imputer {
 public:
  Imputer(const DistributionParams* params, std::uint64_t seed, Year min_year, Year present_year)
      : params_(params), seed_(seed), min_year_(min_year), present_year_(present_year) {}

  ResolvedInterval operator()(const Fact& fact) const;
  ResolvedInterval resolve(EntityId subject, RelationId relation, EntityId object,
                           const Interval& interval) const;

 private:
  const DistributionParams* params_;
  std::uint64_t seed_;
  Year min_year_, present_year_;
};

// [start, start + round(t_d)] with t_d drawn from the relation's truncated Gaussian.
Interval impute_duration(const Fact& fact, const DistributionParams& params, std::uint64_t seed);

// ---- scoring --------------------------------------------------------------

// sum_i exp(w_i) (h_i + b_i) / sum_i exp(w_i); 0 for an empty set.
double integrate_scores(std::span<const double> h, std::span<const double> w,
                        std::span<const double> b);

// h values of one candidate for a query relation, independent of the weights.
struct TfmFeatures {
  std::array<double, 2> recurrence{0.0, 0.0};
  std::array<std::vector<std::pair<RelationId, double>>, kEvidenceParts> order;
  std::array<std::vector<std::pair<RelationId, double>>, kEvidenceParts> pair;
};

TfmFeatures compute_features(const DistributionParams& params, RelationId relation, Year query_start,
                             const EvidenceSets& evidence);

// Learnable weights. Raw values are unconstrained; effective ones are
//   w_rec, b_rec, b_order, b_pair, gamma_1..3, gamma_TLR, gamma_tfm: softplus(raw) >= 0
//   per-part feature weights: softmax(raw) over {rec, order, pair} ({order, pair} for part 3)
//   w_order, w_pair: raw (they enter through a softmax)
struct TfmWeights {
  int num_relations = 0;
  std::array<Eigen::VectorXd, 2> rec_w, rec_b;
  std::array<Eigen::MatrixXd, kEvidenceParts> order_w, order_b, pair_w, pair_b;
  std::array<Eigen::VectorXd, kEvidenceParts> part_mix;  // sizes 3, 3, 2
  Eigen::Vector3d part_gamma;
  double tlr_gamma = 0.0;
  double tfm_gamma = 0.0;

  static TfmWeights initial(int num_relations);

  std::size_t parameter_count() const;
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);

  // Effective simplex weights of one part: {rec, order, pair} or {order, pair}.
  Eigen::VectorXd mix(int part) const;
  double gamma(int part) const;
  double gamma_tlr() const;
  double gamma_tfm() const;
  void set_gamma_tlr(double v);
  void set_gamma_tfm(double v);
};

double softplus(double x) noexcept;
double inverse_softplus(double y);

struct TfmPartScores {
  std::array<double, 2> rec{0.0, 0.0};
  std::array<double, kEvidenceParts> order{0.0, 0.0, 0.0};
  std::array<double, kEvidenceParts> pair{0.0, 0.0, 0.0};
  std::array<double, kEvidenceParts> part{0.0, 0.0, 0.0};
  double total = 0.0;
};

double phi_rec(const TfmFeatures& f, int part, RelationId relation, const TfmWeights& w);
double phi_order(const TfmFeatures& f, int part, RelationId relation, const TfmWeights& w);
double phi_pair(const TfmFeatures& f, int part, RelationId relation, const TfmWeights& w);
TfmPartScores tfm_scores(const TfmFeatures& f, RelationId relation, const TfmWeights& w);
// gamma_1 phi_1 + gamma_2 phi_2 + gamma_3 phi_3.
double phi_tfm(const TfmFeatures& f, RelationId relation, const TfmWeights& w);
double phi_tfm(std::span<const double, 3> parts, std::span<const double, 3> gammas);
// gamma_TLR phi_TLR + gamma_tfm phi_tfm.
inline double phi_tilp(double tlr, double tfm, double gamma_tlr, double gamma_tfm) noexcept {
  return gamma_tlr * tlr + gamma_tfm * tfm;
}

// ---- phase 2 --------------------------------------------------------------

struct Phase2Example {
  RelationId relation = 0;
  std::vector<EntityId> candidates;
  std::size_t truth = 0;
  std::vector<double> tlr;  // frozen phi_TLR per candidate
  std::vector<TfmFeatures> features;
};

// Mean candidate loss of phi_TILP; adds d loss / d raw weights into `grad`
// (laid out as TfmWeights::flatten()).
double phase2_loss(const TfmWeights& weights, std::span<const Phase2Example> batch,
                   std::vector<double>* grad = nullptr);

struct Phase2Result {
  TfmWeights weights;
  std::vector<double> loss_trace;
};

using Phase2Callback = std::function<void(const TfmWeights&, int epoch, std::size_t step)>;

Phase2Result train_phase2(TfmWeights init, std::span<const Phase2Example> examples,
                          const TrainConfig& config, const Phase2Callback& on_step = {});

nlohmann::json to_json(const TfmWeights& weights);
TfmWeights tfm_weights_from_json(const nlohmann::json& j);

}  // namespace tilp
