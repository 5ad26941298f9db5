#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tilp/attention.hpp"
#include "tilp/rule.hpp"

namespace tilp {

using AttentionModel = AttentionParams<double>;

inline constexpr double kScoreSmoothing = 1e-8;

// -log((s_truth + eps) / sum_c (s_c + eps)). Writes dL/ds_c when `grad` is set.
double candidate_loss(std::span<const double> scores, std::size_t truth,
                      double eps = kScoreSmoothing, std::vector<double>* grad = nullptr);

// A training query with the arriving rates of every rule that reached some
// candidate. Candidates are entities reached by a rule plus the truth.
struct Phase1Example {
  RelationId head = 0;
  std::vector<EntityId> candidates;
  std::size_t truth = 0;  // index into candidates
  struct Arrivals {
    std::size_t rule = 0;                                    // index into the rule table
    std::vector<std::pair<std::uint32_t, double>> rates;     // (candidate index, alpha)
  };
  std::vector<Arrivals> rules;
};

// Per-candidate phi_TLR = sum_rule alpha_c(rule) * score(rule).
std::vector<double> tlr_scores(const Phase1Example& example, std::span<const double> rule_scores);

// Mean candidate loss over `batch`; adds the parameter gradient of that mean into `grad`.
double phase1_loss(const AttentionModel& params, std::span<const RuleTemplate> rules,
                   std::span<const Phase1Example> batch, AttentionModel* grad = nullptr);

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::vector<std::pair<std::string, double>> per_tensor;  // max error per tensor
};

// Compares analytic gradients with central differences of phase1_loss.
// Relative error per entry is |a - n| / max(|a|, |n|, floor).
GradientCheckReport gradient_check(const AttentionModel& params, std::span<const RuleTemplate> rules,
                                   std::span<const Phase1Example> batch, double step = 1e-4,
                                   double floor = 1e-6);

class Adam {
 public:
  explicit Adam(std::size_t size, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(std::span<double> params, std::span<const double> grad, double learning_rate);

 private:
  std::vector<double> m_, v_;
  double beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

std::vector<double> flatten(const AttentionModel& params);
void unflatten(std::span<const double> flat, AttentionModel& params);

struct TrainConfig {
  int epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 1e-2;
  double decay = 0.95;  // multiplicative per epoch
  std::uint64_t seed = 0;
};

struct Phase1Result {
  AttentionModel params;
  std::vector<double> loss_trace;  // mean loss per epoch
  std::size_t skipped = 0;         // examples no rule reached
};

using Phase1Callback = std::function<void(const AttentionModel&, int epoch, std::size_t step)>;

// Adam on the mean candidate loss; deterministic for a fixed seed. Throws
// DivergenceError on a non-finite loss.
Phase1Result train_phase1(AttentionModel init, std::span<const RuleTemplate> rules,
                          std::span<const Phase1Example> examples, const TrainConfig& config,
                          const Phase1Callback& on_step = {});

nlohmann::json to_json(const AttentionModel& params);
AttentionModel attention_from_json(const nlohmann::json& j);

}  // namespace tilp
