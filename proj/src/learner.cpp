#include "tilp/learner.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "tilp/errors.hpp"

namespace tilp {

double candidate_loss(std::span<const double> scores, std::size_t truth, double eps,
                      std::vector<double>* grad) {
  if (truth >= scores.size()) throw ContractViolation("candidate_loss: truth not among candidates");
  double total = 0.0;
  for (double s : scores) total += s + eps;
  const double loss = -std::log((scores[truth] + eps) / total);
  if (grad) {
    grad->assign(scores.size(), 1.0 / total);
    (*grad)[truth] -= 1.0 / (scores[truth] + eps);
  }
  return loss;
}

std::vector<double> tlr_scores(const Phase1Example& example, std::span<const double> rule_scores) {
  std::vector<double> phi(example.candidates.size(), 0.0);
  for (std::size_t r = 0; r < example.rules.size(); ++r)
    for (const auto& [c, alpha] : example.rules[r].rates) phi[c] += alpha * rule_scores[r];
  return phi;
}

double phase1_loss(const AttentionModel& params, std::span<const RuleTemplate> rules,
                   std::span<const Phase1Example> batch, AttentionModel* grad) {
  std::map<RelationId, AttentionBundle<double>> bundles;
  std::map<RelationId, BundleGradient<double>> bundle_grads;
  std::size_t used = 0;
  for (const auto& ex : batch) {
    if (ex.rules.empty()) continue;
    ++used;
    if (!bundles.contains(ex.head)) {
      auto b = forward_attention(params, ex.head);
      if (grad) bundle_grads.emplace(ex.head, BundleGradient<double>::like(b));
      bundles.emplace(ex.head, std::move(b));
    }
  }
  if (used == 0) return 0.0;

  double total = 0.0;
  std::vector<double> scores, dphi;
  for (const auto& ex : batch) {
    if (ex.rules.empty()) continue;
    const auto& bundle = bundles.at(ex.head);
    scores.clear();
    for (const auto& a : ex.rules) scores.push_back(rule_score(bundle, rules[a.rule]));
    const auto phi = tlr_scores(ex, scores);
    total += candidate_loss(phi, ex.truth, kScoreSmoothing, grad ? &dphi : nullptr);
    if (!grad) continue;
    auto& bg = bundle_grads.at(ex.head);
    for (const auto& a : ex.rules) {
      double upstream = 0.0;
      for (const auto& [c, alpha] : a.rates) upstream += dphi[c] * alpha;
      accumulate_rule_score_gradient(bundle, rules[a.rule], upstream / static_cast<double>(used), bg);
    }
  }
  if (grad)
    for (const auto& [head, bg] : bundle_grads) backward_attention(params, bundles.at(head), bg, *grad);
  return total / static_cast<double>(used);
}

std::vector<double> flatten(const AttentionModel& params) {
  std::vector<double> out;
  out.reserve(params.parameter_count());
  params.for_each_tensor([&](std::string_view, const double* data, Eigen::Index r, Eigen::Index c) {
    out.insert(out.end(), data, data + r * c);
  });
  return out;
}

void unflatten(std::span<const double> flat, AttentionModel& params) {
  std::size_t at = 0;
  params.for_each_tensor([&](std::string_view, double* data, Eigen::Index r, Eigen::Index c) {
    const auto n = static_cast<std::size_t>(r * c);
    if (at + n > flat.size()) throw ContractViolation("unflatten: parameter vector too short");
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), n, data);
    at += n;
  });
  if (at != flat.size()) throw ContractViolation("unflatten: parameter vector too long");
}

GradientCheckReport gradient_check(const AttentionModel& params, std::span<const RuleTemplate> rules,
                                   std::span<const Phase1Example> batch, double step, double floor) {
  auto grad_model = AttentionModel::zeros(params.num_relations, params.dim, params.max_length);
  phase1_loss(params, rules, batch, &grad_model);
  const auto analytic = flatten(grad_model);

  GradientCheckReport report;
  AttentionModel probe = params;
  std::vector<std::pair<std::string, std::size_t>> spans;
  params.for_each_tensor([&](std::string_view name, const double*, Eigen::Index r, Eigen::Index c) {
    spans.emplace_back(std::string(name), static_cast<std::size_t>(r * c));
  });

  auto flat = flatten(params);
  std::size_t at = 0;
  for (const auto& [name, n] : spans) {
    double worst = 0.0;
    for (std::size_t i = at; i < at + n; ++i) {
      const double saved = flat[i];
      flat[i] = saved + step;
      unflatten(flat, probe);
      const double up = phase1_loss(probe, rules, batch);
      flat[i] = saved - step;
      unflatten(flat, probe);
      const double down = phase1_loss(probe, rules, batch);
      flat[i] = saved;
      const double numeric = (up - down) / (2 * step);
      const double a = analytic[i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, err);
    }
    report.per_tensor.emplace_back(name, worst);
    report.max_relative_error = std::max(report.max_relative_error, worst);
    at += n;
  }
  return report;
}

Adam::Adam(std::size_t size, double beta1, double beta2, double eps)
    : m_(size, 0.0), v_(size, 0.0), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(std::span<double> params, std::span<const double> grad, double learning_rate) {
  if (params.size() != m_.size() || grad.size() != m_.size())
    throw ContractViolation("Adam: size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1 - beta2_) * grad[i] * grad[i];
    params[i] -= learning_rate * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

Phase1Result train_phase1(AttentionModel init, std::span<const RuleTemplate> rules,
                          std::span<const Phase1Example> examples, const TrainConfig& config,
                          const Phase1Callback& on_step) {
  Phase1Result result;
  result.params = std::move(init);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (examples[i].rules.empty())
      ++result.skipped;
    else
      order.push_back(i);
  }
  if (order.empty()) return result;

  std::mt19937_64 rng(config.seed);
  auto flat = flatten(result.params);
  Adam adam(flat.size());
  std::vector<Phase1Example> batch;
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
      auto grad = AttentionModel::zeros(result.params.num_relations, result.params.dim,
                                        result.params.max_length);
      const double loss = phase1_loss(result.params, rules, batch, &grad);
      if (!std::isfinite(loss))
        throw DivergenceError("phase 1 diverged at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(step) + " (loss " + std::to_string(loss) + ")");
      epoch_loss += loss * static_cast<double>(batch.size());
      adam.step(flat, flatten(grad), lr);
      unflatten(flat, result.params);
      if (on_step) on_step(result.params, epoch, step);
      ++step;
    }
    result.loss_trace.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  return result;
}

nlohmann::json to_json(const AttentionModel& params) {
  nlohmann::json tensors = nlohmann::json::array();
  params.for_each_tensor([&](std::string_view name, const double* data, Eigen::Index r, Eigen::Index c) {
    tensors.push_back({{"name", name},
                       {"rows", r},
                       {"cols", c},
                       {"data", std::vector<double>(data, data + r * c)}});
  });
  return {{"num_relations", params.num_relations},
          {"dim", params.dim},
          {"max_length", params.max_length},
          {"tensors", std::move(tensors)}};
}

AttentionModel attention_from_json(const nlohmann::json& j) {
  auto params = AttentionModel::zeros(j.at("num_relations").get<int>(), j.at("dim").get<int>(),
                                      j.at("max_length").get<int>());
  const auto& tensors = j.at("tensors");
  std::size_t t = 0;
  params.for_each_tensor([&](std::string_view name, double* data, Eigen::Index r, Eigen::Index c) {
    if (t >= tensors.size()) throw ParseError("checkpoint: missing tensor " + std::string(name));
    const auto& tj = tensors.at(t++);
    if (tj.at("name").get<std::string>() != name || tj.at("rows").get<Eigen::Index>() != r ||
        tj.at("cols").get<Eigen::Index>() != c)
      throw ParseError("checkpoint: tensor shape mismatch for " + std::string(name));
    const auto values = tj.at("data").get<std::vector<double>>();
    if (values.size() != static_cast<std::size_t>(r * c))
      throw ParseError("checkpoint: tensor size mismatch for " + std::string(name));
    std::copy(values.begin(), values.end(), data);
  });
  return params;
}

}  // namespace tilp
