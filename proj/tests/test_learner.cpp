#include <doctest.h>

#include <cmath>

#include "tilp/attention.hpp"
#include "tilp/errors.hpp"
#include "tilp/learner.hpp"

using namespace tilp;
using TR = TemporalRelation;

namespace {

// Second, loop-based implementation of the recurrent attention, used as oracle.
struct OracleBundle {
  std::vector<double> length;
  std::vector<std::vector<std::vector<double>>> predicate, query_tr, pair_tr;  // [l-1][step][entry]
};

std::vector<double> oracle_softmax(const std::vector<double>& z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  std::vector<double> e;
  double s = 0;
  for (double v : z) s += e.emplace_back(std::exp(v - m));
  for (double& v : e) v /= s;
  return e;
}

std::vector<double> affine(const Eigen::MatrixXd& w, const Eigen::VectorXd& b, const std::vector<double>& x) {
  std::vector<double> y(static_cast<std::size_t>(w.rows()));
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    double s = b(i);
    for (Eigen::Index j = 0; j < w.cols(); ++j) s += w(i, j) * x[static_cast<std::size_t>(j)];
    y[static_cast<std::size_t>(i)] = s;
  }
  return y;
}

OracleBundle oracle_forward(const AttentionModel& p, RelationId target) {
  const int d = p.dim;
  auto row = [&](int table) {
    std::vector<double> x(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j) x[static_cast<std::size_t>(j)] = p.embeddings[static_cast<std::size_t>(table)](target, j);
    return x;
  };
  auto cat = [](std::vector<double> a, const std::vector<double>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };
  OracleBundle out;
  out.length = oracle_softmax(affine(p.length_weight, p.length_bias, row(0)));
  for (int l = 1; l <= p.max_length; ++l) {
    const auto x = row(l);
    std::vector<std::vector<double>> hs{std::vector<double>(static_cast<std::size_t>(d), 0.0)};
    out.predicate.emplace_back();
    out.query_tr.emplace_back();
    out.pair_tr.emplace_back();
    for (int i = 0; i < l; ++i) {
      const auto& h = hs.back();
      const auto zpre = affine(p.gate_weight, p.gate_bias, cat(h, x));
      const auto a = affine(p.state_weight, p.state_bias, h);
      const auto bx = affine(p.input_weight, Eigen::VectorXd::Zero(d), x);
      std::vector<double> next(static_cast<std::size_t>(d));
      for (std::size_t k = 0; k < next.size(); ++k) {
        const double z = 1.0 / (1.0 + std::exp(-zpre[k]));
        next[k] = (1 - z) * h[k] + z * std::tanh(a[k] + bx[k]);
      }
      out.predicate.back().push_back(oracle_softmax(affine(p.predicate_weight, p.predicate_bias, next)));
      out.query_tr.back().push_back(oracle_softmax(affine(p.query_tr_weight, p.query_tr_bias, next)));
      hs.push_back(next);
    }
    for (int j = 1; j <= l; ++j)
      for (int k = j + 1; k <= l; ++k)
        out.pair_tr.back().push_back(oracle_softmax(
            affine(p.pair_tr_weight, p.pair_tr_bias, cat(hs[static_cast<std::size_t>(j)], hs[static_cast<std::size_t>(k)]))));
  }
  return out;
}

void check_close(const Eigen::VectorXd& v, const std::vector<double>& o) {
  REQUIRE(static_cast<std::size_t>(v.size()) == o.size());
  for (std::size_t i = 0; i < o.size(); ++i) CHECK(v(static_cast<Eigen::Index>(i)) == doctest::Approx(o[i]).epsilon(1e-12));
}

Phase1Example example(RelationId head, std::size_t candidates, std::size_t truth,
                      std::vector<Phase1Example::Arrivals> rules) {
  Phase1Example ex;
  ex.head = head;
  for (std::size_t i = 0; i < candidates; ++i) ex.candidates.push_back(static_cast<EntityId>(i));
  ex.truth = truth;
  ex.rules = std::move(rules);
  return ex;
}

}  // namespace

TEST_SUITE("rule-learner") {

TEST_CASE("attention vectors lie on the simplex") {
  const auto p = AttentionModel::random(6, 5, 3, 42, 0.8);
  for (RelationId r = 0; r < 6; ++r) {
    const auto b = forward_attention(p, r);
    CHECK(b.length.sum() == doctest::Approx(1.0).epsilon(1e-12));
    for (const auto& c : b.chains) {
      for (const auto& v : c.predicate) CHECK(v.sum() == doctest::Approx(1.0).epsilon(1e-12));
      for (const auto& v : c.query_tr) CHECK(v.sum() == doctest::Approx(1.0).epsilon(1e-12));
      for (const auto& v : c.pair_tr) CHECK(v.sum() == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("zero parameters give uniform attention") {
  const auto p = AttentionModel::zeros(4, 3, 2);
  const auto b = forward_attention(p, 1);
  for (Eigen::Index i = 0; i < 2; ++i) CHECK(b.length(i) == doctest::Approx(0.5));
  for (const auto& c : b.chains) {
    for (const auto& v : c.predicate) CHECK(v(2) == doctest::Approx(0.25));
    for (const auto& v : c.query_tr) CHECK(v(0) == doctest::Approx(1.0 / 3));
  }
  // Uniform factors for a length-1 rule: 1/2 * 1/4 * 1/3.
  const RuleTemplate r{1, {0}, {TR::Before}, {}};
  CHECK(rule_score(b, r) == doctest::Approx(1.0 / 24));
  CHECK_THROWS_AS(forward_attention(p, 4), ContractViolation);
}

TEST_CASE("forward pass matches a loop implementation") {
  const auto p = AttentionModel::random(4, 4, 2, 7, 0.5);
  for (RelationId r = 0; r < 4; ++r) {
    const auto b = forward_attention(p, r);
    const auto o = oracle_forward(p, r);
    check_close(b.length, o.length);
    for (std::size_t l = 0; l < 2; ++l) {
      for (std::size_t i = 0; i <= l; ++i) {
        check_close(b.chains[l].predicate[i], o.predicate[l][i]);
        check_close(b.chains[l].query_tr[i], o.query_tr[l][i]);
      }
      for (std::size_t q = 0; q < o.pair_tr[l].size(); ++q) check_close(b.chains[l].pair_tr[q], o.pair_tr[l][q]);
    }
  }
}

TEST_CASE("rule scores lie in (0, 1]") {
  const auto p = AttentionModel::random(4, 4, 3, 8, 2.0);
  const auto b = forward_attention(p, 0);
  const RuleTemplate r{0, {1, 2, 3}, {TR::Before, TR::After, TR::Touching}, {TR::Before, TR::Before, TR::After}};
  const double s = rule_score(b, r);
  CHECK(s > 0.0);
  CHECK(s <= 1.0);
}

TEST_CASE("candidate loss") {
  const std::vector<double> only{0.7};
  CHECK(candidate_loss(only, 0) == doctest::Approx(0.0));
  const std::vector<double> tie{0.3, 0.3};
  CHECK(candidate_loss(tie, 1) == doctest::Approx(std::log(2.0)));
  const std::vector<double> three{0.6, 0.3, 0.1};
  CHECK(candidate_loss(three, 0, 0.0) == doctest::Approx(-std::log(0.6)));
  CHECK(candidate_loss(three, 0) == doctest::Approx(0.5108).epsilon(1e-4));
  std::vector<double> g;
  (void)candidate_loss(three, 1, 0.0, &g);
  // d/ds_c of -log s_t + log sum s.
  CHECK(g[0] == doctest::Approx(1.0));
  CHECK(g[1] == doctest::Approx(1.0 - 1.0 / 0.3));
}

TEST_CASE("arriving-rate aggregation") {
  const auto ex = example(0, 2, 0, {{0, {{0, 0.5}, {1, 0.5}}}, {1, {{0, 1.0}}}});
  const std::vector<double> scores{0.2, 0.1};
  const auto s = tlr_scores(ex, scores);
  CHECK(s[0] == doctest::Approx(0.2));
  CHECK(s[1] == doctest::Approx(0.1));
}

TEST_CASE("analytic gradients match finite differences") {
  const std::vector<RuleTemplate> rules{{0, {1}, {TR::Before}, {}},
                                        {0, {2, 3}, {TR::Touching, TR::After}, {TR::Before}},
                                        {1, {0, 0}, {TR::Before, TR::Before}, {TR::Touching}}};
  const std::vector<Phase1Example> batch{example(0, 3, 1, {{0, {{0, 0.5}, {1, 0.5}}}, {1, {{1, 0.25}, {2, 0.75}}}}),
                                         example(1, 2, 0, {{2, {{0, 1.0}}}})};
  const auto p = AttentionModel::random(4, 3, 2, 99, 0.5);
  const auto rep = gradient_check(p, rules, batch);
  CHECK(rep.max_relative_error < 1e-3);
}

TEST_CASE("dead parameters get zero gradient") {
  // Only length-1 rules: the pairwise head never enters the loss.
  const std::vector<RuleTemplate> rules{{0, {1}, {TR::Before}, {}}, {0, {2}, {TR::After}, {}}};
  const std::vector<Phase1Example> batch{example(0, 2, 0, {{0, {{0, 1.0}}}, {1, {{1, 1.0}}}})};
  const auto p = AttentionModel::random(4, 3, 1, 5, 0.5);
  auto g = AttentionModel::zeros(4, 3, 1);
  (void)phase1_loss(p, rules, batch, &g);
  CHECK(g.pair_tr_weight.norm() == 0.0);
  CHECK(g.pair_tr_bias.norm() == 0.0);
  const auto rep = gradient_check(p, rules, batch);
  for (const auto& [name, err] : rep.per_tensor)
    if (name.starts_with("pair_tr")) CHECK(err == doctest::Approx(0.0));
}

TEST_CASE("training with no examples leaves parameters unchanged") {
  const auto p = AttentionModel::random(4, 3, 2, 1, 0.3);
  const std::vector<RuleTemplate> rules;
  const std::vector<Phase1Example> none;
  const auto res = train_phase1(p, rules, none, {});
  CHECK(flatten(res.params) == flatten(p));
}

TEST_CASE("training prefers the predictive rule") {
  // Rule 0 always sends its walks to the truth; rule 1 of the same length never does.
  const std::vector<RuleTemplate> rules{{0, {1, 2}, {TR::Before, TR::Touching}, {TR::Before}},
                                        {0, {3, 2}, {TR::Touching, TR::Touching}, {TR::Touching}}};
  std::vector<Phase1Example> ex;
  for (int i = 0; i < 40; ++i) ex.push_back(example(0, 3, 0, {{0, {{0, 1.0}}}, {1, {{1, 0.5}, {2, 0.5}}}}));
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.learning_rate = 0.05;
  const auto init = AttentionModel::random(4, 4, 2, 3, 0.1);
  const auto res = train_phase1(init, rules, ex, cfg);
  const auto b = forward_attention(res.params, 0);
  CHECK(rule_score(b, rules[0]) > rule_score(b, rules[1]));
  CHECK(res.loss_trace.back() < 0.1 * res.loss_trace.front());
}

TEST_CASE("divergence aborts training") {
  const std::vector<RuleTemplate> rules{{0, {1}, {TR::Before}, {}}};
  std::vector<Phase1Example> ex{example(0, 2, 0, {{0, {{0, 1.0}}}})};
  auto p = AttentionModel::random(2, 2, 1, 1, 0.1);
  p.length_bias(0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(train_phase1(p, rules, ex, {}), DivergenceError);
}

TEST_CASE("parameter JSON round trip") {
  const auto p = AttentionModel::random(3, 2, 2, 4, 0.3);
  const auto q = attention_from_json(to_json(p));
  CHECK(flatten(q) == flatten(p));
  auto j = to_json(p);
  j["tensors"][0]["rows"] = 99;
  CHECK_THROWS(attention_from_json(j));
}

TEST_CASE("Adam moves against the gradient") {
  Adam opt(2);
  std::vector<double> x{1.0, -1.0};
  const std::vector<double> g{1.0, -1.0};
  opt.step(x, g, 0.1);
  // Bias-corrected first step has magnitude lr.
  CHECK(x[0] == doctest::Approx(0.9));
  CHECK(x[1] == doctest::Approx(-0.9));
}

}  // TEST_SUITE
