#pragma once

// Recurrent attention system producing per-target-predicate confidence
// vectors over rule lengths, body predicates and temporal relations, plus the
// product-form rule score and its reverse-mode gradient.

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "tilp/errors.hpp"
#include "tilp/graph.hpp"
#include "tilp/rule.hpp"

namespace tilp {

template <typename Derived>
auto softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> z = logits;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> e = (z.array() - z.maxCoeff()).exp().matrix();
  return Eigen::Matrix<Scalar, Eigen::Dynamic, 1>(e / e.sum());
}

// Backward of y = softmax(z): dz = y * (g - <g, y>).
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> softmax_backward(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& y,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& grad) {
  return (y.array() * (grad.array() - grad.dot(y))).matrix();
}

template <typename Scalar>
struct AttentionParams {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  int num_relations = 0;
  int dim = 0;
  int max_length = 0;

  // max_length + 1 tables (|R| x d). Table 0 feeds the length attention,
  // table l drives the recurrent chain for rules of length l.
  std::vector<Matrix> embeddings;
  // Gated update h' = (1 - z) h + z tanh(Wh h + Wx x + b), z = sigmoid(Wz [h; x] + bz).
  Matrix gate_weight;  // d x 2d
  Vector gate_bias;
  Matrix state_weight;  // d x d
  Matrix input_weight;  // d x d
  Vector state_bias;
  Matrix predicate_weight;  // |R| x d
  Vector predicate_bias;
  Matrix query_tr_weight;  // 3 x d
  Vector query_tr_bias;
  Matrix pair_tr_weight;  // 3 x 2d
  Vector pair_tr_bias;
  Matrix length_weight;  // L x d
  Vector length_bias;

  static AttentionParams zeros(int num_relations, int dim, int max_length) {
    AttentionParams p;
    p.num_relations = num_relations;
    p.dim = dim;
    p.max_length = max_length;
    p.embeddings.assign(static_cast<std::size_t>(max_length + 1), Matrix::Zero(num_relations, dim));
    p.gate_weight = Matrix::Zero(dim, 2 * dim);
    p.gate_bias = Vector::Zero(dim);
    p.state_weight = Matrix::Zero(dim, dim);
    p.input_weight = Matrix::Zero(dim, dim);
    p.state_bias = Vector::Zero(dim);
    p.predicate_weight = Matrix::Zero(num_relations, dim);
    p.predicate_bias = Vector::Zero(num_relations);
    p.query_tr_weight = Matrix::Zero(kNumTemporalRelations, dim);
    p.query_tr_bias = Vector::Zero(kNumTemporalRelations);
    p.pair_tr_weight = Matrix::Zero(kNumTemporalRelations, 2 * dim);
    p.pair_tr_bias = Vector::Zero(kNumTemporalRelations);
    p.length_weight = Matrix::Zero(max_length, dim);
    p.length_bias = Vector::Zero(max_length);
    return p;
  }

  // Gaussian N(0, scale^2) entries; biases start at zero.
  static AttentionParams random(int num_relations, int dim, int max_length, std::uint64_t seed,
                                Scalar scale = Scalar(0.1)) {
    auto p = zeros(num_relations, dim, max_length);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    p.for_each_tensor([&](std::string_view name, Scalar* data, Eigen::Index rows, Eigen::Index cols) {
      if (name.ends_with("bias")) return;
      for (Eigen::Index i = 0; i < rows * cols; ++i) data[i] = scale * Scalar(normal(rng));
    });
    return p;
  }

  // f(name, data, rows, cols) over every tensor in a fixed order.
  template <typename F>
  void for_each_tensor(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    visit(*this, f);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](std::string_view, const Scalar*, Eigen::Index r, Eigen::Index c) {
      n += static_cast<std::size_t>(r * c);
    });
    return n;
  }

 private:
  template <typename Self, typename F>
  static void visit(Self& s, F& f) {
    for (std::size_t l = 0; l < s.embeddings.size(); ++l)
      f(l == 0 ? std::string_view("embedding_length") : std::string_view("embedding_chain"),
        s.embeddings[l].data(), s.embeddings[l].rows(), s.embeddings[l].cols());
    auto mat = [&](std::string_view n, auto& m) { f(n, m.data(), m.rows(), m.cols()); };
    mat("gate_weight", s.gate_weight);
    mat("gate_bias", s.gate_bias);
    mat("state_weight", s.state_weight);
    mat("input_weight", s.input_weight);
    mat("state_bias", s.state_bias);
    mat("predicate_weight", s.predicate_weight);
    mat("predicate_bias", s.predicate_bias);
    mat("query_tr_weight", s.query_tr_weight);
    mat("query_tr_bias", s.query_tr_bias);
    mat("pair_tr_weight", s.pair_tr_weight);
    mat("pair_tr_bias", s.pair_tr_bias);
    mat("length_weight", s.length_weight);
    mat("length_bias", s.length_bias);
  }
};

// Attention vectors for one target predicate. chains[l - 1] covers rules of length l.
template <typename Scalar>
struct AttentionBundle {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  struct Chain {
    std::vector<Vector> hidden;     // h_0 .. h_l, h_0 = 0
    std::vector<Vector> gate;       // z_1 .. z_l
    std::vector<Vector> candidate;  // tanh pre-mix state, steps 1 .. l
    std::vector<Vector> predicate;  // per step, over |R|
    std::vector<Vector> query_tr;   // per step, over the 3 classes
    std::vector<Vector> pair_tr;    // per (j, k) in RuleTemplate::pair_index order
  };

  RelationId target = 0;
  Vector length;  // over lengths 1 .. L
  std::vector<Chain> chains;
};

template <typename Scalar>
AttentionBundle<Scalar> forward_attention(const AttentionParams<Scalar>& p, RelationId target) {
  using Vector = typename AttentionParams<Scalar>::Vector;
  if (target < 0 || target >= p.num_relations)
    throw ContractViolation("forward_attention: target predicate out of vocabulary");
  const int d = p.dim;
  AttentionBundle<Scalar> b;
  b.target = target;
  const Vector x0 = p.embeddings[0].row(target).transpose();
  b.length = softmax(p.length_weight * x0 + p.length_bias);
  b.chains.resize(static_cast<std::size_t>(p.max_length));
  Vector joint(2 * d);
  for (int l = 1; l <= p.max_length; ++l) {
    auto& c = b.chains[static_cast<std::size_t>(l - 1)];
    const Vector x = p.embeddings[static_cast<std::size_t>(l)].row(target).transpose();
    c.hidden.push_back(Vector::Zero(d));
    for (int i = 0; i < l; ++i) {
      const Vector& h = c.hidden.back();
      joint << h, x;
      Vector z = (p.gate_weight * joint + p.gate_bias).array().logistic().matrix();
      Vector cand = (p.state_weight * h + p.input_weight * x + p.state_bias).array().tanh().matrix();
      Vector next = ((Scalar(1) - z.array()) * h.array() + z.array() * cand.array()).matrix();
      c.predicate.push_back(softmax(p.predicate_weight * next + p.predicate_bias));
      c.query_tr.push_back(softmax(p.query_tr_weight * next + p.query_tr_bias));
      c.gate.push_back(std::move(z));
      c.candidate.push_back(std::move(cand));
      c.hidden.push_back(std::move(next));
    }
    for (int j = 1; j <= l; ++j)
      for (int k = j + 1; k <= l; ++k) {
        joint << c.hidden[static_cast<std::size_t>(j)], c.hidden[static_cast<std::size_t>(k)];
        c.pair_tr.push_back(softmax(p.pair_tr_weight * joint + p.pair_tr_bias));
      }
  }
  return b;
}

namespace detail {

// Visits every factor of the rule score as (vector, entry) references.
template <typename Bundle, typename F>
void for_each_factor(Bundle& b, const RuleTemplate& rule, F&& f) {
  const int l = rule.length();
  if (l < 1 || l > static_cast<int>(b.chains.size()))
    throw ContractViolation("rule length " + std::to_string(l) + " outside 1.." +
                            std::to_string(b.chains.size()));
  f(b.length, l - 1);
  auto& c = b.chains[static_cast<std::size_t>(l - 1)];
  for (int i = 0; i < l; ++i) {
    f(c.predicate[static_cast<std::size_t>(i)], rule.predicates[static_cast<std::size_t>(i)]);
    f(c.query_tr[static_cast<std::size_t>(i)],
      static_cast<int>(rule.query_relations[static_cast<std::size_t>(i)]));
  }
  for (std::size_t q = 0; q < rule.pair_relations.size(); ++q)
    f(c.pair_tr[q], static_cast<int>(rule.pair_relations[q]));
}

}  // namespace detail

// Product of the length, predicate, query-relation and pairwise-relation confidences.
template <typename Scalar>
Scalar rule_score(const AttentionBundle<Scalar>& b, const RuleTemplate& rule) {
  Scalar s(1);
  detail::for_each_factor(b, rule, [&](const auto& v, int idx) { s *= v(idx); });
  return s;
}

// Upstream gradients w.r.t. the bundle's attention vectors (same layout).
template <typename Scalar>
struct BundleGradient {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  Vector length;
  std::vector<std::vector<Vector>> predicate, query_tr, pair_tr;  // [l-1][step or pair]
  std::vector<bool> touched;                                       // per chain

  static BundleGradient like(const AttentionBundle<Scalar>& b) {
    BundleGradient g;
    g.length = Vector::Zero(b.length.size());
    for (const auto& c : b.chains) {
      auto zeros = [](const std::vector<Vector>& src) {
        std::vector<Vector> out;
        for (const auto& v : src) out.push_back(Vector::Zero(v.size()));
        return out;
      };
      g.predicate.push_back(zeros(c.predicate));
      g.query_tr.push_back(zeros(c.query_tr));
      g.pair_tr.push_back(zeros(c.pair_tr));
    }
    g.touched.assign(b.chains.size(), false);
    return g;
  }
};

// Adds upstream * d score(rule) / d attention into `g`.
template <typename Scalar>
void accumulate_rule_score_gradient(const AttentionBundle<Scalar>& b, const RuleTemplate& rule,
                                    Scalar upstream, BundleGradient<Scalar>& g) {
  std::vector<Scalar> factors;
  detail::for_each_factor(b, rule, [&](const auto& v, int idx) { factors.push_back(v(idx)); });
  // Product of all other factors via prefix/suffix products.
  const std::size_t n = factors.size();
  std::vector<Scalar> prefix(n + 1, Scalar(1)), suffix(n + 1, Scalar(1));
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] * factors[i];
  for (std::size_t i = n; i-- > 0;) suffix[i] = suffix[i + 1] * factors[i];

  const int l = rule.length();
  const auto c = static_cast<std::size_t>(l - 1);
  g.touched[c] = true;
  std::size_t at = 0;
  auto add = [&](auto& v, int idx) {
    v(idx) += upstream * prefix[at] * suffix[at + 1];
    ++at;
  };
  add(g.length, l - 1);
  for (int i = 0; i < l; ++i) {
    add(g.predicate[c][static_cast<std::size_t>(i)], rule.predicates[static_cast<std::size_t>(i)]);
    add(g.query_tr[c][static_cast<std::size_t>(i)],
        static_cast<int>(rule.query_relations[static_cast<std::size_t>(i)]));
  }
  for (std::size_t q = 0; q < rule.pair_relations.size(); ++q)
    add(g.pair_tr[c][q], static_cast<int>(rule.pair_relations[q]));
}

// Backpropagates bundle gradients into parameter gradients (accumulating into `grad`).
template <typename Scalar>
void backward_attention(const AttentionParams<Scalar>& p, const AttentionBundle<Scalar>& b,
                        const BundleGradient<Scalar>& g, AttentionParams<Scalar>& grad) {
  using Vector = typename AttentionParams<Scalar>::Vector;
  const int d = p.dim;
  const RelationId target = b.target;

  const Vector x0 = p.embeddings[0].row(target).transpose();
  const Vector dlen = softmax_backward<Scalar>(b.length, g.length);
  grad.length_weight.noalias() += dlen * x0.transpose();
  grad.length_bias += dlen;
  grad.embeddings[0].row(target).noalias() += (p.length_weight.transpose() * dlen).transpose();

  Vector joint(2 * d);
  for (int l = 1; l <= p.max_length; ++l) {
    const auto ci = static_cast<std::size_t>(l - 1);
    if (!g.touched[ci]) continue;
    const auto& c = b.chains[ci];
    const Vector x = p.embeddings[static_cast<std::size_t>(l)].row(target).transpose();
    std::vector<Vector> dh(static_cast<std::size_t>(l + 1), Vector::Zero(d));

    for (int i = 0; i < l; ++i) {
      const auto si = static_cast<std::size_t>(i);
      const Vector& h = c.hidden[si + 1];
      const Vector dp = softmax_backward<Scalar>(c.predicate[si], g.predicate[ci][si]);
      grad.predicate_weight.noalias() += dp * h.transpose();
      grad.predicate_bias += dp;
      dh[si + 1].noalias() += p.predicate_weight.transpose() * dp;
      const Vector dq = softmax_backward<Scalar>(c.query_tr[si], g.query_tr[ci][si]);
      grad.query_tr_weight.noalias() += dq * h.transpose();
      grad.query_tr_bias += dq;
      dh[si + 1].noalias() += p.query_tr_weight.transpose() * dq;
    }
    for (int j = 1; j <= l; ++j)
      for (int k = j + 1; k <= l; ++k) {
        const auto q = RuleTemplate::pair_index(j - 1, k - 1, l);
        const Vector dpair = softmax_backward<Scalar>(c.pair_tr[q], g.pair_tr[ci][q]);
        joint << c.hidden[static_cast<std::size_t>(j)], c.hidden[static_cast<std::size_t>(k)];
        grad.pair_tr_weight.noalias() += dpair * joint.transpose();
        grad.pair_tr_bias += dpair;
        const Vector dj = p.pair_tr_weight.transpose() * dpair;
        dh[static_cast<std::size_t>(j)] += dj.head(d);
        dh[static_cast<std::size_t>(k)] += dj.tail(d);
      }

    Vector dx = Vector::Zero(d);
    for (int i = l; i >= 1; --i) {
      const auto si = static_cast<std::size_t>(i);
      const Vector& hp = c.hidden[si - 1];
      const Vector& z = c.gate[si - 1];
      const Vector& cand = c.candidate[si - 1];
      const Vector& dhi = dh[si];
      const Vector dz = (dhi.array() * (cand.array() - hp.array())).matrix();
      const Vector dc = (dhi.array() * z.array()).matrix();
      Vector dhp = (dhi.array() * (Scalar(1) - z.array())).matrix();
      const Vector dzp = (dz.array() * z.array() * (Scalar(1) - z.array())).matrix();
      const Vector dcp = (dc.array() * (Scalar(1) - cand.array().square())).matrix();
      joint << hp, x;
      grad.gate_weight.noalias() += dzp * joint.transpose();
      grad.gate_bias += dzp;
      const Vector du = p.gate_weight.transpose() * dzp;
      dhp += du.head(d);
      dx += du.tail(d);
      grad.state_weight.noalias() += dcp * hp.transpose();
      grad.input_weight.noalias() += dcp * x.transpose();
      grad.state_bias += dcp;
      dhp.noalias() += p.state_weight.transpose() * dcp;
      dx.noalias() += p.input_weight.transpose() * dcp;
      dh[si - 1] += dhp;
    }
    grad.embeddings[static_cast<std::size_t>(l)].row(target) += dx.transpose();
  }
}

}  // namespace tilp
