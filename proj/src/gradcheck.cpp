#include "bonenet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "bonenet/layers.hpp"
#include "bonenet/rng.hpp"
#include "bonenet/train.hpp"

namespace bonenet {
namespace {

constexpr std::size_t kCasesPerCheck = 10;

using Builder = std::function<NodeId(Graph&, const std::vector<NodeId>&)>;

struct Case {
  std::vector<Tensor> inputs;
  Builder build;
};

using CaseFactory = std::function<Case(std::mt19937_64&)>;

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Tensor random_tensor(std::mt19937_64& rng, Shape shape) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = uniform(rng, -1.0, 1.0);
  return t;
}

// Values with |v| >= 0.1, keeping kinks at zero out of FD reach.
Tensor away_from_zero(std::mt19937_64& rng, Shape shape) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = (rng() & 1 ? 1.0 : -1.0) * uniform(rng, 0.1, 1.0);
  return t;
}

// Pairwise distinct values spaced 0.05 apart, so pooling has no ties.
Tensor distinct_tensor(std::mt19937_64& rng, Shape shape) {
  Tensor t(std::move(shape));
  std::vector<std::size_t> order(t.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.05 * static_cast<double>(order[i]) - 1.0;
  return t;
}

Shape random_shape(std::mt19937_64& rng) {
  Shape s(pick(rng, 1, 4));
  for (auto& d : s) d = pick(rng, 1, 4);
  return s;
}

// Reduces any output to a scalar with fixed random weights.
NodeId scalarize(Graph& g, NodeId out, const Tensor& weights) {
  if (g.value(out).size() == 1) return out;
  return ops::reduce_mean(g, ops::mul(g, out, g.input(weights)));
}

double loss_value(const Case& c, const std::vector<Tensor>& inputs, const Tensor& weights) {
  Graph g;
  std::vector<NodeId> leaves;
  for (const auto& t : inputs) leaves.push_back(g.input(t, true));
  return g.value(scalarize(g, c.build(g, leaves), weights)).item();
}

double check_case(const Case& c, std::mt19937_64& rng) {
  Graph g;
  std::vector<NodeId> leaves;
  for (const auto& t : c.inputs) leaves.push_back(g.input(t, true));
  const NodeId out = c.build(g, leaves);
  const Tensor weights = random_tensor(rng, g.shape(out));
  const auto grads = g.backward_all(scalarize(g, out, weights));

  double worst = 0.0;
  std::vector<Tensor> probe = c.inputs;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const Tensor& analytic = grads[leaves[i]];
    for (std::size_t j = 0; j < probe[i].size(); ++j) {
      const double orig = probe[i][j];
      probe[i][j] = orig + kGradCheckStep;
      const double up = loss_value(c, probe, weights);
      probe[i][j] = orig - kGradCheckStep;
      const double down = loss_value(c, probe, weights);
      probe[i][j] = orig;
      const double fd = (up - down) / (2.0 * kGradCheckStep);
      const double a = analytic.empty() ? 0.0 : analytic[j];
      const double err = std::abs(a - fd) / std::max(1.0, std::abs(fd));
      worst = std::max(worst, std::isnan(err) ? INFINITY : err);
    }
  }
  return worst;
}

Case unary(std::mt19937_64& rng, bool avoid_zero, NodeId (*op)(Graph&, NodeId)) {
  const Shape s = random_shape(rng);
  return {{avoid_zero ? away_from_zero(rng, s) : random_tensor(rng, s)},
          [op](Graph& g, const std::vector<NodeId>& in) { return op(g, in[0]); }};
}

Case binary(std::mt19937_64& rng, NodeId (*op)(Graph&, NodeId, NodeId)) {
  const Shape s = random_shape(rng);
  return {{random_tensor(rng, s), random_tensor(rng, s)},
          [op](Graph& g, const std::vector<NodeId>& in) { return op(g, in[0], in[1]); }};
}

Case conv_case(std::mt19937_64& rng) {
  const std::size_t b = pick(rng, 1, 2), c = pick(rng, 1, 3), o = pick(rng, 1, 3);
  const std::size_t k = pick(rng, 0, 1) ? 3 : 1, stride = pick(rng, 1, 2), pad = pick(rng, 0, 1);
  // Output extent (n + 2 pad - k) / stride + 1 must be integral.
  const std::size_t h = k - 2 * pad + stride * pick(rng, 1, 3), w = k - 2 * pad + stride * pick(rng, 1, 3);
  const bool with_bias = pick(rng, 0, 1) == 1;
  std::vector<Tensor> in{random_tensor(rng, {b, c, h, w}), random_tensor(rng, {o, c, k, k})};
  if (with_bias) in.push_back(random_tensor(rng, {o}));
  return {std::move(in), [=](Graph& g, const std::vector<NodeId>& n) {
            std::optional<NodeId> bias;
            if (with_bias) bias = n[2];
            return ops::conv2d(g, n[0], n[1], bias, stride, pad);
          }};
}

Case pool_case(std::mt19937_64& rng) {
  const std::size_t window = pick(rng, 2, 3), stride = pick(rng, 1, 2);
  const std::size_t h = window + stride * pick(rng, 0, 2), w = window + stride * pick(rng, 0, 2);
  return {{distinct_tensor(rng, {pick(rng, 1, 2), pick(rng, 1, 2), h, w})},
          [=](Graph& g, const std::vector<NodeId>& n) { return ops::maxpool2d(g, n[0], window, stride); }};
}

Case batchnorm_case(std::mt19937_64& rng, Mode mode) {
  const std::size_t b = pick(rng, 2, 4), c = pick(rng, 1, 3), h = pick(rng, 1, 3), w = pick(rng, 1, 3);
  Tensor mean = random_tensor(rng, {c});
  Tensor var({c});
  for (double& v : var.data()) v = uniform(rng, 0.5, 2.0);
  Tensor gamma({c});
  for (double& v : gamma.data()) v = uniform(rng, 0.5, 1.5);
  return {{random_tensor(rng, {b, c, h, w}), gamma, random_tensor(rng, {c})},
          [=](Graph& g, const std::vector<NodeId>& n) {
            Tensor rm = mean, rv = var;
            return ops::batchnorm(g, n[0], n[1], n[2], &rm, &rv, kBatchNormMomentum, kBatchNormEps, mode);
          }};
}

Case composite_case(std::mt19937_64& rng) {
  const std::size_t b = pick(rng, 2, 3), c = pick(rng, 1, 2), o = pick(rng, 2, 3);
  const std::size_t side = 2 * pick(rng, 2, 3), units = pick(rng, 1, 2);
  const std::size_t flat = o * (side / 2) * (side / 2);
  Tensor gamma({o});
  for (double& v : gamma.data()) v = uniform(rng, 0.5, 1.5);
  Tensor target({b, units});
  for (double& v : target.data()) v = uniform(rng, 5.0, 10.0);
  return {{random_tensor(rng, {b, c, side, side}), random_tensor(rng, {o, c, 3, 3}), gamma,
           random_tensor(rng, {o}), random_tensor(rng, {units, flat}), random_tensor(rng, {units})},
          [=](Graph& g, const std::vector<NodeId>& n) {
            NodeId h = ops::conv2d(g, n[0], n[1], std::nullopt, 1, 1);
            h = ops::batchnorm(g, h, n[2], n[3], nullptr, nullptr, kBatchNormMomentum, kBatchNormEps, Mode::Train);
            h = ops::maxpool2d(g, ops::relu(g, h), 2, 2);
            h = ops::linear(g, ops::reshape(g, h, {b, flat}), n[4], n[5]);
            return loss(g, h, g.input(target), LossKind::L1);
          }};
}

std::vector<std::pair<std::string, CaseFactory>> checks() {
  std::vector<std::pair<std::string, CaseFactory>> out;
  out.emplace_back("add", [](auto& r) { return binary(r, ops::add); });
  out.emplace_back("sub", [](auto& r) { return binary(r, ops::sub); });
  out.emplace_back("mul", [](auto& r) { return binary(r, ops::mul); });
  out.emplace_back("add_scalar", [](auto& r) {
    const double c = uniform(r, -2.0, 2.0);
    return Case{{random_tensor(r, random_shape(r))},
                [c](Graph& g, const std::vector<NodeId>& n) { return ops::add_scalar(g, n[0], c); }};
  });
  out.emplace_back("mul_scalar", [](auto& r) {
    const double c = uniform(r, -2.0, 2.0);
    return Case{{random_tensor(r, random_shape(r))},
                [c](Graph& g, const std::vector<NodeId>& n) { return ops::mul_scalar(g, n[0], c); }};
  });
  out.emplace_back("relu", [](auto& r) { return unary(r, true, ops::relu); });
  out.emplace_back("abs", [](auto& r) { return unary(r, true, ops::abs); });
  out.emplace_back("square", [](auto& r) { return unary(r, false, ops::square); });
  out.emplace_back("reduce_mean", [](auto& r) { return unary(r, false, ops::reduce_mean); });
  out.emplace_back("matmul", [](auto& r) {
    const std::size_t m = pick(r, 1, 4), k = pick(r, 1, 4), n = pick(r, 1, 4);
    return Case{{random_tensor(r, {m, k}), random_tensor(r, {k, n})},
                [](Graph& g, const std::vector<NodeId>& in) { return ops::matmul(g, in[0], in[1]); }};
  });
  out.emplace_back("reshape", [](auto& r) {
    const Shape s = random_shape(r);
    const std::size_t n = shape_numel(s);
    return Case{{random_tensor(r, s)},
                [n](Graph& g, const std::vector<NodeId>& in) { return ops::reshape(g, in[0], {1, n}); }};
  });
  out.emplace_back("concat", [](auto& r) {
    const std::size_t axis = pick(r, 0, 1), parts = pick(r, 2, 3);
    std::vector<Tensor> in;
    for (std::size_t p = 0; p < parts; ++p) in.push_back(random_tensor(r, axis == 0 ? Shape{pick(r, 1, 3), 3, 2}
                                                                                      : Shape{2, pick(r, 1, 3), 2}));
    return Case{std::move(in), [axis](Graph& g, const std::vector<NodeId>& n) { return ops::concat(g, n, axis); }};
  });
  out.emplace_back("conv2d", conv_case);
  out.emplace_back("maxpool2d", pool_case);
  out.emplace_back("global_avg_pool", [](auto& r) {
    return Case{{random_tensor(r, {pick(r, 1, 3), pick(r, 1, 3), pick(r, 1, 4), pick(r, 1, 4)})},
                [](Graph& g, const std::vector<NodeId>& n) { return ops::global_avg_pool(g, n[0]); }};
  });
  out.emplace_back("linear", [](auto& r) {
    const std::size_t b = pick(r, 1, 4), in = pick(r, 1, 5), o = pick(r, 1, 4);
    return Case{{random_tensor(r, {b, in}), random_tensor(r, {o, in}), random_tensor(r, {o})},
                [](Graph& g, const std::vector<NodeId>& n) { return ops::linear(g, n[0], n[1], n[2]); }};
  });
  out.emplace_back("batchnorm_train", [](auto& r) { return batchnorm_case(r, Mode::Train); });
  out.emplace_back("batchnorm_eval", [](auto& r) { return batchnorm_case(r, Mode::Eval); });
  out.emplace_back("dropout", [](auto& r) {
    const double rate = uniform(r, 0.1, 0.6);
    const std::uint64_t mask_seed = r();
    return Case{{random_tensor(r, random_shape(r))}, [=](Graph& g, const std::vector<NodeId>& n) {
                  std::mt19937_64 mask_rng(mask_seed);
                  return ops::dropout(g, n[0], rate, Mode::Train, mask_rng);
                }};
  });
  for (auto kind : {LossKind::L1, LossKind::L2}) {
    out.emplace_back(kind == LossKind::L1 ? "l1_loss" : "l2_loss", [kind](auto& r) {
      const std::size_t b = pick(r, 1, 6);
      Tensor target = random_tensor(r, {b, 1});
      Tensor pred = away_from_zero(r, {b, 1});
      pred.add_(target);
      return Case{{pred}, [kind, target](Graph& g, const std::vector<NodeId>& n) {
                    return loss(g, n[0], g.input(target), kind);
                  }};
    });
  }
  out.emplace_back("conv_bn_relu_pool_fc_l1", composite_case);
  return out;
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed,
                                                 const std::function<void(const GradCheckResult&)>& on_result) {
  std::vector<GradCheckResult> results;
  std::uint64_t index = 0;
  for (const auto& [name, factory] : checks()) {
    std::mt19937_64 rng(derive_seed(seed, {index++}));
    GradCheckResult res;
    res.name = name;
    for (std::size_t c = 0; c < kCasesPerCheck; ++c) {
      const Case cs = factory(rng);
      res.max_rel_err = std::max(res.max_rel_err, check_case(cs, rng));
      ++res.cases;
    }
    res.passed = res.max_rel_err < kGradCheckTolerance;
    if (on_result) on_result(res);
    results.push_back(std::move(res));
  }
  return results;
}

}  // namespace bonenet
