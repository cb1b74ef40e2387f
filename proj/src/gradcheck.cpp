#include "harvim/gradcheck.hpp"

#include <cmath>
#include <functional>

#include "harvim/flow.hpp"
#include "harvim/harvim.hpp"
#include "harvim/metrics.hpp"
#include "harvim/watermark.hpp"

namespace harvim::gradcheck {

namespace {

constexpr double kStep = 1e-5;

double norm_rel_err(const std::vector<double>& got, const Tensor& want) {
  double err = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    err += (got[i] - want.at(i)) * (got[i] - want.at(i));
    ref += want.at(i) * want.at(i);
  }
  return std::sqrt(err) / std::max(std::sqrt(ref), 1e-8);
}

void record(SuiteResult& suite, double rel_err) {
  ++suite.cases;
  suite.worst_rel_err = std::max(suite.worst_rel_err, rel_err);
  if (rel_err > suite.tolerance) ++suite.failures;
}

Tensor as_leaf(const Tensor& t) {
  return Tensor::from_data(t.shape(), {t.data().begin(), t.data().end()}, true);
}

FlowModel perturbed_flow(std::size_t dim, std::size_t layers, std::size_t hidden,
                         SeededRng& rng) {
  FlowModel model = FlowModel::make(dim, 0, layers, hidden, 2.0, rng);
  for (auto& layer : model.layers()) {
    for (Mlp* net : {&layer.scale_net, &layer.translate_net}) {
      net->w3 = normal_tensor(rng, net->w3.shape(), 0.25);
      net->b3 = normal_tensor(rng, net->b3.shape(), 0.08);
    }
  }
  model.freeze();
  return model;
}

// Raw watermark parameters whose warp coordinates keep clear of the
// bilinear knots, where the derivative legitimately jumps.
Tensor knot_safe_raws(SeededRng& rng, std::size_t side) {
  while (true) {
    const double rl = rng.uniform(-1.5, 1.5);
    const double rb = rng.uniform(-1.5, 1.5);
    const double rs = rng.uniform(-1.0, 1.0);
    const double area =
        kMinAreaFrac + (kMaxAreaFrac - kMinAreaFrac) / (1.0 + std::exp(-rs));
    const double gp = double(side) * std::sqrt(area);
    const double sc = gp / double(kGlyphSize);
    const double c0 = (double(side) - gp) / (1.0 + std::exp(-rl));
    const double r0 = (double(side) - gp) * (1.0 - 1.0 / (1.0 + std::exp(-rb)));
    bool near_knot = false;
    for (std::size_t i = 0; i < side && !near_knot; ++i) {
      for (double coord : {(double(i) - r0) / sc, (double(i) - c0) / sc}) {
        if (coord > -1.5 && coord < double(kGlyphSize) + 0.5 &&
            std::abs(coord - std::round(coord)) < 1e-3) {
          near_knot = true;
        }
      }
    }
    if (!near_knot) return Tensor::from_data({3}, {rl, rb, rs});
  }
}

}  // namespace

SuiteResult check_core_ops(std::uint64_t seed, int cases) {
  PrecisionGuard f64(Precision::f64);
  SuiteResult suite{.name = "core-ops", .tolerance = 1e-4};
  SeededRng rng(seed);

  using Fn = std::function<Tensor(const Tensor&)>;
  struct OpCase {
    Fn apply;
    double lo, hi;
  };
  std::vector<OpCase> unary = {
      {[](const Tensor& t) { return exp(t); }, -2, 2},
      {[](const Tensor& t) { return log(t); }, 0.1, 3},
      {[](const Tensor& t) { return tanh(t); }, -3, 3},
      {[](const Tensor& t) { return sigmoid(t); }, -4, 4},
      {[](const Tensor& t) { return pow(t, 3.0); }, -2, 2},
      {[](const Tensor& t) { return pow(t, 0.5); }, 0.2, 4},
      {[](const Tensor& t) { return neg(t); }, -2, 2},
      {[](const Tensor& t) { return divide(Tensor::scalar(1.0), t); }, 0.3, 3},
      {[](const Tensor& t) { return mean(mul(t, t)); }, -2, 2},
  };

  while (suite.cases < cases) {
    const std::size_t pick = rng.next_u64() % (unary.size() + 2);
    if (pick < unary.size()) {
      const auto& op = unary[pick];
      const std::size_t n = 1 + rng.next_u64() % 6;
      Tensor x = uniform_tensor(rng, {n}, op.lo, op.hi);
      Tensor probe = uniform_tensor(rng, {op.apply(x).size() == 1 ? 1 : n}, -1, 1);
      auto value = [&](const Tensor& t) {
        Tensor out = op.apply(t);
        return out.size() == 1 ? sum(out) : sum(mul(out, probe));
      };
      Tensor live = as_leaf(x);
      Tensor g = grad(value(live), {live})[0];
      Tensor fd = finite_diff_grad(
          [&](const Tensor& t) { return value(t).item(); }, x, kStep);
      record(suite, norm_rel_err({g.data().begin(), g.data().end()}, fd));
    } else if (pick == unary.size()) {
      // binary op with broadcasting
      const std::size_t n = 1 + rng.next_u64() % 4;
      const std::size_t m = 1 + rng.next_u64() % 3;
      Tensor a = uniform_tensor(rng, {m, 1}, 0.4, 2.0);
      Tensor b = uniform_tensor(rng, {n}, 0.4, 2.0);
      Tensor probe = uniform_tensor(rng, {m, n}, -1, 1);
      const int which = int(rng.next_u64() % 4);
      auto apply = [&](const Tensor& x, const Tensor& y) {
        switch (which) {
          case 0: return add(x, y);
          case 1: return sub(x, y);
          case 2: return mul(x, y);
          default: return divide(x, y);
        }
      };
      Tensor al = as_leaf(a), bl = as_leaf(b);
      auto gs = grad(sum(mul(apply(al, bl), probe)), {al, bl});
      Tensor fd_a = finite_diff_grad(
          [&](const Tensor& t) { return sum(mul(apply(t, b), probe)).item(); }, a,
          kStep);
      Tensor fd_b = finite_diff_grad(
          [&](const Tensor& t) { return sum(mul(apply(a, t), probe)).item(); }, b,
          kStep);
      record(suite, norm_rel_err({gs[0].data().begin(), gs[0].data().end()}, fd_a));
      record(suite, norm_rel_err({gs[1].data().begin(), gs[1].data().end()}, fd_b));
    } else {
      // matmul composed with a nonlinearity
      const std::size_t m = 1 + rng.next_u64() % 3;
      const std::size_t k = 1 + rng.next_u64() % 3;
      const std::size_t n = 1 + rng.next_u64() % 3;
      Tensor a = normal_tensor(rng, {m, k});
      Tensor b = normal_tensor(rng, {k, n});
      Tensor probe = normal_tensor(rng, {m, n});
      auto value = [&](const Tensor& x, const Tensor& y) {
        return sum(mul(tanh(matmul(x, y)), probe));
      };
      Tensor al = as_leaf(a), bl = as_leaf(b);
      auto gs = grad(value(al, bl), {al, bl});
      Tensor fd_a = finite_diff_grad(
          [&](const Tensor& t) { return value(t, b).item(); }, a, kStep);
      Tensor fd_b = finite_diff_grad(
          [&](const Tensor& t) { return value(a, t).item(); }, b, kStep);
      record(suite, norm_rel_err({gs[0].data().begin(), gs[0].data().end()}, fd_a));
      record(suite, norm_rel_err({gs[1].data().begin(), gs[1].data().end()}, fd_b));
    }
  }
  return suite;
}

SuiteResult check_flow_grads(std::uint64_t seed, int cases) {
  PrecisionGuard f64(Precision::f64);
  SuiteResult suite{.name = "flow-grad-log-prob", .tolerance = 1e-4};
  SeededRng rng(seed);
  while (suite.cases < cases) {
    const std::size_t dim = 2 + rng.next_u64() % 7;
    FlowModel model = perturbed_flow(dim, 2 + rng.next_u64() % 2,
                                     8 + rng.next_u64() % 5, rng);
    Tensor x = normal_tensor(rng, {dim});
    Tensor g = model.grad_log_prob(x);
    Tensor fd = finite_diff_grad(
        [&](const Tensor& t) { return model.log_prob(t).item(); }, x, kStep);
    record(suite, norm_rel_err({g.data().begin(), g.data().end()}, fd));
  }
  return suite;
}

SuiteResult check_render_grads(std::uint64_t seed, int cases) {
  PrecisionGuard f64(Precision::f64);
  SuiteResult suite{.name = "render-params", .tolerance = 1e-3};
  SeededRng rng(seed);
  const std::size_t side = 32;
  while (suite.cases < cases) {
    Tensor raws = knot_safe_raws(rng, side);
    const std::size_t glyph = rng.next_u64() % GlyphAtlas::kCount;
    Tensor probe = uniform_tensor(rng, {side * side}, -1.0, 1.0);

    auto params = WatermarkParams::make(glyph, raws.at(0), raws.at(1),
                                        raws.at(2), true);
    Tensor loss = sum(mul(render(params, side), probe));
    auto gs = grad(loss, {params.raw_left, params.raw_bottom, params.raw_scale});
    Tensor fd = finite_diff_grad(
        [&](const Tensor& p) {
          auto trial = WatermarkParams::make(glyph, p.at(0), p.at(1), p.at(2),
                                             false);
          return sum(mul(render(trial, side), probe)).item();
        },
        raws, kStep);
    record(suite, norm_rel_err({gs[0].item(), gs[1].item(), gs[2].item()}, fd));
  }
  return suite;
}

SuiteResult check_meta_grad(std::uint64_t seed, int cases) {
  PrecisionGuard f64(Precision::f64);
  SuiteResult suite{.name = "meta-grad-exact-k1", .tolerance = 1e-3};
  SeededRng rng(seed);
  const std::size_t side = 8;  // n = 64

  HarvimConfig config;
  config.inner_steps = 1;
  config.meta_mode = MetaMode::ExactK1;
  config.sigma = 0.1;
  config.lambda_target = 1.0;
  config.eta = 1e-3;
  config.reg_coeff = 0.001;

  while (suite.cases < cases) {
    const bool use_real_flow = (suite.cases % 4) == 3;
    FlowModel prior = use_real_flow
                          ? perturbed_flow(side * side, 2, 10, rng)
                          : FlowModel::identity(side * side);
    Tensor x_t = uniform_tensor(rng, {side * side}, 0.0, 1.0);
    Tensor x_prev = uniform_tensor(rng, {side * side}, 0.0, 1.0);
    Tensor noise = normal_tensor(rng, {side * side}, config.sigma);
    Tensor raws = knot_safe_raws(rng, side);
    const std::size_t glyph = rng.next_u64() % GlyphAtlas::kCount;

    HarvimState state;
    state.params = WatermarkParams::make(glyph, raws.at(0), raws.at(1),
                                         raws.at(2), true);
    state.x_tilde = x_prev;
    state.lambda = config.lambda_target;
    MetaStep step = meta_grad(state, x_t, noise, config, prior);

    // the oracle: value-only replay of the full round
    Tensor prior_grad_const = prior.grad_log_prob(x_prev);
    auto value = [&](const Tensor& p) {
      NoGradGuard no_grad;
      auto trial = WatermarkParams::make(glyph, p.at(0), p.at(1), p.at(2), false);
      Tensor m = render(trial, side);
      Tensor keep = sub(Tensor::scalar(1.0), soft_mask(m, config.alpha,
                                                       config.beta)
                                                  .w);
      Tensor y = add(mul(keep, x_t), noise);
      Tensor direction = mul(mul(keep, sub(y, mul(keep, x_prev))),
                             Tensor::scalar(1.0 / (config.sigma * config.sigma)));
      direction = add(direction,
                      mul(Tensor::scalar(config.lambda_target), prior_grad_const));
      Tensor x1 = add(x_prev, mul(Tensor::scalar(config.eta), direction));
      return upper_loss(x1, x_t, m, config.reg_coeff).item();
    };
    Tensor fd = finite_diff_grad(value, raws, kStep);
    record(suite,
           norm_rel_err({step.gradient.d_raw_left.item(),
                         step.gradient.d_raw_bottom.item(),
                         step.gradient.d_raw_scale.item()},
                        fd));
  }
  return suite;
}

std::vector<SuiteResult> run_all(std::uint64_t seed, int cases_per_suite) {
  return {check_core_ops(seed, cases_per_suite),
          check_flow_grads(seed + 1, cases_per_suite),
          check_render_grads(seed + 2, cases_per_suite),
          check_meta_grad(seed + 3, cases_per_suite)};
}

}  // namespace harvim::gradcheck
