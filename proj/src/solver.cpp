#include "harvim/solver.hpp"

#include <cmath>
#include <cstdio>
#include <string>

#include "harvim/errors.hpp"
#include "harvim/metrics.hpp"

namespace harvim {

void InverseProblem::validate() const {
  if (!y.defined() || !coverage.defined()) {
    throw ConfigError("inverse problem: missing observation or coverage");
  }
  if (y.shape() != coverage.shape()) {
    throw ShapeError("inverse problem: observation/coverage shape mismatch");
  }
  if (sigma <= 0.0) throw ConfigError("inverse problem: sigma must be positive");
  for (double v : coverage.data()) {
    if (v < 0.0 || v > 1.0) {
      throw ConfigError("inverse problem: coverage outside [0,1]");
    }
  }
}

void ContinuationSchedule::validate() const {
  if (lambda_target <= 0.0) throw ConfigError("schedule: lambda_target must be positive");
  if (rounds <= 0) throw ConfigError("schedule: rounds must be positive");
  if (inner_steps < 0) throw ConfigError("schedule: inner_steps must be >= 0");
  if (eta <= 0.0) throw ConfigError("schedule: eta must be positive");
  if (warmup_steps < 0) throw ConfigError("schedule: warmup_steps must be >= 0");
}

Tensor objective(const Tensor& x, const InverseProblem& problem, double lambda) {
  if (!problem.y.defined() || !problem.coverage.defined()) {
    throw ConfigError("objective: missing observation or coverage");
  }
  Tensor keep = sub(Tensor::scalar(1.0), problem.coverage);
  Tensor residual = sub(problem.y, mul(keep, x));
  Tensor data_term = mul(Tensor::scalar(-0.5 / (problem.sigma * problem.sigma)),
                         sum(mul(residual, residual)));
  if (lambda == 0.0) return data_term;
  if (problem.prior == nullptr) {
    throw ConfigError("objective: lambda > 0 but the problem has no prior");
  }
  return add(data_term, mul(Tensor::scalar(lambda), problem.prior->log_prob(x)));
}

Tensor default_mle_init(const InverseProblem& problem) {
  double observed_sum = 0.0;
  std::size_t observed_count = 0;
  const auto w = problem.coverage.data();
  const auto y = problem.y.data();
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] < 0.5) {
      observed_sum += y[i];
      ++observed_count;
    }
  }
  const double fill = observed_count > 0 ? observed_sum / double(observed_count) : 0.0;
  std::vector<double> init(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) init[i] = w[i] < 0.5 ? y[i] : fill;
  return Tensor::from_data(problem.y.shape(), std::move(init));
}

namespace {

/// Five consecutive objective drops beyond tolerance abort the solve.
/// The tolerance is tight for the concave quadratic (lambda = 0), where
/// any sustained drop means a bad step size; prior rounds are nonconvex
/// and ripple near ridges, so only a sustained collapse counts there.
class DivergenceWatch {
 public:
  explicit DivergenceWatch(double rel_tolerance = 1e-6)
      : rel_tolerance_(rel_tolerance) {}

  void observe(double value, int step, const char* where) {
    if (has_prev_ &&
        value < prev_ - rel_tolerance_ * std::max(std::abs(prev_), 1.0)) {
      if (++drops_ >= 5) {
        throw NumericalError(std::string(where) + ": diverging at step " +
                             std::to_string(step) + ", objective fell from " +
                             std::to_string(prev_) + " to " + std::to_string(value));
      }
    } else {
      drops_ = 0;
    }
    prev_ = value;
    has_prev_ = true;
  }

  void reset(double rel_tolerance) {
    has_prev_ = false;
    drops_ = 0;
    rel_tolerance_ = rel_tolerance;
  }

 private:
  double rel_tolerance_;
  double prev_ = 0.0;
  bool has_prev_ = false;
  int drops_ = 0;
};

constexpr double kQuadraticDropTol = 1e-6;
constexpr double kPriorRoundDropTol = 5e-2;

Tensor leaf_like(const Tensor& t) {
  return Tensor::from_data(t.shape(), {t.data().begin(), t.data().end()}, true);
}

Tensor project_box(const Tensor& t, double lo, double hi) {
  std::vector<double> out(t.data().begin(), t.data().end());
  for (double& v : out) v = std::min(hi, std::max(lo, v));
  return Tensor::from_data(t.shape(), std::move(out));
}

/// Fixed-count (optionally projected) ascent on the objective at one
/// lambda; returns the final iterate detached from any tape.
Tensor ascend(const Tensor& x, const InverseProblem& problem, double lambda,
              int steps, double eta, const ContinuationSchedule* box,
              DivergenceWatch& watch, const char* where) {
  EnableGradGuard tape;  // the solver owns its per-step tape
  Tensor current = x;
  for (int step = 0; step < steps; ++step) {
    Tensor live = leaf_like(current);
    Tensor value = objective(live, problem, lambda);
    watch.observe(value.item(), step, where);
    Tensor direction = grad(value, {live})[0];
    current = add(current.detach(), mul(Tensor::scalar(eta), direction));
    if (box != nullptr && box->clamped()) {
      current = project_box(current, box->clamp_lo, box->clamp_hi);
    }
  }
  if (steps > 0) {
    watch.observe(objective(current, problem, lambda).item(), steps, where);
  }
  return current;
}

}  // namespace

Tensor mle_solve(const InverseProblem& problem, int steps, double eta,
                 const Tensor& x_init) {
  problem.validate();
  if (steps < 1) throw ConfigError("mle_solve: steps must be >= 1");
  DivergenceWatch watch;
  return ascend(x_init.detach(), problem, 0.0, steps, eta, nullptr, watch,
                "mle_solve");
}

std::vector<SolveState> continuation_solve(const InverseProblem& problem,
                                           const ContinuationSchedule& schedule,
                                           SeededRng& rng, const Tensor& x_init) {
  (void)rng;  // the solve itself is deterministic; callers randomize x_init
  problem.validate();
  schedule.validate();

  std::vector<SolveState> trajectory;
  DivergenceWatch watch;
  Tensor x = x_init.detach();
  if (schedule.warmup_steps > 0) {
    x = ascend(x, problem, 0.0, schedule.warmup_steps, schedule.eta, &schedule,
               watch, "continuation warm-up");
  }
  trajectory.push_back({x, 0.0, 0, objective(x, problem, 0.0).item()});

  for (int t = 1; t <= schedule.rounds; ++t) {
    // t/T first: the final round then lands on the target bitwise
    const double lambda_t =
        schedule.lambda_target * (double(t) / double(schedule.rounds));
    watch.reset(kPriorRoundDropTol);
    x = ascend(x, problem, lambda_t, schedule.inner_steps, schedule.eta,
               &schedule, watch, "continuation round");
    trajectory.push_back({x, lambda_t, t, objective(x, problem, lambda_t).item()});
  }
  return trajectory;
}

Tensor flow_r_remove(const Tensor& y, const Tensor& coverage,
                     const FlowModel& prior, const ContinuationSchedule& schedule,
                     SeededRng& rng, double sigma) {
  InverseProblem problem;
  problem.y = y;
  problem.coverage = coverage;
  problem.sigma = sigma;
  problem.prior = &prior;
  problem.validate();
  Tensor keep = sub(Tensor::scalar(1.0), coverage);
  Tensor init = add(mul(keep, y), normal_tensor(rng, y.shape(), 0.1));
  ContinuationSchedule boxed = schedule;
  if (!boxed.clamped()) {
    // keep iterates in a plausible pixel range; reconstructions live
    // near [0,1] and a rough score field must not eject them
    boxed.clamp_lo = -0.25;
    boxed.clamp_hi = 1.25;
  }
  auto trajectory = continuation_solve(problem, boxed, rng, init);
  return trajectory.back().x;
}

std::string trajectory_csv(const std::vector<SolveState>& trajectory,
                           const Tensor* ground_truth) {
  std::string out = ground_truth ? "round,lambda,objective,psnr\n"
                                 : "round,lambda,objective\n";
  char line[128];
  for (const auto& state : trajectory) {
    if (ground_truth) {
      std::snprintf(line, sizeof(line), "%d,%.10g,%.10g,%.6g\n", state.round,
                    state.lambda, state.objective_value,
                    psnr(state.x, *ground_truth));
    } else {
      std::snprintf(line, sizeof(line), "%d,%.10g,%.10g\n", state.round,
                    state.lambda, state.objective_value);
    }
    out += line;
  }
  return out;
}

Tensor binarize_coverage(const Tensor& coverage) {
  std::vector<double> out(coverage.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = coverage.at(i) >= 0.5 ? 1.0 : 0.0;
  }
  return Tensor::from_data(coverage.shape(), std::move(out));
}

}  // namespace harvim
