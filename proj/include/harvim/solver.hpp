#pragma once

#include <vector>

#include "harvim/flow.hpp"
#include "harvim/rng.hpp"
#include "harvim/tensor.hpp"

namespace harvim {

/// Inpainting-style inverse problem: observation y, soft coverage W
/// (observation operator is diag(1-W)), Gaussian noise level, and the
/// generative prior used for the MAP term.
struct InverseProblem {
  Tensor y;
  Tensor coverage;  // entries in (0,1); ~1 inside the watermark
  double sigma = 0.05;
  const FlowModel* prior = nullptr;

  void validate() const;
};

/// Fixed-step continuation schedule: lambda is annealed from 0 to
/// lambda_target in `rounds` equal increments, with `inner_steps`
/// ascent steps of size eta per round, after `warmup_steps` of pure
/// maximum-likelihood ascent.
struct ContinuationSchedule {
  double lambda_target = 1.0;
  int rounds = 30;
  int inner_steps = 6;
  double eta = 1e-3;
  int warmup_steps = 100;
  /// Optional projection of every iterate onto [clamp_lo, clamp_hi].
  /// Disabled when clamp_lo >= clamp_hi. Image-domain removers enable
  /// it so a rough score field cannot fling pixels out of range.
  double clamp_lo = 0.0;
  double clamp_hi = 0.0;

  bool clamped() const { return clamp_lo < clamp_hi; }
  void validate() const;
};

struct SolveState {
  Tensor x;
  double lambda = 0.0;
  int round = 0;
  double objective_value = 0.0;
};

/// MAP objective -||y - (1-W) x||^2 / (2 sigma^2) + lambda log p_G(x),
/// up to the additive Gaussian normalization constant. Differentiable
/// in x (and in y/W when those carry a tape). lambda == 0 skips the
/// prior entirely.
Tensor objective(const Tensor& x, const InverseProblem& problem, double lambda);

/// Observed pixels copied from y, masked pixels set to the mean of the
/// observed ones (coverage >= 0.5 counts as masked).
Tensor default_mle_init(const InverseProblem& problem);

/// Gradient ascent on the lambda = 0 objective. Aborts with
/// NumericalError if the objective keeps dropping (divergence).
Tensor mle_solve(const InverseProblem& problem, int steps, double eta,
                 const Tensor& x_init);

/// Algorithm: warm-up MLE ascent, then `rounds` rounds of inner ascent
/// with lambda_t = lambda_target * t / rounds (so lambda lands on the
/// target exactly). Returns the state at the end of every round,
/// index 0 being the warm-up result at lambda = 0.
std::vector<SolveState> continuation_solve(const InverseProblem& problem,
                                           const ContinuationSchedule& schedule,
                                           SeededRng& rng, const Tensor& x_init);

/// Worst-case remover: solves the inpainting problem with the prior
/// from a random init (observed pixels centered at the observation,
/// everything perturbed by 0.1-scaled standard normal noise). The
/// remover assumes the noise level it was told about; sigma defaults
/// to the repo-wide 0.05.
Tensor flow_r_remove(const Tensor& y, const Tensor& coverage,
                     const FlowModel& prior, const ContinuationSchedule& schedule,
                     SeededRng& rng, double sigma = 0.05);

/// Ablation helper: snap soft coverage to {0,1} at 0.5.
Tensor binarize_coverage(const Tensor& coverage);

/// Diagnostic dump of a solve trajectory:
/// round,lambda,objective[,psnr] rows with a header. PSNR to the ground
/// truth is included when one is supplied.
std::string trajectory_csv(const std::vector<SolveState>& trajectory,
                           const Tensor* ground_truth = nullptr);

}  // namespace harvim
