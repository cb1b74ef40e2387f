#pragma once

#include <cstdint>
#include <vector>

#include "harvim/flow.hpp"
#include "harvim/solver.hpp"
#include "harvim/watermark.hpp"

namespace harvim {

/// How the watermark gradient is propagated through the K unrolled
/// inner ascent steps of one round:
///  - ExactK1: K = 1 and the previous iterate is a constant, so the
///    only watermark dependence of the ascent direction is the
///    quadratic data term; the gradient is exact with a single
///    reverse pass (no prior second derivatives arise).
///  - FirstOrder: K > 1, dependence through intermediate iterates is
///    dropped (cheap, approximate).
///  - Hvp: K > 1, exact; the prior score is kept on the tape so the
///    reverse pass applies Hessian-vector products through log_prob.
enum class MetaMode { ExactK1, FirstOrder, Hvp };

struct HarvimConfig {
  int rounds = 30;                         // T
  int inner_steps = 1;                     // K
  double lambda_target = 1.0;
  double sigma = 0.05;
  double learning_rate = 0.05;
  double reg_coeff = 0.001;                // weight of R(m)/n
  double alpha = 0.15;
  double beta = 0.01;
  int grid_mle_steps = 50;
  MetaMode meta_mode = MetaMode::ExactK1;
  std::uint64_t master_seed = 0;
  double eta = 1e-3;                       // inner ascent step size
  int warmup_steps = 100;                  // initial MLE solve
  double weight_decay = 0.01;              // AdamW decoupled decay

  void validate() const;
};

struct HarvimState {
  WatermarkParams params;
  Tensor x_tilde;      // current reconstruction, constant for the next round
  double lambda = 0.0;
  int round = 0;
};

struct MetaGradient {
  Tensor d_raw_left, d_raw_bottom, d_raw_scale;
  Tensor d_latent;  // defined only on the decoder path
  double norm = 0.0;
  MetaMode mode = MetaMode::ExactK1;
};

/// One unrolled round: gradient plus the new iterate and diagnostics.
struct MetaStep {
  MetaGradient gradient;
  Tensor x_next;
  double similarity_db = 0.0;
  double reg_value = 0.0;
  double upper_value = 0.0;
};

struct RoundAudit {
  int round = 0;
  double lambda = 0.0;
  double similarity_db = 0.0;
  double reg_value = 0.0;
  double upper_loss = 0.0;
  double meta_grad_norm = 0.0;
  double p_left = 0.0;
  double p_bottom = 0.0;
  double area_frac = 0.0;
};

struct HarvimResult {
  WatermarkParams params;
  Tensor watermark;       // final rendered m
  Tensor coverage;        // W(m)
  Tensor observation;     // final-round y
  Tensor reconstruction;  // final x_tilde
  Tensor display;         // visible composite at the default tone
  std::vector<RoundAudit> audit;
};

inline constexpr double kDefaultGlyphTone = 1.0;

/// Differentiable PSNR in dB (MAX = 1) through the MSE chain. Exact
/// equality caps at 99 dB and returns a constant (the objective is not
/// differentiable there).
Tensor similarity(const Tensor& x_recon, const Tensor& x_t);

/// similarity + c * R(m)/n (the regularizer is rescaled by the pixel
/// count before weighting).
Tensor upper_loss(const Tensor& x_recon, const Tensor& x_t, const Tensor& m,
                  double reg_coeff);

/// Unrolls K inner ascent steps from state.x_tilde at state.lambda with
/// the round's fixed noise, then differentiates the upper loss with
/// respect to the watermark parameters per config.meta_mode.
MetaStep meta_grad(const HarvimState& state, const Tensor& x_t,
                   const Tensor& noise, const HarvimConfig& config,
                   const FlowModel& prior,
                   const DecoderGenerator* decoder = nullptr);

/// 3x3 grid search over padding ratios {0, 0.5, 1}^2 scored by the
/// PSNR of a grid_mle_steps MLE solve; returns the location whose
/// reconstruction is worst. Ties keep the first candidate in
/// lexicographic order. Exactly nine candidates are evaluated; their
/// scores land in *scores (row-major over p_left then p_bottom) when
/// given.
WatermarkParams grid_init(const Tensor& x_t, const HarvimConfig& config,
                          const FlowModel& prior, SeededRng& rng,
                          std::size_t glyph_index,
                          const DecoderGenerator* decoder = nullptr,
                          std::vector<double>* scores = nullptr);

/// Full optimization: grid init, initial MLE solve at lambda = 0, then
/// `rounds` rounds of fresh noise, K inner steps, meta-gradient, and an
/// AdamW update of the watermark parameters. Seeded-deterministic.
HarvimResult run(const Tensor& x_t, const HarvimConfig& config,
                 const FlowModel& prior, std::size_t glyph_index,
                 const DecoderGenerator* decoder = nullptr);

}  // namespace harvim
