#include "harvim/harvim.hpp"

#include <cmath>

#include "harvim/errors.hpp"
#include "harvim/metrics.hpp"
#include "harvim/optim.hpp"

namespace harvim {

namespace {

constexpr double kLn10 = 2.302585092994046;

std::size_t square_side(const Tensor& t) {
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(double(t.size()))));
  if (side * side != t.size()) {
    throw ShapeError("harvim: image of " + std::to_string(t.size()) +
                     " pixels is not square");
  }
  return side;
}

Tensor leaf_like(const Tensor& t, bool requires_grad) {
  return Tensor::from_data(t.shape(), {t.data().begin(), t.data().end()},
                           requires_grad);
}

}  // namespace

void HarvimConfig::validate() const {
  if (rounds < 0) throw ConfigError("harvim.rounds must be >= 0");
  if (inner_steps < 1) throw ConfigError("harvim.inner_steps must be >= 1");
  if (meta_mode == MetaMode::ExactK1 && inner_steps != 1) {
    throw ConfigError("meta mode exact-k1 requires inner_steps == 1");
  }
  if (lambda_target <= 0) throw ConfigError("harvim.lambda_target must be positive");
  if (sigma < 0) throw ConfigError("harvim.sigma must be >= 0");
  if (learning_rate <= 0) throw ConfigError("harvim.learning_rate must be positive");
  if (reg_coeff < 0) throw ConfigError("harvim.reg_coeff must be >= 0");
  if (beta <= 0) throw ConfigError("harvim.beta must be positive");
  if (grid_mle_steps < 1) throw ConfigError("harvim.grid_mle_steps must be >= 1");
  if (eta <= 0) throw ConfigError("harvim.eta must be positive");
  if (warmup_steps < 1) throw ConfigError("harvim.warmup_steps must be >= 1");
  if (weight_decay < 0) throw ConfigError("harvim.weight_decay must be >= 0");
}

Tensor similarity(const Tensor& x_recon, const Tensor& x_t) {
  if (x_recon.shape() != x_t.shape()) throw ShapeError("similarity: shape mismatch");
  Tensor diff = sub(x_recon, x_t);
  Tensor mse = mean(mul(diff, diff));
  if (mse.item() == 0.0) {
    return Tensor::scalar(99.0);  // cap; flagged non-differentiable point
  }
  return mul(Tensor::scalar(-10.0 / kLn10), log(mse));
}

Tensor upper_loss(const Tensor& x_recon, const Tensor& x_t, const Tensor& m,
                  double reg_coeff) {
  Tensor s = similarity(x_recon, x_t);
  if (reg_coeff == 0.0) return s;
  const double scale = reg_coeff / double(m.size());
  return add(s, mul(Tensor::scalar(scale), size_regularizer(m)));
}

MetaStep meta_grad(const HarvimState& state, const Tensor& x_t,
                   const Tensor& noise, const HarvimConfig& config,
                   const FlowModel& prior, const DecoderGenerator* decoder) {
  config.validate();
  if (!state.x_tilde.defined()) throw ConfigError("meta_grad: missing iterate");
  EnableGradGuard tape;
  const std::size_t side = square_side(x_t);
  const double inv_sigma_sq = 1.0 / (config.sigma * config.sigma);
  const bool hvp = config.meta_mode == MetaMode::Hvp;

  // Watermark chain, live on the tape.
  Tensor m = render(state.params, side, decoder);
  SoftMask mask = soft_mask(m, config.alpha, config.beta);
  Tensor keep = sub(Tensor::scalar(1.0), mask.w);
  Tensor y = add(mul(keep, x_t), noise);

  // K unrolled ascent steps from the previous round's solution, which
  // enters as a constant (its dependence on earlier watermarks is
  // truncated, as in the first-round MLE solve).
  Tensor x = state.x_tilde.detach();
  for (int k = 0; k < config.inner_steps; ++k) {
    Tensor x_arg = hvp ? x : x.detach();
    Tensor data_grad =
        mul(mul(keep, sub(y, mul(keep, x_arg))), Tensor::scalar(inv_sigma_sq));
    Tensor step = data_grad;
    if (state.lambda != 0.0) {
      Tensor prior_grad;
      if (hvp) {
        // The first iterate is a constant; give it a leaf so the score
        // value is still produced (its parameter gradient is truly 0).
        Tensor x_live = x_arg.requires_grad() ? x_arg : leaf_like(x_arg, true);
        prior_grad = grad(prior.log_prob(x_live), {x_live},
                          /*create_graph=*/true)[0];
      } else {
        prior_grad = prior.grad_log_prob(x.detach());
      }
      step = add(step, mul(Tensor::scalar(state.lambda), prior_grad));
    }
    x = add(x, mul(Tensor::scalar(config.eta), step));
  }

  Tensor loss = upper_loss(x, x_t, m, config.reg_coeff);

  WatermarkParams params = state.params;
  std::vector<Tensor*> learnable = params.learnable();
  std::vector<Tensor> inputs;
  for (Tensor* p : learnable) inputs.push_back(*p);
  std::vector<Tensor> grads = grad(loss, inputs);

  MetaStep step;
  step.gradient.mode = config.meta_mode;
  step.gradient.d_raw_left = grads[0];
  step.gradient.d_raw_bottom = grads[1];
  step.gradient.d_raw_scale = grads[2];
  if (grads.size() > 3) step.gradient.d_latent = grads[3];
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double v : g.data()) sq += v * v;
  }
  step.gradient.norm = std::sqrt(sq);
  if (!std::isfinite(step.gradient.norm)) {
    throw NumericalError("meta_grad: non-finite gradient");
  }
  step.x_next = x.detach();
  step.similarity_db = similarity(step.x_next, x_t).item();
  step.reg_value = size_regularizer(m).item() / double(m.size());
  step.upper_value = loss.item();
  return step;
}

WatermarkParams grid_init(const Tensor& x_t, const HarvimConfig& config,
                          const FlowModel& prior, SeededRng& rng,
                          std::size_t glyph_index,
                          const DecoderGenerator* decoder,
                          std::vector<double>* scores) {
  if (scores) scores->clear();
  const std::size_t side = square_side(x_t);
  const double mid_area = kMinAreaFrac + 0.5 * (kMaxAreaFrac - kMinAreaFrac);
  // One shared noise draw keeps the nine candidates comparable.
  Tensor noise = normal_tensor(rng, x_t.shape(), config.sigma);

  const double ratios[3] = {0.0, 0.5, 1.0};
  double best_score = 0.0;
  double best_left = 0.0, best_bottom = 0.0;
  bool first = true;
  NoGradGuard no_grad;
  for (double p_left : ratios) {
    for (double p_bottom : ratios) {
      WatermarkParams candidate = WatermarkParams::from_geometry(
          glyph_index, p_left, p_bottom, mid_area, /*requires_grad=*/false);
      if (decoder != nullptr) {
        candidate.latent = decoder->embedding(glyph_index);
      }
      Tensor m = render(candidate, side, decoder);
      SoftMask mask = soft_mask(m, config.alpha, config.beta);
      Tensor y = add(mul(sub(Tensor::scalar(1.0), mask.w), x_t), noise);

      InverseProblem problem;
      problem.y = y;
      problem.coverage = mask.w;
      problem.sigma = config.sigma;
      problem.prior = &prior;
      Tensor solved = mle_solve(problem, config.grid_mle_steps, config.eta,
                                default_mle_init(problem));
      const double score = psnr(solved, x_t);
      if (scores) scores->push_back(score);
      if (first || score < best_score) {  // strict: ties keep the first
        first = false;
        best_score = score;
        best_left = p_left;
        best_bottom = p_bottom;
      }
    }
  }
  WatermarkParams chosen = WatermarkParams::from_geometry(
      glyph_index, best_left, best_bottom, mid_area, /*requires_grad=*/true);
  if (decoder != nullptr) {
    chosen.latent = leaf_like(decoder->embedding(glyph_index), true);
  }
  return chosen;
}

HarvimResult run(const Tensor& x_t, const HarvimConfig& config,
                 const FlowModel& prior, std::size_t glyph_index,
                 const DecoderGenerator* decoder) {
  config.validate();
  const std::size_t side = square_side(x_t);
  SeededRng master(config.master_seed);
  SeededRng grid_rng = master.derive(1);
  SeededRng noise_rng = master.derive(2);

  HarvimState state;
  state.params = grid_init(x_t, config, prior, grid_rng, glyph_index, decoder);

  // Initial solve at lambda_0 = 0 under the starting watermark.
  Tensor observation;
  {
    NoGradGuard no_grad;
    Tensor m0 = render(state.params, side, decoder);
    SoftMask mask0 = soft_mask(m0, config.alpha, config.beta);
    observation = add(mul(sub(Tensor::scalar(1.0), mask0.w), x_t),
                      normal_tensor(noise_rng, x_t.shape(), config.sigma));
    InverseProblem problem;
    problem.y = observation;
    problem.coverage = mask0.w;
    problem.sigma = config.sigma;
    problem.prior = &prior;
    state.x_tilde = mle_solve(problem, config.warmup_steps, config.eta,
                              default_mle_init(problem));
  }

  AdamW optimizer({.lr = config.learning_rate,
                   .weight_decay = config.weight_decay});
  HarvimResult result;

  for (int t = 1; t <= config.rounds; ++t) {
    state.lambda = config.lambda_target * (double(t) / double(config.rounds));
    Tensor noise = normal_tensor(noise_rng, x_t.shape(), config.sigma);
    MetaStep step = meta_grad(state, x_t, noise, config, prior, decoder);

    std::vector<Tensor*> learnable = state.params.learnable();
    const Tensor* grads[4] = {&step.gradient.d_raw_left,
                              &step.gradient.d_raw_bottom,
                              &step.gradient.d_raw_scale,
                              &step.gradient.d_latent};
    for (std::size_t i = 0; i < learnable.size(); ++i) {
      *learnable[i] = optimizer.step(i, *learnable[i], *grads[i]);
    }
    state.x_tilde = step.x_next;
    state.round = t;
    {
      NoGradGuard no_grad;
      observation = add(mul(sub(Tensor::scalar(1.0),
                                soft_mask(render(state.params, side, decoder),
                                          config.alpha, config.beta)
                                    .w),
                            x_t),
                        noise);
    }

    RoundAudit audit;
    audit.round = t;
    audit.lambda = state.lambda;
    audit.similarity_db = step.similarity_db;
    audit.reg_value = step.reg_value;
    audit.upper_loss = step.upper_value;
    audit.meta_grad_norm = step.gradient.norm;
    audit.p_left = state.params.p_left();
    audit.p_bottom = state.params.p_bottom();
    audit.area_frac = state.params.area_frac();
    result.audit.push_back(audit);
  }

  NoGradGuard no_grad;
  result.params = state.params;
  result.watermark = render(state.params, side, decoder).detach();
  result.coverage = soft_mask(result.watermark, config.alpha, config.beta).w;
  result.observation = observation;
  result.reconstruction = state.x_tilde;
  result.display = compose_display(x_t, result.watermark, kDefaultGlyphTone,
                                   config.alpha, config.beta);
  return result;
}

}  // namespace harvim
