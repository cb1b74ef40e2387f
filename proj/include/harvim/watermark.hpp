#pragma once

#include <optional>

#include "harvim/glyphs.hpp"
#include "harvim/rng.hpp"
#include "harvim/tensor.hpp"

namespace harvim {

/// The rendered glyph may occupy between 4% and 40% of the image area;
/// the scale parameter is squashed into this band, which also keeps the
/// glyph inside the frame for every parameter value.
inline constexpr double kMinAreaFrac = 0.04;
inline constexpr double kMaxAreaFrac = 0.40;

/// Learnable watermark description. raw_left / raw_bottom map through
/// the logistic function to padding ratios in [0,1] (0 = glyph at the
/// left / bottom edge, 1 = right / top); raw_scale maps to the covered
/// area fraction. When `latent` is defined the glyph bitmap comes from
/// a DecoderGenerator conditioned on (latent, ratios) instead of the
/// fixed atlas stamp.
struct WatermarkParams {
  std::size_t glyph_index = 0;
  Tensor raw_left;
  Tensor raw_bottom;
  Tensor raw_scale;
  Tensor latent;  // undefined unless the decoder path is enabled

  static WatermarkParams make(std::size_t glyph_index, double raw_left,
                              double raw_bottom, double raw_scale,
                              bool requires_grad = true);
  /// Raw values chosen so the squashed ratios hit the given targets
  /// (ratios clamped to [1e-6, 1-1e-6] to stay in logit range).
  static WatermarkParams from_geometry(std::size_t glyph_index, double p_left,
                                       double p_bottom, double area_frac,
                                       bool requires_grad = true);

  double p_left() const;
  double p_bottom() const;
  double area_frac() const;

  std::vector<Tensor*> learnable();
};

/// Eq-style coverage field W with entries strictly in (0,1), an
/// elementwise monotone function of the watermark image.
struct SoftMask {
  Tensor w;  // same shape as m
  double alpha = 0.15;
  double beta = 0.01;
};

/// Places the glyph bitmap by a differentiable bilinear warp at the
/// continuous offset implied by the padding ratios and scale. Output is
/// the flattened watermark image m in [0,1], zero away from the glyph,
/// differentiable w.r.t. raw_left, raw_bottom, raw_scale (and the
/// latent code when the decoder path is active).
Tensor render(const WatermarkParams& params, std::size_t image_side,
              const DecoderGenerator* decoder = nullptr);

/// Wi = sigmoid((mi - alpha) / beta). beta must be positive.
SoftMask soft_mask(const Tensor& m, double alpha, double beta);

/// Inverse-problem observation y = (1 - W(m)) * x_T + e with
/// e ~ N(0, sigma^2 I) drawn from rng. Watermarked pixels are zeroed
/// (treated as missing for inpainting); differentiable w.r.t. m with
/// the noise held constant.
Tensor compose_observation(const Tensor& x_t, const Tensor& m, double alpha,
                           double beta, double sigma, SeededRng& rng);

/// Human-visible composite (1 - W) * x_T + W * glyph_tone.
Tensor compose_display(const Tensor& x_t, const Tensor& m, double glyph_tone,
                       double alpha, double beta);

/// R(m) = ||m||_1; equals sum(m) since render output is nonnegative.
Tensor size_regularizer(const Tensor& m);

}  // namespace harvim
