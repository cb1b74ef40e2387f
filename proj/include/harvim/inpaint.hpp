#pragma once

#include "harvim/tensor.hpp"

namespace harvim {

/// Classical non-learned baseline: pixels with coverage >= 0.5 are
/// treated as missing and filled by iterated neighbor averaging
/// (Jacobi sweeps of the discrete Laplace equation), which converges to
/// the harmonic interpolation of the observed boundary. Observed
/// pixels pass through untouched.
Tensor heat_diffusion_inpaint(const Tensor& y, const Tensor& coverage,
                              int iterations);

struct BlindThresholdSettings {
  double tone = 1.0;            // nominal glyph tone the remover knows
  double tolerance = 0.05;      // candidate band around the tone
  int min_component = 8;        // small matches are treated as texture
  double max_area_fraction = 0.45;  // larger blobs cannot be a watermark
  int inpaint_iterations = 4000;
};

/// Stand-in for blind locate-and-remove models. Receives no mask:
/// pixels within +-tolerance of the known tone, grouped into 4-connected
/// components larger than min_component (and below the plausibility
/// bound), are declared watermark and heat-diffusion inpainted. When
/// nothing plausible is found the input comes back unchanged.
Tensor blind_threshold_inpaint(const Tensor& display,
                               const BlindThresholdSettings& settings);

/// The detection step alone (0/1 per pixel); exposed for tests.
Tensor blind_detect(const Tensor& display, const BlindThresholdSettings& settings);

}  // namespace harvim
