#pragma once

#include "harvim/tensor.hpp"

namespace harvim {

enum class Metric { Psnr, Ssim };

/// PSNR in dB for images in [0,1] (MAX = 1): 10 log10(1 / MSE),
/// capped at 99 (identical inputs hit the cap).
double psnr(const Tensor& a, const Tensor& b);

/// SSIM with an 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2,
/// C2 = 0.03^2, averaged over window positions fully inside the image.
/// Inputs are flattened square images; the window shrinks to fit if the
/// image side is below 11.
double ssim(const Tensor& a, const Tensor& b);

/// Reconstruction-minus-observation improvement:
/// metric(x_hat, x_t) - metric(y, x_t). Zero when the remover returns
/// the observation untouched.
double v_metric(const Tensor& x_hat, const Tensor& y, const Tensor& x_t,
                Metric which);

}  // namespace harvim
