#include "harvim/watermark.hpp"

#include <algorithm>
#include <cmath>

#include "harvim/errors.hpp"

namespace harvim {

namespace {

double logit(double p) {
  p = std::clamp(p, 1e-6, 1.0 - 1e-6);
  return std::log(p / (1.0 - p));
}

double squash(double raw) { return 1.0 / (1.0 + std::exp(-raw)); }

/// Bilinear sample of the glyph bitmap placed at continuous offset
/// (col0, row0) and scale factor `scale` (glyph pixels -> image pixels).
/// m[i,j] = bilerp(glyph, (i-row0)/scale, (j-col0)/scale), with the
/// glyph zero-padded outside its box. Differentiable in all inputs;
/// the derivative is piecewise in the offsets (bilinear knots).
Tensor glyph_warp(const Tensor& glyph, const Tensor& col0, const Tensor& row0,
                  const Tensor& scale, std::size_t image_side) {
  const std::size_t g = glyph.shape()[0];
  const std::size_t s_len = image_side;
  const double c0 = col0.item();
  const double r0 = row0.item();
  const double sc = scale.item();
  if (sc <= 0.0) throw DomainError("glyph_warp: scale must be positive");

  const auto gdata = glyph.data();
  auto sample = [&](long a, long b) -> double {
    if (a < 0 || b < 0 || a >= long(g) || b >= long(g)) return 0.0;
    return gdata[std::size_t(a) * g + std::size_t(b)];
  };

  std::vector<double> out(s_len * s_len, 0.0);
  for (std::size_t i = 0; i < s_len; ++i) {
    const double u = (double(i) - r0) / sc;
    if (u < -1.0 || u > double(g)) continue;
    const long u0 = long(std::floor(u));
    const double fu = u - double(u0);
    for (std::size_t j = 0; j < s_len; ++j) {
      const double v = (double(j) - c0) / sc;
      if (v < -1.0 || v > double(g)) continue;
      const long v0 = long(std::floor(v));
      const double fv = v - double(v0);
      out[i * s_len + j] = (1 - fu) * (1 - fv) * sample(u0, v0) +
                           (1 - fu) * fv * sample(u0, v0 + 1) +
                           fu * (1 - fv) * sample(u0 + 1, v0) +
                           fu * fv * sample(u0 + 1, v0 + 1);
    }
  }

  auto vjp = [g, s_len, c0, r0, sc, glyph](const Tensor&, const Tensor& adj) {
    const auto gdata = glyph.data();
    auto sample = [&](long a, long b) -> double {
      if (a < 0 || b < 0 || a >= long(g) || b >= long(g)) return 0.0;
      return gdata[std::size_t(a) * g + std::size_t(b)];
    };
    const auto a = adj.data();
    std::vector<double> d_glyph(g * g, 0.0);
    double d_c0 = 0.0, d_r0 = 0.0, d_sc = 0.0;
    for (std::size_t i = 0; i < s_len; ++i) {
      const double u = (double(i) - r0) / sc;
      if (u < -1.0 || u > double(g)) continue;
      const long u0 = long(std::floor(u));
      const double fu = u - double(u0);
      for (std::size_t j = 0; j < s_len; ++j) {
        const double v = (double(j) - c0) / sc;
        if (v < -1.0 || v > double(g)) continue;
        const long v0 = long(std::floor(v));
        const double fv = v - double(v0);
        const double w = a[i * s_len + j];
        if (w == 0.0) continue;

        const double g00 = sample(u0, v0), g01 = sample(u0, v0 + 1);
        const double g10 = sample(u0 + 1, v0), g11 = sample(u0 + 1, v0 + 1);
        const double dval_du = (1 - fv) * (g10 - g00) + fv * (g11 - g01);
        const double dval_dv = (1 - fu) * (g01 - g00) + fu * (g11 - g10);
        d_r0 += w * dval_du * (-1.0 / sc);
        d_c0 += w * dval_dv * (-1.0 / sc);
        d_sc += w * (dval_du * (-u / sc) + dval_dv * (-v / sc));

        auto splat = [&](long aa, long bb, double weight) {
          if (aa < 0 || bb < 0 || aa >= long(g) || bb >= long(g)) return;
          d_glyph[std::size_t(aa) * g + std::size_t(bb)] += w * weight;
        };
        splat(u0, v0, (1 - fu) * (1 - fv));
        splat(u0, v0 + 1, (1 - fu) * fv);
        splat(u0 + 1, v0, fu * (1 - fv));
        splat(u0 + 1, v0 + 1, fu * fv);
      }
    }
    return std::vector<Tensor>{Tensor::from_data({g, g}, std::move(d_glyph)),
                               Tensor::scalar(d_c0), Tensor::scalar(d_r0),
                               Tensor::scalar(d_sc)};
  };

  return custom_op("glyph_warp", {s_len, s_len}, std::move(out),
                   {glyph, col0, row0, scale}, std::move(vjp));
}

}  // namespace

// ---------------------------------------------------------------------------
// WatermarkParams

WatermarkParams WatermarkParams::make(std::size_t glyph_index, double raw_left,
                                      double raw_bottom, double raw_scale,
                                      bool requires_grad) {
  WatermarkParams p;
  p.glyph_index = glyph_index;
  p.raw_left = Tensor::scalar(raw_left, requires_grad);
  p.raw_bottom = Tensor::scalar(raw_bottom, requires_grad);
  p.raw_scale = Tensor::scalar(raw_scale, requires_grad);
  return p;
}

WatermarkParams WatermarkParams::from_geometry(std::size_t glyph_index,
                                               double p_left, double p_bottom,
                                               double area_frac,
                                               bool requires_grad) {
  const double band = (area_frac - kMinAreaFrac) / (kMaxAreaFrac - kMinAreaFrac);
  return make(glyph_index, logit(p_left), logit(p_bottom), logit(band),
              requires_grad);
}

double WatermarkParams::p_left() const { return squash(raw_left.item()); }
double WatermarkParams::p_bottom() const { return squash(raw_bottom.item()); }
double WatermarkParams::area_frac() const {
  return kMinAreaFrac + (kMaxAreaFrac - kMinAreaFrac) * squash(raw_scale.item());
}

std::vector<Tensor*> WatermarkParams::learnable() {
  std::vector<Tensor*> out{&raw_left, &raw_bottom, &raw_scale};
  if (latent.defined()) out.push_back(&latent);
  return out;
}

// ---------------------------------------------------------------------------
// Rendering and composition

Tensor render(const WatermarkParams& params, std::size_t image_side,
              const DecoderGenerator* decoder) {
  if (image_side < 4) {
    throw ShapeError("render: frame side " + std::to_string(image_side) +
                     " cannot hold a glyph");
  }
  const double side = double(image_side);
  Tensor p_left = sigmoid(params.raw_left);
  Tensor p_bottom = sigmoid(params.raw_bottom);
  Tensor area = add(Tensor::scalar(kMinAreaFrac),
                    mul(Tensor::scalar(kMaxAreaFrac - kMinAreaFrac),
                        sigmoid(params.raw_scale)));
  Tensor rendered_side = mul(Tensor::scalar(side), pow(area, 0.5));
  Tensor scale = divide(rendered_side, Tensor::scalar(double(kGlyphSize)));
  Tensor margin = sub(Tensor::scalar(side), rendered_side);
  Tensor col0 = mul(p_left, margin);
  Tensor row0 = mul(sub(Tensor::scalar(1.0), p_bottom), margin);

  Tensor glyph;
  if (params.latent.defined()) {
    if (decoder == nullptr) {
      throw ConfigError("render: params carry a latent code but no decoder given");
    }
    glyph = decoder->decode(params.latent, p_left, p_bottom);
  } else {
    glyph = glyph_atlas().bitmap(params.glyph_index);
  }
  Tensor warped = glyph_warp(glyph, col0, row0, scale, image_side);
  return reshape(warped, {image_side * image_side});
}

SoftMask soft_mask(const Tensor& m, double alpha, double beta) {
  if (beta <= 0.0) throw DomainError("soft_mask: beta must be positive");
  SoftMask mask;
  mask.alpha = alpha;
  mask.beta = beta;
  mask.w = sigmoid(mul(sub(m, Tensor::scalar(alpha)), Tensor::scalar(1.0 / beta)));
  return mask;
}

Tensor compose_observation(const Tensor& x_t, const Tensor& m, double alpha,
                           double beta, double sigma, SeededRng& rng) {
  if (sigma < 0.0) throw DomainError("compose_observation: sigma must be >= 0");
  if (x_t.shape() != m.shape()) {
    throw ShapeError("compose_observation: image/watermark shape mismatch");
  }
  SoftMask mask = soft_mask(m, alpha, beta);
  Tensor keep = sub(Tensor::scalar(1.0), mask.w);
  Tensor noise = normal_tensor(rng, x_t.shape(), sigma);
  return add(mul(keep, x_t), noise);
}

Tensor compose_display(const Tensor& x_t, const Tensor& m, double glyph_tone,
                       double alpha, double beta) {
  if (x_t.shape() != m.shape()) {
    throw ShapeError("compose_display: image/watermark shape mismatch");
  }
  SoftMask mask = soft_mask(m, alpha, beta);
  Tensor keep = sub(Tensor::scalar(1.0), mask.w);
  return add(mul(keep, x_t), mul(mask.w, Tensor::scalar(glyph_tone)));
}

Tensor size_regularizer(const Tensor& m) { return sum(m); }

}  // namespace harvim
