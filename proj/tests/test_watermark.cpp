#include "harvim/watermark.hpp"

#include <cmath>

#include "doctest.h"
#include "harvim/errors.hpp"

using namespace harvim;

namespace {

constexpr std::size_t kSide = 32;
constexpr double kAlpha = 0.15;
constexpr double kBeta = 0.01;

double centroid_col(const Tensor& m, std::size_t side) {
  double mass = 0.0, acc = 0.0;
  for (std::size_t i = 0; i < side; ++i) {
    for (std::size_t j = 0; j < side; ++j) {
      const double v = m.at(i * side + j);
      mass += v;
      acc += v * double(j);
    }
  }
  return acc / mass;
}

// Leftmost / bottommost image columns and rows carrying ink.
void ink_extent(const Tensor& m, std::size_t side, std::size_t& col_lo,
                std::size_t& col_hi, std::size_t& row_hi) {
  col_lo = side;
  col_hi = 0;
  row_hi = 0;
  for (std::size_t i = 0; i < side; ++i) {
    for (std::size_t j = 0; j < side; ++j) {
      if (m.at(i * side + j) > 0.5) {
        col_lo = std::min(col_lo, j);
        col_hi = std::max(col_hi, j);
        row_hi = std::max(row_hi, i);
      }
    }
  }
}

}  // namespace

TEST_CASE("atlas invariants") {
  const auto& atlas = glyph_atlas();
  for (std::size_t i = 0; i < GlyphAtlas::kCount; ++i) {
    const auto& bmp = atlas.bitmap(i);
    bool ink = false;
    for (double v : bmp.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      ink = ink || v > 0.5;
    }
    CHECK(ink);
  }
  CHECK(GlyphAtlas::index_of('7') == 7);
  CHECK(GlyphAtlas::index_of('C') == 12);
  CHECK(GlyphAtlas::glyph_of(12) == 'C');
  CHECK_THROWS_AS((void)GlyphAtlas::index_of('c'), ConfigError);
}

TEST_CASE("render placement at extreme padding ratios") {
  auto at_edges = WatermarkParams::from_geometry(GlyphAtlas::index_of('H'), 0.0,
                                                 0.0, 0.25, false);
  Tensor m = render(at_edges, kSide);
  for (double v : m.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  std::size_t col_lo, col_hi, row_hi;
  ink_extent(m, kSide, col_lo, col_hi, row_hi);
  CHECK(col_lo == 0);          // touches the left edge
  CHECK(row_hi == kSide - 1);  // touches the bottom edge

  auto at_right = WatermarkParams::from_geometry(GlyphAtlas::index_of('H'), 1.0,
                                                 0.0, 0.25, false);
  Tensor mr = render(at_right, kSide);
  ink_extent(mr, kSide, col_lo, col_hi, row_hi);
  CHECK(col_hi == kSide - 1);  // touches the right edge

  CHECK_THROWS_AS((void)render(at_edges, 2), ShapeError);
}

TEST_CASE("integer-aligned render copies the bitmap") {
  // area 0.25 on a 32 frame gives scale exactly 1; padding 0.5 gives
  // integer offsets, so bilinear weights degenerate to a copy.
  const std::size_t gi = GlyphAtlas::index_of('3');
  auto params = WatermarkParams::from_geometry(gi, 0.5, 0.5, 0.25, false);
  Tensor m = render(params, kSide);
  const auto& bmp = glyph_atlas().bitmap(gi);
  const std::size_t off = (kSide - kGlyphSize) / 2;
  for (std::size_t r = 0; r < kGlyphSize; ++r) {
    for (std::size_t c = 0; c < kGlyphSize; ++c) {
      CHECK(m.at((off + r) * kSide + off + c) ==
            doctest::Approx(bmp.at(r * kGlyphSize + c)).epsilon(1e-5));
    }
  }
}

TEST_CASE("soft mask values match the logistic formula") {
  Tensor m = Tensor::from_data({3}, {kAlpha, 0.0, 1.0});
  SoftMask mask = soft_mask(m, kAlpha, kBeta);
  CHECK(mask.w.at(0) == doctest::Approx(0.5));
  CHECK(mask.w.at(1) == doctest::Approx(3.06e-7).epsilon(1e-2));
  CHECK(mask.w.at(2) == doctest::Approx(1.0));  // sigmoid(85), 1 in 32-bit
  for (double v : mask.w.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0000001);
  }
  CHECK_THROWS_AS((void)soft_mask(m, kAlpha, 0.0), DomainError);
  CHECK_THROWS_AS((void)soft_mask(m, kAlpha, -1.0), DomainError);
}

TEST_CASE("mask is monotone in the watermark") {
  std::vector<double> grid;
  for (int i = 0; i <= 200; ++i) grid.push_back(i / 200.0);
  SoftMask mask = soft_mask(Tensor::from_data({grid.size()}, grid), kAlpha, kBeta);
  for (std::size_t i = 1; i < grid.size(); ++i) {
    CHECK(mask.w.at(i) >= mask.w.at(i - 1));
  }
}

TEST_CASE("compose_observation") {
  SeededRng rng(3);
  Tensor x = uniform_tensor(rng, {kSide * kSide}, 0.1, 0.9);

  SeededRng noise_a(7);
  Tensor y = compose_observation(x, Tensor::zeros(x.shape()), kAlpha, kBeta, 0.0,
                                 noise_a);
  double max_dev = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    max_dev = std::max(max_dev, std::abs(y.at(i) - x.at(i)));
  }
  CHECK(max_dev <= 3.1e-7);  // sigmoid(-alpha/beta) leakage only

  SeededRng noise_b(7);
  Tensor y_full = compose_observation(x, Tensor::ones(x.shape()), kAlpha, kBeta,
                                      0.0, noise_b);
  for (std::size_t i = 0; i < 16; ++i) CHECK(std::abs(y_full.at(i)) < 1e-9);

  // noise std within 10% of sigma over n = 1024
  SeededRng noise_c(11);
  Tensor y_noisy = compose_observation(x, Tensor::zeros(x.shape()), kAlpha, kBeta,
                                       0.05, noise_c);
  double acc = 0.0, acc2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = y_noisy.at(i) - x.at(i);
    acc += d;
    acc2 += d * d;
  }
  const double n = double(x.size());
  const double std_dev = std::sqrt(acc2 / n - (acc / n) * (acc / n));
  CHECK(std_dev > 0.045);
  CHECK(std_dev < 0.055);

  // same seed, sigma = 0: bit-deterministic
  SeededRng s1(5), s2(5);
  Tensor a = compose_observation(x, Tensor::zeros(x.shape()), kAlpha, kBeta, 0.0, s1);
  Tensor b = compose_observation(x, Tensor::zeros(x.shape()), kAlpha, kBeta, 0.0, s2);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.at(i) == b.at(i));

  CHECK_THROWS_AS((void)compose_observation(x, Tensor::zeros({4}), kAlpha, kBeta,
                                            0.0, s1),
                  ShapeError);
}

TEST_CASE("compose_display") {
  SeededRng rng(9);
  Tensor x = uniform_tensor(rng, {kSide * kSide}, 0.0, 0.2);  // dark image
  Tensor m0 = Tensor::zeros(x.shape());
  Tensor d0 = compose_display(x, m0, 1.0, kAlpha, kBeta);
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(d0.at(i) == doctest::Approx(x.at(i)).epsilon(1e-5));
  }

  auto params = WatermarkParams::from_geometry(GlyphAtlas::index_of('8'), 0.5,
                                               0.5, 0.2, false);
  Tensor m = render(params, kSide);
  Tensor d = compose_display(x, m, 1.0, kAlpha, kBeta);
  double masked_acc = 0.0;
  int masked_count = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m.at(i) > 0.5) {
      masked_acc += d.at(i);
      ++masked_count;
      if (m.at(i) > 0.99) CHECK(d.at(i) == doctest::Approx(1.0).epsilon(1e-4));
    }
  }
  REQUIRE(masked_count > 0);
  CHECK(masked_acc / masked_count >= 0.9);  // visibly bright glyph
}

TEST_CASE("size regularizer") {
  CHECK(size_regularizer(Tensor::zeros({16})).item() == 0.0);
  Tensor single = Tensor::from_data({4}, {0.0, 0.5, 0.0, 0.0});
  CHECK(size_regularizer(single).item() == doctest::Approx(0.5));

  const std::size_t gi = GlyphAtlas::index_of('0');
  Tensor small = render(WatermarkParams::from_geometry(gi, 0.5, 0.5, 0.08, false), kSide);
  Tensor big = render(WatermarkParams::from_geometry(gi, 0.5, 0.5, 0.16, false), kSide);
  const double ratio = size_regularizer(big).item() / size_regularizer(small).item();
  CHECK(ratio == doctest::Approx(2.0).epsilon(0.15));
}

TEST_CASE("location equivariance: centroid moves with raw_left") {
  double prev = -1.0;
  for (double raw : {-1.5, -0.75, 0.0, 0.75, 1.5}) {
    auto params = WatermarkParams::make(GlyphAtlas::index_of('5'), raw, 0.0,
                                        0.0, false);
    Tensor m = render(params, kSide);
    const double c = centroid_col(m, kSide);
    CHECK(c > prev);
    prev = c;
  }
}

TEST_CASE("render gradients match finite differences") {
  PrecisionGuard f64(Precision::f64);
  SeededRng rng(13);
  int accepted = 0;
  while (accepted < 6) {
    const double rl = rng.uniform(-1.5, 1.5);
    const double rb = rng.uniform(-1.5, 1.5);
    const double rs = rng.uniform(-1.0, 1.0);

    // reject samples whose warp coordinates sit on bilinear knots
    const double side = double(kSide);
    const double area =
        kMinAreaFrac + (kMaxAreaFrac - kMinAreaFrac) / (1.0 + std::exp(-rs));
    const double gp = side * std::sqrt(area);
    const double sc = gp / double(kGlyphSize);
    const double c0 = (side - gp) / (1.0 + std::exp(-rl));
    const double r0 = (side - gp) * (1.0 - 1.0 / (1.0 + std::exp(-rb)));
    bool near_knot = false;
    for (std::size_t i = 0; i < kSide && !near_knot; ++i) {
      for (double coord : {(double(i) - r0) / sc, (double(i) - c0) / sc}) {
        const double fract = std::abs(coord - std::round(coord));
        if (coord > -1.5 && coord < kGlyphSize + 0.5 && fract < 1e-3) {
          near_knot = true;
        }
      }
    }
    if (near_knot) continue;
    ++accepted;

    auto params = WatermarkParams::make(GlyphAtlas::index_of('K'), rl, rb, rs, true);
    SeededRng probe_rng(accepted);
    Tensor probe = uniform_tensor(probe_rng, {kSide * kSide}, -1.0, 1.0);
    Tensor loss = sum(mul(render(params, kSide), probe));
    auto grads = grad(loss, {params.raw_left, params.raw_bottom, params.raw_scale});

    Tensor packed = Tensor::from_data({3}, {rl, rb, rs});
    Tensor fd = finite_diff_grad(
        [&](const Tensor& p) {
          auto trial = WatermarkParams::make(params.glyph_index, p.at(0), p.at(1),
                                             p.at(2), false);
          return sum(mul(render(trial, kSide), probe)).item();
        },
        packed, 1e-5);
    for (int k = 0; k < 3; ++k) {
      const double got = grads[k].item();
      const double want = fd.at(k);
      const double scale_ref = std::max({std::abs(want), std::abs(got), 1e-6});
      CHECK(std::abs(got - want) / scale_ref < 1e-3);
    }
  }
}

TEST_CASE("decoder path renders and carries gradients") {
  SeededRng rng(17);
  DecoderGenerator decoder = DecoderGenerator::make(48, rng);
  SeededRng train_rng(18);
  auto stats = decoder.train(30, 3e-3, train_rng);
  REQUIRE(stats.loss.size() == 30);
  CHECK(stats.loss.back() < stats.loss.front());

  const std::size_t gi = GlyphAtlas::index_of('A');
  auto params = WatermarkParams::from_geometry(gi, 0.4, 0.6, 0.2, true);
  params.latent = Tensor::from_data(
      {DecoderGenerator::kLatentDim},
      {decoder.embedding(gi).data().begin(), decoder.embedding(gi).data().end()},
      true);

  Tensor m = render(params, kSide, &decoder);
  for (double v : m.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  auto grads = grad(sum(m), {params.latent});
  double norm = 0.0;
  for (double v : grads[0].data()) norm += v * v;
  CHECK(norm > 0.0);  // gradient reaches the latent code

  CHECK_THROWS_AS((void)render(params, kSide, nullptr), ConfigError);

  const std::string path = "decoder_test.hvmf";
  decoder.save(path);
  DecoderGenerator loaded = DecoderGenerator::load(path);
  Tensor out_a = decoder.decode(decoder.embedding(3), Tensor::scalar(0.5),
                                Tensor::scalar(0.5));
  Tensor out_b = loaded.decode(loaded.embedding(3), Tensor::scalar(0.5),
                               Tensor::scalar(0.5));
  for (std::size_t i = 0; i < out_a.size(); ++i) {
    CHECK(out_b.at(i) == doctest::Approx(out_a.at(i)).epsilon(1e-5));
  }
  std::remove(path.c_str());
}
