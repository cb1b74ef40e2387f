#include <cmath>

#include "doctest.h"
#include "harvim/errors.hpp"
#include "harvim/gauntlet.hpp"
#include "harvim/inpaint.hpp"
#include "harvim/metrics.hpp"
#include "harvim/toy_corpus.hpp"

using namespace harvim;

TEST_CASE("psnr and ssim reference points") {
  SeededRng rng(1);
  Tensor a = uniform_tensor(rng, {32 * 32}, 0.0, 1.0);
  CHECK(psnr(a, a) == 99.0);
  CHECK(ssim(a, a) == doctest::Approx(1.0));

  Tensor c3 = Tensor::full({64}, 0.3);
  Tensor c4 = Tensor::full({64}, 0.4);
  CHECK(psnr(c3, c4) == doctest::Approx(20.0).epsilon(1e-6));

  CHECK_THROWS_AS((void)psnr(a, Tensor::zeros({4})), ShapeError);

  // v_metric: a remover that returns the observation scores exactly zero
  Tensor y = uniform_tensor(rng, {32 * 32}, 0.0, 1.0);
  CHECK(v_metric(y, y, a, Metric::Psnr) == 0.0);
  CHECK(v_metric(y, y, a, Metric::Ssim) == 0.0);
  CHECK(v_metric(a, y, a, Metric::Psnr) ==
        doctest::Approx(99.0 - psnr(y, a)).epsilon(1e-9));
}

TEST_CASE("heat diffusion inpainting") {
  const std::size_t side = 16;
  SeededRng rng(3);
  Tensor y = uniform_tensor(rng, {side * side}, 0.0, 1.0);

  // nothing masked: identity
  Tensor same = heat_diffusion_inpaint(y, Tensor::zeros({side * side}), 10);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(same.at(i) == y.at(i));

  // single masked pixel with equal neighbors recovers that value
  std::vector<double> img(side * side, 0.7);
  img[5 * side + 5] = 0.0;
  std::vector<double> w(side * side, 0.0);
  w[5 * side + 5] = 1.0;
  Tensor masked_img = Tensor::from_data({side * side}, img);
  Tensor filled = heat_diffusion_inpaint(masked_img,
                                         Tensor::from_data({side * side}, w), 50);
  // equal neighbors: the harmonic fill is exactly the neighbor value
  CHECK(filled.at(5 * side + 5) ==
        doctest::Approx(masked_img.at(4 * side + 5)).epsilon(1e-9));

  // masked disk on a linear ramp: harmonic fill reproduces affine data
  const std::size_t big = 32;
  std::vector<double> ramp(big * big), disk(big * big, 0.0);
  for (std::size_t r = 0; r < big; ++r) {
    for (std::size_t c = 0; c < big; ++c) {
      ramp[r * big + c] = 0.2 + 0.6 * double(c) / double(big - 1);
      const double dr = double(r) - 15.5, dc = double(c) - 15.5;
      if (dr * dr + dc * dc <= 36.0) disk[r * big + c] = 1.0;
    }
  }
  Tensor truth = Tensor::from_data({big * big}, ramp);
  Tensor recon = heat_diffusion_inpaint(truth, Tensor::from_data({big * big}, disk),
                                        4000);
  double max_err = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    max_err = std::max(max_err, std::abs(recon.at(i) - truth.at(i)));
  }
  CHECK(max_err <= 0.02);

  CHECK_THROWS_AS(
      (void)heat_diffusion_inpaint(truth, Tensor::from_data({big * big}, disk), 0),
      ConfigError);
}

TEST_CASE("blind threshold detector") {
  const std::size_t side = 32;
  // dark background, one bright 6x6 blob at the known tone
  std::vector<double> img(side * side, 0.2);
  for (std::size_t r = 10; r < 16; ++r) {
    for (std::size_t c = 8; c < 14; ++c) img[r * side + c] = 0.95;
  }
  BlindThresholdSettings settings;
  settings.tone = 0.95;
  Tensor display = Tensor::from_data({side * side}, img);
  Tensor detected = blind_detect(display, settings);
  CHECK(detected.at(12 * side + 10) == 1.0);
  CHECK(detected.at(0) == 0.0);

  Tensor cleaned = blind_threshold_inpaint(display, settings);
  CHECK(std::abs(cleaned.at(12 * side + 10) - 0.2) < 0.05);

  // a tiny 2x2 blob is below min_component and survives
  std::vector<double> small(side * side, 0.2);
  for (std::size_t r = 4; r < 6; ++r) {
    for (std::size_t c = 4; c < 6; ++c) small[r * side + c] = 0.95;
  }
  Tensor small_display = Tensor::from_data({side * side}, small);
  Tensor untouched = blind_threshold_inpaint(small_display, settings);
  for (std::size_t i = 0; i < untouched.size(); ++i) {
    CHECK(untouched.at(i) == small_display.at(i));
  }

  // a blob covering most of the image is implausible as a watermark
  std::vector<double> huge(side * side, 0.95);
  Tensor huge_display = Tensor::from_data({side * side}, huge);
  Tensor skipped = blind_threshold_inpaint(huge_display, settings);
  for (std::size_t i = 0; i < 8; ++i) CHECK(skipped.at(i) == huge_display.at(i));
}

TEST_CASE("toy corpus properties") {
  auto images = toy_corpus(20);
  REQUIRE(images.size() == 20);
  auto again = toy_corpus(20);
  for (std::size_t i = 0; i < images.size(); ++i) {
    REQUIRE(images[i].size() == 1024);
    for (std::size_t j = 0; j < 1024; ++j) {
      CHECK(images[i].at(j) >= 0.0);
      CHECK(images[i].at(j) <= 1.0);
      CHECK(images[i].at(j) == again[i].at(j));  // bundled set is fixed
    }
  }
  // training images are distinct from the evaluation set
  auto train = toy_training_corpus(20);
  double max_gap = 0.0;
  for (std::size_t j = 0; j < 1024; ++j) {
    max_gap = std::max(max_gap, std::abs(train[0].at(j) - images[0].at(j)));
  }
  CHECK(max_gap > 0.05);

  // each image has both smooth and detailed content: local gradient
  // energy split between low and high halves
  for (const auto& image : images) {
    const std::size_t side = 32;
    std::vector<double> grad_mag;
    for (std::size_t r = 0; r + 1 < side; ++r) {
      for (std::size_t c = 0; c + 1 < side; ++c) {
        const double gx = image.at(r * side + c + 1) - image.at(r * side + c);
        const double gy = image.at((r + 1) * side + c) - image.at(r * side + c);
        grad_mag.push_back(std::abs(gx) + std::abs(gy));
      }
    }
    std::size_t flat = 0, busy = 0;
    for (double g : grad_mag) {
      if (g < 0.02) ++flat;
      if (g > 0.1) ++busy;
    }
    CHECK(flat > grad_mag.size() / 8);
    CHECK(busy > grad_mag.size() / 10);
  }
}

TEST_CASE("metrics report: csv round trip and aggregates") {
  MetricsReport report;
  report.rows = {
      {"img0", "random", "flow-r", 30.0, 0.9, 12.0, 0.05},
      {"img0", "harvim", "flow-r", 28.0, 0.8, 7.0, 0.02},
      {"img1", "random", "flow-r", 32.0, 0.95, 10.0, 0.04},
      {"img1", "harvim", "flow-r", 29.0, 0.85, 6.0, 0.01},
      {"img0", "random", "observation", 12.0, 0.4, 0.0, 0.0},
      {"img0", "harvim", "observation", 11.0, 0.35, 0.0, 0.0},
  };

  const std::string csv = report.to_csv();
  MetricsReport parsed = MetricsReport::from_csv(csv);
  REQUIRE(parsed.rows.size() == report.rows.size());
  CHECK(parsed.to_csv() == csv);

  // independent aggregation check
  CellStats stats = parsed.cell("flow-r", "random", Metric::Psnr, true);
  CHECK(stats.count == 2);
  CHECK(stats.mean == doctest::Approx(11.0));
  const double sample_std = std::sqrt(((12.0 - 11) * (12.0 - 11) +
                                       (10.0 - 11) * (10.0 - 11)) / 1.0);
  CHECK(stats.std_error == doctest::Approx(sample_std / std::sqrt(2.0)));
  CHECK(parsed.improvement("flow-r", Metric::Psnr) ==
        doctest::Approx((12.0 - 7.0 + 10.0 - 6.0) / 2.0));

  CHECK(parsed.to_table().find("flow-r") != std::string::npos);
  CHECK_THROWS_AS((void)MetricsReport::from_csv("bogus\n"), IoError);
}

TEST_CASE("sign test reference values") {
  std::vector<double> random_v, harvim_v;
  for (int i = 0; i < 20; ++i) {
    random_v.push_back(i < 15 ? 1.0 : 0.0);
    harvim_v.push_back(i < 15 ? 0.0 : 1.0);
  }
  // P(X >= 15), X ~ Bin(20, 1/2) = 21700 / 2^20
  CHECK(paired_sign_test_p(random_v, harvim_v) ==
        doctest::Approx(21700.0 / 1048576.0).epsilon(1e-9));

  std::vector<double> ties(5, 1.0);
  CHECK(paired_sign_test_p(ties, ties) == 1.0);
}

TEST_CASE("gauntlet smoke: paired rows, determinism, empty removers") {
  const std::size_t side = 16;
  auto images = toy_corpus(2, side);
  FlowModel prior = FlowModel::identity(side * side);

  GauntletConfig config;
  config.harvim.rounds = 2;
  config.harvim.warmup_steps = 10;
  config.harvim.grid_mle_steps = 5;
  config.harvim.sigma = 0.05;
  config.glyph_index = GlyphAtlas::index_of('A');
  config.seed = 7;
  config.threads = 2;

  RemoverSpec heat;
  heat.kind = RemoverKind::HeatDiffusionInpaint;
  heat.heat_iterations = 200;
  RemoverSpec blind;
  blind.kind = RemoverKind::BlindThresholdInpaint;
  blind.blind.inpaint_iterations = 200;
  config.removers = {heat, blind};

  MetricsReport report = run_gauntlet(images, prior, config);

  // paired invariant: every (image, remover) cell exists for both arms
  for (const auto& row : report.rows) {
    bool partner = false;
    for (const auto& other : report.rows) {
      if (other.image_id == row.image_id && other.remover == row.remover &&
          other.arm != row.arm) {
        partner = true;
      }
    }
    CHECK(partner);
  }
  CHECK(report.rows.size() == 2 * 2 * 3);  // 2 images x 2 arms x (obs + 2 removers)

  MetricsReport replay = run_gauntlet(images, prior, config);
  CHECK(replay.to_csv() == report.to_csv());

  GauntletConfig no_removers = config;
  no_removers.removers.clear();
  MetricsReport obs_only = run_gauntlet({images[0]}, prior, no_removers);
  CHECK(obs_only.rows.size() == 2);
  for (const auto& row : obs_only.rows) {
    CHECK(row.remover == "observation");
    CHECK(row.v_psnr == 0.0);
  }
}
