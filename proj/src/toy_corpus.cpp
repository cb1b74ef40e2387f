#include "harvim/toy_corpus.hpp"

#include <algorithm>
#include <cmath>

namespace harvim {

namespace {

constexpr std::uint64_t kCorpusSeed = 0x70F0C0DE;

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

/// One image: a smooth base with a textured region whose shape cycles
/// through vertical/horizontal halves, diagonal halves, disks, and
/// corner quadrants.
Tensor make_image(std::size_t side, std::size_t kind, SeededRng& rng) {
  const double base = rng.uniform(0.3, 0.7);
  const bool ramp = rng.uniform() < 0.5;
  const double ramp_dir = rng.uniform() < 0.5 ? 1.0 : -1.0;
  const double amplitude = rng.uniform(0.25, 0.4);
  const bool flip = rng.uniform() < 0.5;

  const double cx = rng.uniform(0.3, 0.7) * double(side);
  const double cy = rng.uniform(0.3, 0.7) * double(side);
  const double radius = rng.uniform(0.3, 0.45) * double(side);

  std::vector<double> img(side * side);
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) {
      double smooth = base;
      if (ramp) {
        smooth = 0.3 + 0.4 * (ramp_dir > 0 ? double(c) : double(r)) / double(side - 1);
      }
      bool textured = false;
      switch (kind % 5) {
        case 0: textured = (c >= side / 2) != flip; break;
        case 1: textured = (r >= side / 2) != flip; break;
        case 2: textured = (r + c >= side) != flip; break;
        case 3: {
          const double dx = double(c) - cx, dy = double(r) - cy;
          textured = (dx * dx + dy * dy <= radius * radius) != flip;
          break;
        }
        default:
          textured = ((r >= side / 2) && (c >= side / 2)) != flip;
          break;
      }
      double v = smooth;
      if (textured) v = smooth + rng.uniform(-amplitude, amplitude);
      img[r * side + c] = clamp01(v);
    }
  }
  return Tensor::from_data({side * side}, std::move(img));
}

std::vector<Tensor> build(std::size_t count, std::size_t side,
                          std::uint64_t stream_offset) {
  SeededRng master(kCorpusSeed);
  std::vector<Tensor> images;
  images.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SeededRng rng = master.derive(stream_offset + i);
    images.push_back(make_image(side, i, rng));
  }
  return images;
}

}  // namespace

std::vector<Tensor> toy_corpus(std::size_t count, std::size_t side) {
  return build(count, side, 0);
}

std::vector<Tensor> toy_training_corpus(std::size_t count, std::size_t side) {
  return build(count, side, 1000);
}

Tensor half_flat_half_textured(std::size_t side, SeededRng& rng) {
  std::vector<double> img(side * side, 0.5);
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = side / 2; c < side; ++c) {
      img[r * side + c] = rng.uniform(0.0, 1.0);
    }
  }
  return Tensor::from_data({side * side}, std::move(img));
}

}  // namespace harvim
