#pragma once

#include <vector>

#include "harvim/rng.hpp"
#include "harvim/tensor.hpp"

namespace harvim {

/// Bundled synthetic images: each mixes a smooth region (constant or
/// linear ramp) with a detail-rich region (high-frequency noise), the
/// layout varying per image. Deterministic; no downloads. Index 0..19
/// is the canonical evaluation set.
std::vector<Tensor> toy_corpus(std::size_t count, std::size_t side = 32);

/// Disjoint images from the same family, used to train the prior so the
/// evaluation set stays out of the training data.
std::vector<Tensor> toy_training_corpus(std::size_t count, std::size_t side = 32);

/// Left half flat, right half noise; the synthetic case where the
/// hard-to-reconstruct region is unambiguous.
Tensor half_flat_half_textured(std::size_t side, SeededRng& rng);

}  // namespace harvim
