#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "harvim/rng.hpp"
#include "harvim/tensor.hpp"

namespace harvim {

/// Side length of every canonical glyph bitmap.
inline constexpr std::size_t kGlyphSize = 16;

/// Bundled grayscale bitmaps for digits 0-9 and uppercase A-Z, embedded
/// in the binary (a 5x7 dot-matrix face doubled and centered on a
/// kGlyphSize square). Values are in [0,1] and every glyph has ink.
class GlyphAtlas {
 public:
  GlyphAtlas();

  /// '0'..'9' then 'A'..'Z'.
  static constexpr std::size_t kCount = 36;

  const Tensor& bitmap(std::size_t index) const;  // [kGlyphSize, kGlyphSize]
  static std::size_t index_of(char glyph);        // throws ConfigError
  static char glyph_of(std::size_t index);

 private:
  std::vector<Tensor> bitmaps_;
};

/// Shared atlas instance (immutable after construction).
const GlyphAtlas& glyph_atlas();

/// Fully-connected conditional decoder mapping (latent code, left and
/// bottom padding ratios) to a glyph bitmap with a final logistic
/// activation. Trained on the atlas with random within-box shifts; an
/// alternative glyph source behind the same render contract as the
/// fixed atlas stamp.
class DecoderGenerator {
 public:
  static constexpr std::size_t kLatentDim = 8;

  static DecoderGenerator make(std::size_t hidden, SeededRng& rng);

  /// z: [kLatentDim]; ratios: rank-0. Output [kGlyphSize, kGlyphSize]
  /// in (0,1), differentiable w.r.t. all three inputs.
  Tensor decode(const Tensor& z, const Tensor& p_left, const Tensor& p_bottom) const;

  /// Frozen per-glyph latent code used both as the training condition
  /// and as the optimization starting point for that glyph.
  const Tensor& embedding(std::size_t glyph_index) const;

  struct TrainStats {
    std::vector<double> loss;  // mean squared error per epoch
  };
  TrainStats train(int epochs, double learning_rate, SeededRng& rng);

  void save(const std::string& path) const;
  static DecoderGenerator load(const std::string& path);

  std::vector<Tensor*> parameters();
  void freeze();

 private:
  std::size_t hidden_ = 0;
  // three hidden layers, tanh activations, logistic output
  Tensor w1_, b1_, w2_, b2_, w3_, b3_, w4_, b4_;
  std::vector<Tensor> embeddings_;
};

}  // namespace harvim
