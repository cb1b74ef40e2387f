#pragma once

#include <string>
#include <vector>

#include "harvim/rng.hpp"
#include "harvim/tensor.hpp"

namespace harvim {

/// Two-hidden-layer fully-connected network with tanh activations.
/// Inputs and outputs are row batches [b, in] -> [b, out].
struct Mlp {
  Tensor w1, b1, w2, b2, w3, b3;

  static Mlp make(std::size_t in, std::size_t hidden, std::size_t out,
                  SeededRng& rng);
  Tensor forward(const Tensor& x) const;
  std::vector<Tensor*> params();
  std::vector<const Tensor*> params() const;
};

/// One affine coupling step. Coordinates under the binary mask pass
/// through unchanged and condition an elementwise affine transform of
/// the rest. The scale output is squashed by tanh and multiplied by
/// scale_clamp before exponentiation, so exp() can never overflow.
struct CouplingLayer {
  Tensor mask;  // [n], entries 0/1, both parts non-empty
  Mlp scale_net;
  Mlp translate_net;
  double scale_clamp = 2.0;

  /// Data -> latent for a row batch; adds this layer's per-row
  /// log|det J| into log_det ([b,1]) when log_det is non-null.
  Tensor forward(const Tensor& x, Tensor* log_det) const;
  /// Latent -> data; exact inverse of forward.
  Tensor inverse(const Tensor& z) const;
};

/// RealNVP-style normalizing flow over flattened vectors with a
/// standard-normal base. log_prob is the exact change-of-variables
/// density and is differentiable w.r.t. its input.
class FlowModel {
 public:
  /// Flow with no coupling layers: log_prob is the standard normal.
  static FlowModel identity(std::size_t dim);

  /// image_side > 0 selects checkerboard partitions over the pixel
  /// grid (dim must equal side*side); image_side == 0 uses a half
  /// split of the flattened coordinates. Partitions alternate between
  /// consecutive layers. Final conditioner layers start at zero, so a
  /// freshly made flow is the identity transform.
  static FlowModel make(std::size_t dim, std::size_t image_side,
                        std::size_t num_layers, std::size_t hidden,
                        double scale_clamp, SeededRng& rng);

  std::size_t dim() const { return dim_; }
  std::size_t image_side() const { return image_side_; }
  std::size_t hidden() const { return hidden_; }
  double scale_clamp() const { return scale_clamp_; }
  /// Additive uniform noise amplitude applied to inputs during MLE
  /// training only (dequantization of 8-bit pixels).
  double dequant_amplitude() const { return dequant_amplitude_; }
  std::vector<CouplingLayer>& layers() { return layers_; }
  const std::vector<CouplingLayer>& layers() const { return layers_; }

  /// x: [n] or [1,n] -> scalar log-density.
  Tensor log_prob(const Tensor& x) const;
  /// x: [b,n] -> [b,1] per-row log-densities.
  Tensor log_prob_batch(const Tensor& x) const;
  /// d log_prob / dx at x, detached from any tape.
  Tensor grad_log_prob(const Tensor& x) const;

  /// Data -> latent; per-row log|det| summed into log_det if non-null.
  Tensor forward_latent(const Tensor& x, Tensor* log_det) const;
  Tensor inverse(const Tensor& z) const;

  std::vector<Tensor> sample(SeededRng& rng, std::size_t count) const;

  std::vector<Tensor*> parameters();
  /// Marks all parameters as constants (after training / loading), so
  /// downstream tapes do not record parameter gradients.
  void freeze();

  void save(const std::string& path) const;
  static FlowModel load(const std::string& path);

 private:
  std::vector<CouplingLayer> layers_;
  std::size_t dim_ = 0;
  std::size_t image_side_ = 0;
  std::size_t hidden_ = 0;
  double scale_clamp_ = 2.0;
  double dequant_amplitude_ = 1.0 / 256.0;
};

struct PriorTrainConfig {
  int epochs = 6;
  int batch_size = 32;
  double learning_rate = 1e-3;
  std::string corpus = "toy";
  double val_fraction = 0.2;

  void validate() const;  // throws ConfigError on bad ranges
};

struct FlowTrainCurve {
  std::vector<double> train_nll;  // mean NLL per epoch
  std::vector<double> val_nll;    // index 0 is the pre-training value
};

/// Maximum-likelihood training with additive uniform dequantization
/// noise of amplitude 1/256 (training only). Seeded-deterministic:
/// the same (model init, corpus, config, seed) gives bit-identical
/// parameters. epochs == 0 leaves the model untouched.
FlowTrainCurve train_mle(FlowModel& model, const std::vector<Tensor>& corpus,
                         const PriorTrainConfig& config, SeededRng& rng);

}  // namespace harvim
