#pragma once

#include <vector>

#include "harvim/tensor.hpp"

namespace harvim {

/// Adam with optional decoupled weight decay (AdamW when decay > 0).
/// Parameters are replaced functionally: step() returns the updated
/// tensor and the caller stores it back, keeping tensors immutable.
class AdamW {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  explicit AdamW(Options opts) : opts_(opts) {}

  /// One update for the parameter with the given slot index. Slots keep
  /// per-parameter moment state; use a distinct slot per parameter.
  Tensor step(std::size_t slot, const Tensor& param, const Tensor& gradient);

  const Options& options() const { return opts_; }

 private:
  struct Moments {
    std::vector<double> m, v;
    long t = 0;
  };
  Options opts_;
  std::vector<Moments> state_;
};

}  // namespace harvim
