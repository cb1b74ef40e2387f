#include "harvim/optim.hpp"

#include <cmath>

#include "harvim/errors.hpp"

namespace harvim {

Tensor AdamW::step(std::size_t slot, const Tensor& param, const Tensor& gradient) {
  if (param.shape() != gradient.shape()) {
    throw ShapeError("AdamW::step: parameter/gradient shape mismatch");
  }
  if (slot >= state_.size()) state_.resize(slot + 1);
  Moments& mom = state_[slot];
  if (mom.m.empty()) {
    mom.m.assign(param.size(), 0.0);
    mom.v.assign(param.size(), 0.0);
  }
  ++mom.t;
  const double bc1 = 1.0 - std::pow(opts_.beta1, mom.t);
  const double bc2 = 1.0 - std::pow(opts_.beta2, mom.t);

  std::vector<double> out(param.size());
  const auto p = param.data();
  const auto g = gradient.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    mom.m[i] = opts_.beta1 * mom.m[i] + (1.0 - opts_.beta1) * g[i];
    mom.v[i] = opts_.beta2 * mom.v[i] + (1.0 - opts_.beta2) * g[i] * g[i];
    const double mhat = mom.m[i] / bc1;
    const double vhat = mom.v[i] / bc2;
    double value = p[i] - opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
    value -= opts_.lr * opts_.weight_decay * p[i];  // decoupled decay
    out[i] = value;
  }
  return Tensor::from_data(param.shape(), std::move(out), param.requires_grad());
}

}  // namespace harvim
