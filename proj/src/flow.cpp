#include "harvim/flow.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "harvim/checkpoint.hpp"
#include "harvim/errors.hpp"
#include "harvim/optim.hpp"

namespace harvim {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
// Global-norm gradient clip applied during MLE training; keeps early
// epochs stable when the conditioners leave their zero init.
constexpr double kGradClipNorm = 100.0;

Tensor copy_as_leaf(const Tensor& t, bool requires_grad) {
  return Tensor::from_data(t.shape(), {t.data().begin(), t.data().end()},
                           requires_grad);
}

}  // namespace

// ---------------------------------------------------------------------------
// Mlp

Mlp Mlp::make(std::size_t in, std::size_t hidden, std::size_t out, SeededRng& rng) {
  Mlp net;
  net.w1 = normal_tensor(rng, {in, hidden}, 1.0 / std::sqrt(double(in)));
  net.b1 = Tensor::zeros({1, hidden});
  net.w2 = normal_tensor(rng, {hidden, hidden}, 1.0 / std::sqrt(double(hidden)));
  net.b2 = Tensor::zeros({1, hidden});
  // Zero final layer: the freshly built network is the zero map.
  net.w3 = Tensor::zeros({hidden, out});
  net.b3 = Tensor::zeros({1, out});
  for (Tensor* p : net.params()) *p = copy_as_leaf(*p, /*requires_grad=*/true);
  return net;
}

Tensor Mlp::forward(const Tensor& x) const {
  Tensor h = tanh(add(matmul(x, w1), b1));
  h = tanh(add(matmul(h, w2), b2));
  return add(matmul(h, w3), b3);
}

std::vector<Tensor*> Mlp::params() { return {&w1, &b1, &w2, &b2, &w3, &b3}; }
std::vector<const Tensor*> Mlp::params() const {
  return {&w1, &b1, &w2, &b2, &w3, &b3};
}

// ---------------------------------------------------------------------------
// CouplingLayer

Tensor CouplingLayer::forward(const Tensor& x, Tensor* log_det) const {
  Tensor inv_mask = sub(Tensor::scalar(1.0), mask);
  Tensor anchored = mul(x, mask);
  Tensor s = mul(mul(tanh(scale_net.forward(anchored)), Tensor::scalar(scale_clamp)),
                 inv_mask);
  Tensor t = mul(translate_net.forward(anchored), inv_mask);
  Tensor z = add(anchored, mul(inv_mask, add(mul(x, exp(s)), t)));
  if (log_det) {
    Tensor ones = Tensor::ones({mask.size(), 1});
    *log_det = add(*log_det, matmul(s, ones));
  }
  return z;
}

Tensor CouplingLayer::inverse(const Tensor& z) const {
  Tensor inv_mask = sub(Tensor::scalar(1.0), mask);
  Tensor anchored = mul(z, mask);
  Tensor s = mul(mul(tanh(scale_net.forward(anchored)), Tensor::scalar(scale_clamp)),
                 inv_mask);
  Tensor t = mul(translate_net.forward(anchored), inv_mask);
  return add(anchored, mul(inv_mask, mul(sub(z, t), exp(neg(s)))));
}

// ---------------------------------------------------------------------------
// FlowModel

FlowModel FlowModel::identity(std::size_t dim) {
  FlowModel model;
  model.dim_ = dim;
  return model;
}

FlowModel FlowModel::make(std::size_t dim, std::size_t image_side,
                          std::size_t num_layers, std::size_t hidden,
                          double scale_clamp, SeededRng& rng) {
  if (image_side > 0 && image_side * image_side != dim) {
    throw ConfigError("flow: dim must equal image_side^2 for checkerboard masks");
  }
  if (num_layers > 0 && dim < 2) {
    throw ConfigError("flow: coupling layers need dim >= 2");
  }
  FlowModel model;
  model.dim_ = dim;
  model.image_side_ = image_side;
  model.hidden_ = hidden;
  model.scale_clamp_ = scale_clamp;
  for (std::size_t l = 0; l < num_layers; ++l) {
    std::vector<double> mask(dim);
    const bool parity = (l % 2) != 0;
    for (std::size_t i = 0; i < dim; ++i) {
      bool on;
      if (image_side > 0) {
        const std::size_t r = i / image_side, c = i % image_side;
        on = ((r + c) % 2 == 0);
      } else {
        on = i < dim / 2;
      }
      mask[i] = (on != parity) ? 1.0 : 0.0;
    }
    CouplingLayer layer;
    layer.mask = Tensor::from_data({dim}, std::move(mask));
    layer.scale_net = Mlp::make(dim, hidden, dim, rng);
    layer.translate_net = Mlp::make(dim, hidden, dim, rng);
    layer.scale_clamp = scale_clamp;
    model.layers_.push_back(std::move(layer));
  }
  return model;
}

Tensor FlowModel::forward_latent(const Tensor& x, Tensor* log_det) const {
  Tensor z = x;
  for (const auto& layer : layers_) z = layer.forward(z, log_det);
  return z;
}

Tensor FlowModel::inverse(const Tensor& z) const {
  Tensor x = z;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) x = it->inverse(x);
  return x;
}

Tensor FlowModel::log_prob_batch(const Tensor& x) const {
  if (x.rank() != 2 || x.shape()[1] != dim_) {
    throw ShapeError("log_prob: expected [batch," + std::to_string(dim_) + "]");
  }
  const std::size_t b = x.shape()[0];
  Tensor log_det = Tensor::zeros({b, 1});
  Tensor z = forward_latent(x, &log_det);
  Tensor ones = Tensor::ones({dim_, 1});
  Tensor sq = matmul(mul(z, z), ones);  // [b,1] row sums of z^2
  Tensor base = sub(Tensor::scalar(-0.5 * double(dim_) * kLog2Pi),
                    mul(Tensor::scalar(0.5), sq));
  return add(base, log_det);
}

Tensor FlowModel::log_prob(const Tensor& x) const {
  if (x.size() != dim_) {
    throw ShapeError("log_prob: input has " + std::to_string(x.size()) +
                     " elements, model dim is " + std::to_string(dim_));
  }
  Tensor row = x.rank() == 2 ? x : reshape(x, {1, dim_});
  return reshape(log_prob_batch(row), {});
}

Tensor FlowModel::grad_log_prob(const Tensor& x) const {
  EnableGradGuard tape;  // independent of the caller's grad mode
  Tensor leaf = copy_as_leaf(x, /*requires_grad=*/true);
  return grad(log_prob(leaf), {leaf})[0];
}

std::vector<Tensor> FlowModel::sample(SeededRng& rng, std::size_t count) const {
  NoGradGuard no_grad;
  std::vector<Tensor> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Tensor z = normal_tensor(rng, {1, dim_});
    out.push_back(reshape(inverse(z), {dim_}));
  }
  return out;
}

std::vector<Tensor*> FlowModel::parameters() {
  std::vector<Tensor*> out;
  for (auto& layer : layers_) {
    for (Tensor* p : layer.scale_net.params()) out.push_back(p);
    for (Tensor* p : layer.translate_net.params()) out.push_back(p);
  }
  return out;
}

void FlowModel::freeze() {
  for (Tensor* p : parameters()) *p = p->detach();
}

void FlowModel::save(const std::string& path) const {
  CheckpointRecords records;
  auto meta = [&](const char* name, double v) {
    records.emplace_back(name, Tensor::scalar(v));
  };
  meta("meta.kind", 1.0);
  meta("meta.dim", double(dim_));
  meta("meta.image_side", double(image_side_));
  meta("meta.num_layers", double(layers_.size()));
  meta("meta.hidden", double(hidden_));
  meta("meta.scale_clamp", scale_clamp_);
  const char* names[] = {"w1", "b1", "w2", "b2", "w3", "b3"};
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::string prefix = "layers." + std::to_string(l) + ".";
    auto snets = layers_[l].scale_net.params();
    auto tnets = layers_[l].translate_net.params();
    for (int i = 0; i < 6; ++i) {
      records.emplace_back(prefix + "scale." + names[i], *snets[i]);
      records.emplace_back(prefix + "translate." + names[i], *tnets[i]);
    }
  }
  save_checkpoint(path, records);
}

FlowModel FlowModel::load(const std::string& path) {
  auto records = load_checkpoint(path);
  std::map<std::string, Tensor> map(records.begin(), records.end());
  auto meta = [&](const char* name) {
    auto it = map.find(name);
    if (it == map.end()) throw IoError("checkpoint " + path + ": missing " + name);
    return it->second.item();
  };
  if (meta("meta.kind") != 1.0) {
    throw IoError("checkpoint " + path + ": not a flow model");
  }
  const auto dim = std::size_t(meta("meta.dim"));
  const auto side = std::size_t(meta("meta.image_side"));
  const auto num_layers = std::size_t(meta("meta.num_layers"));
  const auto hidden = std::size_t(meta("meta.hidden"));
  const double clamp = meta("meta.scale_clamp");

  SeededRng dummy(0);
  FlowModel model = make(dim, side, num_layers, hidden, clamp, dummy);
  const char* names[] = {"w1", "b1", "w2", "b2", "w3", "b3"};
  for (std::size_t l = 0; l < num_layers; ++l) {
    const std::string prefix = "layers." + std::to_string(l) + ".";
    auto snets = model.layers_[l].scale_net.params();
    auto tnets = model.layers_[l].translate_net.params();
    for (int i = 0; i < 6; ++i) {
      for (auto [ptr, key] : {std::pair{snets[i], prefix + "scale." + names[i]},
                              std::pair{tnets[i], prefix + "translate." + names[i]}}) {
        auto it = map.find(key);
        if (it == map.end()) throw IoError("checkpoint " + path + ": missing " + key);
        if (it->second.shape() != ptr->shape()) {
          throw IoError("checkpoint " + path + ": shape mismatch for " + key);
        }
        *ptr = it->second;
      }
    }
  }
  model.freeze();
  return model;
}

// ---------------------------------------------------------------------------
// Training

void PriorTrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("prior.epochs must be >= 0");
  if (batch_size <= 0) throw ConfigError("prior.batch_size must be positive");
  if (learning_rate <= 0) throw ConfigError("prior.learning_rate must be positive");
  if (val_fraction < 0.0 || val_fraction >= 1.0) {
    throw ConfigError("prior.val_fraction must lie in [0,1)");
  }
}

namespace {

Tensor gather_rows(const std::vector<Tensor>& corpus,
                   const std::vector<std::size_t>& idx, std::size_t dim) {
  std::vector<double> data;
  data.reserve(idx.size() * dim);
  for (std::size_t i : idx) {
    data.insert(data.end(), corpus[i].data().begin(), corpus[i].data().end());
  }
  return Tensor::from_data({idx.size(), dim}, std::move(data));
}

double eval_nll(const FlowModel& model, const Tensor& rows) {
  NoGradGuard no_grad;
  return -mean(model.log_prob_batch(rows)).item();
}

}  // namespace

FlowTrainCurve train_mle(FlowModel& model, const std::vector<Tensor>& corpus,
                         const PriorTrainConfig& config, SeededRng& rng) {
  config.validate();
  if (corpus.empty()) throw ConfigError("train_mle: empty corpus");
  for (const auto& image : corpus) {
    if (image.size() != model.dim()) {
      throw ShapeError("train_mle: corpus image has " +
                       std::to_string(image.size()) + " pixels, flow dim is " +
                       std::to_string(model.dim()));
    }
  }

  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.next_u64() % i]);
  }
  const std::size_t n_val =
      static_cast<std::size_t>(config.val_fraction * double(corpus.size()));
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + n_val);
  std::vector<std::size_t> train_idx(order.begin() + n_val, order.end());
  if (train_idx.empty()) throw ConfigError("train_mle: no training data left");
  if (val_idx.empty()) val_idx = train_idx;  // validate on the training set

  const Tensor val_rows = gather_rows(corpus, val_idx, model.dim());
  FlowTrainCurve curve;
  curve.val_nll.push_back(eval_nll(model, val_rows));
  if (config.epochs == 0) return curve;

  AdamW optimizer({.lr = config.learning_rate});
  auto params = model.parameters();

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = train_idx.size(); i > 1; --i) {
      std::swap(train_idx[i - 1], train_idx[rng.next_u64() % i]);
    }
    double epoch_nll = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < train_idx.size();
         start += std::size_t(config.batch_size)) {
      const std::size_t stop =
          std::min(train_idx.size(), start + std::size_t(config.batch_size));
      std::vector<std::size_t> batch_idx(train_idx.begin() + start,
                                         train_idx.begin() + stop);
      Tensor rows = gather_rows(corpus, batch_idx, model.dim());
      rows = add(rows,
                 uniform_tensor(rng, rows.shape(), 0.0, model.dequant_amplitude()));

      Tensor loss = neg(mean(model.log_prob_batch(rows)));
      backward(loss);
      epoch_nll += loss.item() * double(batch_idx.size());
      seen += batch_idx.size();

      double sq_norm = 0.0;
      std::vector<Tensor> grads(params.size());
      for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor g = params[p]->grad();
        grads[p] = g.defined() ? g : Tensor::zeros(params[p]->shape());
        for (double v : grads[p].data()) sq_norm += v * v;
      }
      const double norm = std::sqrt(sq_norm);
      const double scale = norm > kGradClipNorm ? kGradClipNorm / norm : 1.0;
      for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor g = scale == 1.0 ? grads[p] : mul(grads[p], Tensor::scalar(scale));
        *params[p] = optimizer.step(p, *params[p], g);
      }
    }
    curve.train_nll.push_back(epoch_nll / double(seen));
    curve.val_nll.push_back(eval_nll(model, val_rows));
  }
  return curve;
}

}  // namespace harvim
