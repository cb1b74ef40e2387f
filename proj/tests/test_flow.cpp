#include "harvim/flow.hpp"

#include <cmath>

#include "doctest.h"
#include "harvim/checkpoint.hpp"
#include "harvim/errors.hpp"

using namespace harvim;

namespace {

double rel_err(const Tensor& got, const Tensor& want) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    num += (got.at(i) - want.at(i)) * (got.at(i) - want.at(i));
    den += want.at(i) * want.at(i);
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-10);
}

// Flow whose conditioners actually do something: make() zero-inits the
// final layers, so nudge them off zero.
FlowModel random_flow(std::size_t dim, std::size_t layers, std::size_t hidden,
                      SeededRng& rng, double final_std = 0.3) {
  FlowModel model = FlowModel::make(dim, 0, layers, hidden, 2.0, rng);
  for (auto& layer : model.layers()) {
    for (Mlp* net : {&layer.scale_net, &layer.translate_net}) {
      net->w3 = normal_tensor(rng, net->w3.shape(), final_std);
      net->b3 = normal_tensor(rng, net->b3.shape(), final_std * 0.3);
    }
  }
  return model;
}

// det by Gaussian elimination with partial pivoting; returns log|det|.
double log_abs_det(std::vector<std::vector<double>> m) {
  const std::size_t n = m.size();
  double acc = 0.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(m[r][col]) > std::abs(m[pivot][col])) pivot = r;
    }
    std::swap(m[col], m[pivot]);
    acc += std::log(std::abs(m[col][col]));
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = m[r][col] / m[col][col];
      for (std::size_t c = col; c < n; ++c) m[r][c] -= f * m[col][c];
    }
  }
  return acc;
}

}  // namespace

TEST_CASE("identity flow log density") {
  FlowModel id1 = FlowModel::identity(1);
  CHECK(id1.log_prob(Tensor::zeros({1})).item() ==
        doctest::Approx(-0.9189385).epsilon(1e-6));

  FlowModel id4 = FlowModel::identity(4);
  CHECK(id4.log_prob(Tensor::zeros({4})).item() ==
        doctest::Approx(-2.0 * std::log(2.0 * 3.14159265358979)).epsilon(1e-6));

  // zero-initialized conditioners are the identity transform
  SeededRng rng(3);
  FlowModel fresh = FlowModel::make(4, 2, 4, 8, 2.0, rng);
  Tensor x = normal_tensor(rng, {4});
  CHECK(fresh.log_prob(x).item() ==
        doctest::Approx(id4.log_prob(x).item()).epsilon(1e-6));

  CHECK_THROWS_AS((void)id4.log_prob(Tensor::zeros({5})), ShapeError);
  CHECK_THROWS_AS((void)FlowModel::make(1, 0, 2, 8, 2.0, rng), ConfigError);
}

TEST_CASE("identity flow score is -x") {
  FlowModel id = FlowModel::identity(3);
  Tensor x = Tensor::from_data({3}, {0.5, -1.0, 2.0});
  Tensor g = id.grad_log_prob(x);
  CHECK(g.at(0) == doctest::Approx(-0.5));
  CHECK(g.at(1) == doctest::Approx(1.0));
  CHECK(g.at(2) == doctest::Approx(-2.0));

  Tensor g0 = id.grad_log_prob(Tensor::zeros({3}));
  for (std::size_t i = 0; i < 3; ++i) CHECK(g0.at(i) == 0.0);
}

TEST_CASE("invertibility of random flows") {
  SeededRng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t dim = 2 + rng.next_u64() % 7;
    FlowModel model = random_flow(dim, 4, 16, rng);
    Tensor x = normal_tensor(rng, {1, dim});
    Tensor z = model.forward_latent(x, nullptr);
    Tensor back = model.inverse(z);
    for (std::size_t i = 0; i < dim; ++i) {
      CHECK(std::abs(back.at(i) - x.at(i)) < 1e-5);
    }
  }
}

TEST_CASE("analytic log-det matches finite-difference jacobian") {
  PrecisionGuard f64(Precision::f64);
  SeededRng rng(17);
  for (int trial = 0; trial < 8; ++trial) {
    const std::size_t dim = 2 + rng.next_u64() % 5;  // n <= 6
    FlowModel model = random_flow(dim, 3, 12, rng);
    Tensor x = normal_tensor(rng, {1, dim});

    Tensor ld = Tensor::zeros({1, 1});
    (void)model.forward_latent(x, &ld);

    const double h = 1e-6;
    std::vector<std::vector<double>> jac(dim, std::vector<double>(dim));
    for (std::size_t j = 0; j < dim; ++j) {
      std::vector<double> hi(x.data().begin(), x.data().end());
      std::vector<double> lo = hi;
      hi[j] += h;
      lo[j] -= h;
      Tensor zp = model.forward_latent(Tensor::from_data({1, dim}, hi), nullptr);
      Tensor zm = model.forward_latent(Tensor::from_data({1, dim}, lo), nullptr);
      for (std::size_t i = 0; i < dim; ++i) {
        jac[i][j] = (zp.at(i) - zm.at(i)) / (2.0 * h);
      }
    }
    CHECK(std::abs(ld.item() - log_abs_det(jac)) < 1e-3);
  }
}

TEST_CASE("grad_log_prob matches finite differences on a toy flow") {
  PrecisionGuard f64(Precision::f64);
  SeededRng rng(23);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t dim = 2 + rng.next_u64() % 4;
    FlowModel model = random_flow(dim, 3, 10, rng);
    Tensor x = normal_tensor(rng, {dim});
    Tensor g = model.grad_log_prob(x);
    Tensor fd = finite_diff_grad(
        [&](const Tensor& t) { return model.log_prob(t).item(); }, x, 1e-5);
    CHECK(rel_err(g, fd) < 1e-4);
  }
}

TEST_CASE("density integrates to one on a 2-D flow") {
  SeededRng rng(31);
  FlowModel model = random_flow(2, 4, 12, rng, 0.25);
  const int steps = 240;
  const double lo = -8.0, hi = 8.0;
  const double h = (hi - lo) / steps;
  double integral = 0.0;
  std::vector<double> chunk;
  const std::size_t chunk_rows = 4096;
  chunk.reserve(chunk_rows * 2);
  auto flush = [&]() {
    if (chunk.empty()) return;
    const std::size_t rows = chunk.size() / 2;
    Tensor lp = model.log_prob_batch(Tensor::from_data({rows, 2}, chunk));
    for (std::size_t i = 0; i < rows; ++i) integral += std::exp(lp.at(i)) * h * h;
    chunk.clear();
  };
  for (int i = 0; i < steps; ++i) {
    for (int j = 0; j < steps; ++j) {
      chunk.push_back(lo + (i + 0.5) * h);
      chunk.push_back(lo + (j + 0.5) * h);
      if (chunk.size() >= chunk_rows * 2) flush();
    }
  }
  flush();
  CHECK(integral == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("density integrates to one on a 4-D flow") {
  SeededRng rng(37);
  FlowModel model = random_flow(4, 3, 10, rng, 0.15);
  const int steps = 22;
  const double lo = -5.5, hi = 5.5;
  const double h = (hi - lo) / steps;
  double integral = 0.0;
  std::vector<double> chunk;
  const std::size_t chunk_rows = 8192;
  auto flush = [&]() {
    if (chunk.empty()) return;
    const std::size_t rows = chunk.size() / 4;
    Tensor lp = model.log_prob_batch(Tensor::from_data({rows, 4}, chunk));
    const double cell = h * h * h * h;
    for (std::size_t i = 0; i < rows; ++i) integral += std::exp(lp.at(i)) * cell;
    chunk.clear();
  };
  for (int a = 0; a < steps; ++a)
    for (int b = 0; b < steps; ++b)
      for (int c = 0; c < steps; ++c)
        for (int d = 0; d < steps; ++d) {
          chunk.push_back(lo + (a + 0.5) * h);
          chunk.push_back(lo + (b + 0.5) * h);
          chunk.push_back(lo + (c + 0.5) * h);
          chunk.push_back(lo + (d + 0.5) * h);
          if (chunk.size() >= chunk_rows * 4) flush();
        }
  flush();
  CHECK(integral == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("training reduces NLL and is deterministic") {
  SeededRng rng(41);
  // ten near-identical images
  std::vector<Tensor> corpus;
  Tensor base = uniform_tensor(rng, {16}, 0.2, 0.8);
  for (int i = 0; i < 10; ++i) corpus.push_back(base);

  PriorTrainConfig config;
  config.epochs = 5;
  config.batch_size = 5;
  config.learning_rate = 5e-3;
  config.val_fraction = 0.0;

  SeededRng init_rng(1);
  FlowModel model = FlowModel::make(16, 4, 3, 16, 2.0, init_rng);
  SeededRng train_rng(2);
  FlowTrainCurve curve = train_mle(model, corpus, config, train_rng);
  REQUIRE(curve.val_nll.size() == 6);
  for (std::size_t e = 1; e < curve.val_nll.size(); ++e) {
    CHECK(curve.val_nll[e] < curve.val_nll[e - 1]);
  }

  // bit-identical replay
  SeededRng init_rng2(1);
  FlowModel model2 = FlowModel::make(16, 4, 3, 16, 2.0, init_rng2);
  SeededRng train_rng2(2);
  (void)train_mle(model2, corpus, config, train_rng2);
  auto p1 = model.parameters();
  auto p2 = model2.parameters();
  for (std::size_t i = 0; i < p1.size(); ++i) {
    for (std::size_t j = 0; j < p1[i]->size(); ++j) {
      CHECK(p1[i]->at(j) == p2[i]->at(j));
    }
  }

  // zero epochs: unchanged bit-for-bit
  SeededRng init_rng3(1);
  FlowModel model3 = FlowModel::make(16, 4, 3, 16, 2.0, init_rng3);
  PriorTrainConfig zero = config;
  zero.epochs = 0;
  SeededRng train_rng3(2);
  (void)train_mle(model3, corpus, zero, train_rng3);
  SeededRng init_rng4(1);
  FlowModel reference = FlowModel::make(16, 4, 3, 16, 2.0, init_rng4);
  auto p3 = model3.parameters();
  auto pr = reference.parameters();
  for (std::size_t i = 0; i < p3.size(); ++i) {
    for (std::size_t j = 0; j < p3[i]->size(); ++j) {
      CHECK(p3[i]->at(j) == pr[i]->at(j));
    }
  }

  CHECK_THROWS_AS((void)train_mle(model, {}, config, rng), ConfigError);
}

TEST_CASE("two-moons samples stay near the data") {
  SeededRng rng(43);
  std::vector<Tensor> data;
  for (int i = 0; i < 240; ++i) {
    const double t = rng.uniform(0.0, 3.14159265358979);
    double x, y;
    if (i % 2 == 0) {
      x = std::cos(t);
      y = std::sin(t);
    } else {
      x = 1.0 - std::cos(t);
      y = 0.5 - std::sin(t);
    }
    data.push_back(Tensor::from_data(
        {2}, {x + 0.05 * rng.normal(), y + 0.05 * rng.normal()}));
  }

  double lo_x = 1e9, hi_x = -1e9, lo_y = 1e9, hi_y = -1e9;
  double sx = 0, sy = 0, sxx = 0, syy = 0;
  for (const auto& p : data) {
    lo_x = std::min(lo_x, p.at(0));
    hi_x = std::max(hi_x, p.at(0));
    lo_y = std::min(lo_y, p.at(1));
    hi_y = std::max(hi_y, p.at(1));
    sx += p.at(0);
    sy += p.at(1);
    sxx += p.at(0) * p.at(0);
    syy += p.at(1) * p.at(1);
  }
  const double n = double(data.size());
  const double std_x = std::sqrt(sxx / n - (sx / n) * (sx / n));
  const double std_y = std::sqrt(syy / n - (sy / n) * (sy / n));

  SeededRng init_rng(5);
  FlowModel model = FlowModel::make(2, 0, 4, 24, 2.0, init_rng);
  PriorTrainConfig config;
  config.epochs = 60;
  config.batch_size = 24;
  config.learning_rate = 5e-3;
  config.val_fraction = 0.1;
  SeededRng train_rng(6);
  (void)train_mle(model, data, config, train_rng);

  SeededRng sample_rng(7);
  auto samples = model.sample(sample_rng, 200);
  int inside = 0;
  for (const auto& s : samples) {
    const bool ok = s.at(0) >= lo_x - 3 * std_x && s.at(0) <= hi_x + 3 * std_x &&
                    s.at(1) >= lo_y - 3 * std_y && s.at(1) <= hi_y + 3 * std_y;
    inside += ok ? 1 : 0;
  }
  CHECK(inside >= 190);  // >= 95% of draws

  // sampling sanity on the identity flow
  FlowModel id = FlowModel::identity(2);
  SeededRng srng(8);
  auto base_samples = id.sample(srng, 400);
  double acc = 0.0;
  for (const auto& s : base_samples) acc += s.at(0) + s.at(1);
  CHECK(std::abs(acc / 800.0) < 4.0 / std::sqrt(800.0));
  CHECK(id.sample(srng, 0).empty());
}

TEST_CASE("checkpoint round trip") {
  SeededRng rng(51);
  FlowModel model = random_flow(6, 3, 8, rng);
  const std::string path = "flow_test_ckpt.hvmf";
  model.save(path);
  FlowModel loaded = FlowModel::load(path);

  Tensor x = normal_tensor(rng, {6});
  CHECK(loaded.log_prob(x).item() ==
        doctest::Approx(model.log_prob(x).item()).epsilon(1e-6));
  auto pa = model.parameters();
  auto pb = loaded.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(!pb[i]->requires_grad());  // loaded models come back frozen
    for (std::size_t j = 0; j < pa[i]->size(); ++j) {
      CHECK(pb[i]->at(j) == doctest::Approx(pa[i]->at(j)).epsilon(1e-6));
    }
  }

  CHECK_THROWS_AS((void)FlowModel::load("does_not_exist.hvmf"), IoError);

  // corrupted magic
  {
    std::vector<std::pair<std::string, Tensor>> recs{{"a", Tensor::zeros({2})}};
    save_checkpoint("bad_magic.hvmf", recs);
    auto loaded_recs = load_checkpoint("bad_magic.hvmf");
    CHECK(loaded_recs.size() == 1);
    FILE* f = std::fopen("bad_magic.hvmf", "r+b");
    std::fputc('X', f);
    std::fclose(f);
    CHECK_THROWS_AS((void)load_checkpoint("bad_magic.hvmf"), IoError);
  }
  std::remove(path.c_str());
  std::remove("bad_magic.hvmf");
}
