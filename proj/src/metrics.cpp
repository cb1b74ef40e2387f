#include "harvim/metrics.hpp"

#include <cmath>
#include <vector>

#include "harvim/errors.hpp"

namespace harvim {

namespace {

constexpr double kPsnrCap = 99.0;

std::size_t square_side(const Tensor& t, const char* what) {
  const auto n = t.size();
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(double(n))));
  if (side * side != n) {
    throw ShapeError(std::string(what) + ": image of " + std::to_string(n) +
                     " pixels is not square");
  }
  return side;
}

std::vector<double> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> w(size);
  const double mid = (double(size) - 1.0) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    w[i] = std::exp(-((double(i) - mid) * (double(i) - mid)) / (2 * sigma * sigma));
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

// Separable 'valid' convolution with a symmetric 1-D window.
std::vector<double> conv_valid(const std::vector<double>& img, std::size_t side,
                               const std::vector<double>& window) {
  const std::size_t k = window.size();
  const std::size_t out_side = side - k + 1;
  std::vector<double> rows(out_side * side, 0.0);
  for (std::size_t i = 0; i < out_side; ++i) {
    for (std::size_t j = 0; j < side; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += window[t] * img[(i + t) * side + j];
      rows[i * side + j] = acc;
    }
  }
  std::vector<double> out(out_side * out_side, 0.0);
  for (std::size_t i = 0; i < out_side; ++i) {
    for (std::size_t j = 0; j < out_side; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += window[t] * rows[i * side + j + t];
      out[i * out_side + j] = acc;
    }
  }
  return out;
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("psnr: shape mismatch");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.at(i) - b.at(i);
    mse += d * d;
  }
  mse /= double(a.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

double ssim(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("ssim: shape mismatch");
  const std::size_t side = square_side(a, "ssim");
  std::size_t win = 11;
  if (side < win) win = side % 2 == 1 ? side : side - 1;
  if (win < 1) throw ShapeError("ssim: image too small");
  const auto window = gaussian_window(win, 1.5);

  std::vector<double> ia(a.data().begin(), a.data().end());
  std::vector<double> ib(b.data().begin(), b.data().end());
  std::vector<double> iaa(ia.size()), ibb(ia.size()), iab(ia.size());
  for (std::size_t i = 0; i < ia.size(); ++i) {
    iaa[i] = ia[i] * ia[i];
    ibb[i] = ib[i] * ib[i];
    iab[i] = ia[i] * ib[i];
  }
  const auto mu1 = conv_valid(ia, side, window);
  const auto mu2 = conv_valid(ib, side, window);
  const auto m11 = conv_valid(iaa, side, window);
  const auto m22 = conv_valid(ibb, side, window);
  const auto m12 = conv_valid(iab, side, window);

  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double acc = 0.0;
  for (std::size_t i = 0; i < mu1.size(); ++i) {
    const double var1 = m11[i] - mu1[i] * mu1[i];
    const double var2 = m22[i] - mu2[i] * mu2[i];
    const double cov = m12[i] - mu1[i] * mu2[i];
    acc += ((2 * mu1[i] * mu2[i] + c1) * (2 * cov + c2)) /
           ((mu1[i] * mu1[i] + mu2[i] * mu2[i] + c1) * (var1 + var2 + c2));
  }
  return acc / double(mu1.size());
}

double v_metric(const Tensor& x_hat, const Tensor& y, const Tensor& x_t,
                Metric which) {
  switch (which) {
    case Metric::Psnr:
      return psnr(x_hat, x_t) - psnr(y, x_t);
    case Metric::Ssim:
      return ssim(x_hat, x_t) - ssim(y, x_t);
  }
  throw Error("v_metric: unknown metric");
}

}  // namespace harvim
