#include "harvim/inpaint.hpp"

#include <cmath>
#include <queue>

#include "harvim/errors.hpp"

namespace harvim {

namespace {

std::size_t square_side(const Tensor& t, const char* what) {
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(double(t.size()))));
  if (side * side != t.size()) {
    throw ShapeError(std::string(what) + ": image is not square");
  }
  return side;
}

Tensor jacobi_fill(const Tensor& y, const std::vector<bool>& masked,
                   std::size_t side, int iterations) {
  std::vector<double> cur(y.data().begin(), y.data().end());
  // Missing pixels start from the observed mean.
  double acc = 0.0;
  std::size_t observed = 0;
  for (std::size_t i = 0; i < cur.size(); ++i) {
    if (!masked[i]) {
      acc += cur[i];
      ++observed;
    }
  }
  const double fill = observed > 0 ? acc / double(observed) : 0.5;
  for (std::size_t i = 0; i < cur.size(); ++i) {
    if (masked[i]) cur[i] = fill;
  }

  std::vector<double> next = cur;
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t r = 0; r < side; ++r) {
      for (std::size_t c = 0; c < side; ++c) {
        const std::size_t i = r * side + c;
        if (!masked[i]) continue;
        double sum = 0.0;
        int count = 0;
        if (r > 0) { sum += cur[i - side]; ++count; }
        if (r + 1 < side) { sum += cur[i + side]; ++count; }
        if (c > 0) { sum += cur[i - 1]; ++count; }
        if (c + 1 < side) { sum += cur[i + 1]; ++count; }
        next[i] = count > 0 ? sum / count : cur[i];
      }
    }
    std::swap(cur, next);
  }
  return Tensor::from_data(y.shape(), std::move(cur));
}

}  // namespace

Tensor heat_diffusion_inpaint(const Tensor& y, const Tensor& coverage,
                              int iterations) {
  if (iterations < 1) throw ConfigError("heat_diffusion_inpaint: iterations >= 1");
  if (y.shape() != coverage.shape()) {
    throw ShapeError("heat_diffusion_inpaint: shape mismatch");
  }
  const std::size_t side = square_side(y, "heat_diffusion_inpaint");
  std::vector<bool> masked(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) masked[i] = coverage.at(i) >= 0.5;
  return jacobi_fill(y, masked, side, iterations);
}

Tensor blind_detect(const Tensor& display, const BlindThresholdSettings& settings) {
  const std::size_t side = square_side(display, "blind_detect");
  const std::size_t n = display.size();
  std::vector<bool> candidate(n);
  for (std::size_t i = 0; i < n; ++i) {
    candidate[i] = std::abs(display.at(i) - settings.tone) <= settings.tolerance;
  }

  const auto max_size =
      static_cast<std::size_t>(settings.max_area_fraction * double(n));
  std::vector<double> detected(n, 0.0);
  std::vector<int> component(n, -1);
  int next_component = 0;
  for (std::size_t start = 0; start < n; ++start) {
    if (!candidate[start] || component[start] >= 0) continue;
    // BFS over the 4-connected candidate set
    std::vector<std::size_t> members;
    std::queue<std::size_t> frontier;
    frontier.push(start);
    component[start] = next_component;
    while (!frontier.empty()) {
      const std::size_t i = frontier.front();
      frontier.pop();
      members.push_back(i);
      const std::size_t r = i / side, c = i % side;
      const std::size_t neighbors[4] = {
          r > 0 ? i - side : i, r + 1 < side ? i + side : i,
          c > 0 ? i - 1 : i, c + 1 < side ? i + 1 : i};
      for (std::size_t j : neighbors) {
        if (j != i && candidate[j] && component[j] < 0) {
          component[j] = next_component;
          frontier.push(j);
        }
      }
    }
    ++next_component;
    if (members.size() > std::size_t(settings.min_component) &&
        members.size() <= max_size) {
      for (std::size_t i : members) detected[i] = 1.0;
    }
  }
  return Tensor::from_data(display.shape(), std::move(detected));
}

Tensor blind_threshold_inpaint(const Tensor& display,
                               const BlindThresholdSettings& settings) {
  Tensor detected = blind_detect(display, settings);
  bool any = false;
  for (double v : detected.data()) any = any || v > 0.5;
  if (!any) return display;  // failed to locate anything plausible
  return heat_diffusion_inpaint(display, detected, settings.inpaint_iterations);
}

}  // namespace harvim
