#include "harvim/gauntlet.hpp"

#include <atomic>
#include <mutex>
#include <cmath>
#include <set>
#include <sstream>
#include <thread>

#include "harvim/errors.hpp"
#include "harvim/solver.hpp"

namespace harvim {

const char* remover_name(RemoverKind kind) {
  switch (kind) {
    case RemoverKind::FlowR: return "flow-r";
    case RemoverKind::HeatDiffusionInpaint: return "heat-diffusion";
    case RemoverKind::BlindThresholdInpaint: return "blind-threshold";
  }
  throw Error("remover_name: unknown kind");
}

RemoverKind remover_from_name(const std::string& name) {
  if (name == "flow-r") return RemoverKind::FlowR;
  if (name == "heat-diffusion") return RemoverKind::HeatDiffusionInpaint;
  if (name == "blind-threshold") return RemoverKind::BlindThresholdInpaint;
  throw ConfigError("unknown remover '" + name + "'");
}

// ---------------------------------------------------------------------------
// MetricsReport

namespace {

double row_value(const GauntletRow& row, Metric metric_kind, bool delta) {
  if (delta) return metric_kind == Metric::Psnr ? row.v_psnr : row.v_ssim;
  return metric_kind == Metric::Psnr ? row.psnr : row.ssim;
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace

CellStats MetricsReport::cell(const std::string& remover, const std::string& arm,
                              Metric metric_kind, bool delta) const {
  CellStats stats;
  double acc = 0.0;
  for (const auto& row : rows) {
    if (row.remover == remover && row.arm == arm) {
      acc += row_value(row, metric_kind, delta);
      ++stats.count;
    }
  }
  if (stats.count == 0) return stats;
  stats.mean = acc / double(stats.count);
  double sq = 0.0;
  for (const auto& row : rows) {
    if (row.remover == remover && row.arm == arm) {
      const double d = row_value(row, metric_kind, delta) - stats.mean;
      sq += d * d;
    }
  }
  if (stats.count > 1) {
    stats.std_error = std::sqrt(sq / double(stats.count - 1)) /
                      std::sqrt(double(stats.count));
  }
  return stats;
}

double MetricsReport::improvement(const std::string& remover,
                                  Metric metric_kind) const {
  // paired over images present in both arms
  std::map<std::string, double> random_v, harvim_v;
  for (const auto& row : rows) {
    if (row.remover != remover) continue;
    (row.arm == "random" ? random_v : harvim_v)[row.image_id] =
        row_value(row, metric_kind, true);
  }
  double acc = 0.0;
  std::size_t count = 0;
  for (const auto& [image, rv] : random_v) {
    auto it = harvim_v.find(image);
    if (it == harvim_v.end()) continue;
    acc += rv - it->second;
    ++count;
  }
  return count > 0 ? acc / double(count) : 0.0;
}

std::vector<std::string> MetricsReport::removers() const {
  std::set<std::string> seen;
  std::vector<std::string> out;
  for (const auto& row : rows) {
    if (row.remover == "observation") continue;
    if (seen.insert(row.remover).second) out.push_back(row.remover);
  }
  return out;
}

std::string MetricsReport::to_csv() const {
  std::string out = "image_id,arm,remover,psnr,ssim,v_psnr,v_ssim\n";
  for (const auto& row : rows) {
    out += row.image_id + "," + row.arm + "," + row.remover + "," +
           format_double(row.psnr) + "," + format_double(row.ssim) + "," +
           format_double(row.v_psnr) + "," + format_double(row.v_ssim) + "\n";
  }
  return out;
}

MetricsReport MetricsReport::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "image_id,arm,remover,psnr,ssim,v_psnr,v_ssim") {
    throw IoError("metrics csv: bad or missing header");
  }
  MetricsReport report;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (fields.size() != 7) {
      throw IoError("metrics csv: line " + std::to_string(line_no) +
                    " has " + std::to_string(fields.size()) + " fields");
    }
    GauntletRow row;
    row.image_id = fields[0];
    row.arm = fields[1];
    row.remover = fields[2];
    try {
      row.psnr = std::stod(fields[3]);
      row.ssim = std::stod(fields[4]);
      row.v_psnr = std::stod(fields[5]);
      row.v_ssim = std::stod(fields[6]);
    } catch (const std::exception&) {
      throw IoError("metrics csv: bad number on line " + std::to_string(line_no));
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string MetricsReport::to_table() const {
  std::ostringstream out;
  auto line = [&](const std::string& remover) {
    char buf[256];
    const CellStats rp = cell(remover, "random", Metric::Psnr, true);
    const CellStats hp = cell(remover, "harvim", Metric::Psnr, true);
    const CellStats rs = cell(remover, "random", Metric::Ssim, true);
    const CellStats hs = cell(remover, "harvim", Metric::Ssim, true);
    std::snprintf(buf, sizeof(buf),
                  "%-16s %8.2f±%-5.2f %8.2f±%-5.2f %7.2f  %8.3f±%-6.3f %8.3f±%-6.3f %7.3f\n",
                  remover.c_str(), rp.mean, rp.std_error, hp.mean, hp.std_error,
                  improvement(remover, Metric::Psnr), rs.mean, rs.std_error,
                  hs.mean, hs.std_error, improvement(remover, Metric::Ssim));
    out << buf;
  };
  out << "                 ----------- v_PSNR (dB) ----------  ------------- v_SSIM -------------\n";
  out << "Remover            Random         HARVIM        Imp    Random          HARVIM        Imp\n";
  for (const auto& remover : removers()) line(remover);
  const CellStats obs_r = cell("observation", "random", Metric::Psnr, false);
  const CellStats obs_h = cell("observation", "harvim", Metric::Psnr, false);
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "Observation PSNR   Random %6.2f±%-5.2f  HARVIM %6.2f±%-5.2f  (n=%zu)\n",
                obs_r.mean, obs_r.std_error, obs_h.mean, obs_h.std_error,
                obs_r.count);
  out << buf;
  return out.str();
}

// ---------------------------------------------------------------------------
// Gauntlet

namespace {

struct ArmArtifacts {
  Tensor coverage;
  Tensor observation;  // inverse-problem observation (masked + noise)
  Tensor display;      // visible composite for blind removers
};

struct CellResult {
  GauntletRow row;
  bool ok = false;
};

GauntletRow make_row(const std::string& image_id, const std::string& arm,
                     const std::string& remover, const Tensor& x_hat,
                     const Tensor& base, const Tensor& x_t) {
  GauntletRow row;
  row.image_id = image_id;
  row.arm = arm;
  row.remover = remover;
  row.psnr = psnr(x_hat, x_t);
  row.ssim = ssim(x_hat, x_t);
  row.v_psnr = row.psnr - psnr(base, x_t);
  row.v_ssim = row.ssim - ssim(base, x_t);
  return row;
}

Tensor apply_remover(const RemoverSpec& spec, const ArmArtifacts& arm,
                     const FlowModel& prior, double sigma, SeededRng& rng) {
  switch (spec.kind) {
    case RemoverKind::FlowR:
      return flow_r_remove(arm.observation, arm.coverage, prior, spec.flow_r,
                           rng, sigma);
    case RemoverKind::HeatDiffusionInpaint:
      return heat_diffusion_inpaint(arm.observation, arm.coverage,
                                    spec.heat_iterations);
    case RemoverKind::BlindThresholdInpaint:
      return blind_threshold_inpaint(arm.display, spec.blind);
  }
  throw Error("apply_remover: unknown kind");
}

}  // namespace

MetricsReport run_gauntlet(const std::vector<Tensor>& images,
                           const FlowModel& prior, const GauntletConfig& config) {
  if (images.empty()) throw ConfigError("run_gauntlet: no images");
  config.harvim.validate();

  std::vector<std::vector<GauntletRow>> per_image(images.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::string failure;
  std::mutex failure_mutex;

  auto worker = [&]() {
    while (true) {
      const std::size_t index = next.fetch_add(1);
      if (index >= images.size() || failed.load()) break;
      try {
        const Tensor& x_t = images[index];
        const std::string image_id = "toy" + std::to_string(index);
        SeededRng image_rng = SeededRng(config.seed).derive(100 + index);

        HarvimConfig harvim_config = config.harvim;
        harvim_config.master_seed = image_rng.next_u64();
        HarvimResult learned =
            run(x_t, harvim_config, prior, config.glyph_index);

        // random baseline: same glyph, same learned scale, uniform location
        const double p_left = image_rng.uniform();
        const double p_bottom = image_rng.uniform();
        WatermarkParams random_params = WatermarkParams::make(
            config.glyph_index, std::log(std::max(p_left, 1e-9) /
                                         std::max(1.0 - p_left, 1e-9)),
            std::log(std::max(p_bottom, 1e-9) / std::max(1.0 - p_bottom, 1e-9)),
            learned.params.raw_scale.item(), false);

        const double tone = config.display_tone >= 0.0
                                ? config.display_tone
                                : mean(x_t).item();

        NoGradGuard no_grad;
        const std::size_t side =
            std::size_t(std::llround(std::sqrt(double(x_t.size()))));
        Tensor noise = normal_tensor(image_rng, x_t.shape(), config.harvim.sigma);

        auto build_arm = [&](const Tensor& m) {
          ArmArtifacts arm;
          arm.coverage = soft_mask(m, config.harvim.alpha, config.harvim.beta).w;
          arm.observation = add(mul(sub(Tensor::scalar(1.0), arm.coverage), x_t),
                                noise);
          arm.display = compose_display(x_t, m, tone, config.harvim.alpha,
                                        config.harvim.beta);
          return arm;
        };
        ArmArtifacts harvim_arm = build_arm(learned.watermark);
        ArmArtifacts random_arm = build_arm(render(random_params, side));

        std::vector<GauntletRow>& rows = per_image[index];
        rows.push_back(make_row(image_id, "harvim", "observation",
                                harvim_arm.observation, harvim_arm.observation,
                                x_t));
        rows.push_back(make_row(image_id, "random", "observation",
                                random_arm.observation, random_arm.observation,
                                x_t));

        for (std::size_t s = 0; s < config.removers.size(); ++s) {
          const RemoverSpec& spec = config.removers[s];
          std::optional<GauntletRow> harvim_row, random_row;
          try {
            SeededRng remover_rng = image_rng.derive(10 + s * 2);
            const bool blind = spec.kind == RemoverKind::BlindThresholdInpaint;
            RemoverSpec arm_spec = spec;
            if (blind && config.display_tone < 0.0) arm_spec.blind.tone = tone;

            Tensor x_hat_h = apply_remover(arm_spec, harvim_arm, prior,
                                           config.harvim.sigma, remover_rng);
            harvim_row = make_row(image_id, "harvim", spec.name(), x_hat_h,
                                  blind ? harvim_arm.display
                                        : harvim_arm.observation,
                                  x_t);
            SeededRng remover_rng2 = image_rng.derive(11 + s * 2);
            Tensor x_hat_r = apply_remover(arm_spec, random_arm, prior,
                                           config.harvim.sigma, remover_rng2);
            random_row = make_row(image_id, "random", spec.name(), x_hat_r,
                                  blind ? random_arm.display
                                        : random_arm.observation,
                                  x_t);
          } catch (const Error&) {
            continue;  // cell missing on both arms, run continues
          }
          rows.push_back(*harvim_row);
          rows.push_back(*random_row);
        }
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        failure = e.what();
        failed.store(true);
      }
    }
  };

  const int thread_count =
      std::max(1, std::min<int>(config.threads, int(images.size())));
  std::vector<std::thread> pool;
  for (int t = 0; t < thread_count; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failed.load()) throw Error("run_gauntlet: " + failure);

  MetricsReport report;
  for (const auto& rows : per_image) {
    report.rows.insert(report.rows.end(), rows.begin(), rows.end());
  }
  return report;
}

double paired_sign_test_p(const std::vector<double>& random_values,
                          const std::vector<double>& harvim_values) {
  if (random_values.size() != harvim_values.size()) {
    throw ShapeError("sign test: paired vectors differ in length");
  }
  std::size_t wins = 0, n = 0;
  for (std::size_t i = 0; i < random_values.size(); ++i) {
    if (random_values[i] == harvim_values[i]) continue;  // drop ties
    ++n;
    if (random_values[i] > harvim_values[i]) ++wins;
  }
  if (n == 0) return 1.0;
  // exact one-sided binomial tail P(X >= wins), X ~ Bin(n, 1/2)
  double p = 0.0;
  for (std::size_t k = wins; k <= n; ++k) {
    double log_choose = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      log_choose += std::log(double(n - j)) - std::log(double(j + 1));
    }
    p += std::exp(log_choose - double(n) * std::log(2.0));
  }
  return std::min(1.0, p);
}

}  // namespace harvim
