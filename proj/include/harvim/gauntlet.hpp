#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "harvim/harvim.hpp"
#include "harvim/inpaint.hpp"
#include "harvim/metrics.hpp"

namespace harvim {

enum class RemoverKind { FlowR, HeatDiffusionInpaint, BlindThresholdInpaint };

const char* remover_name(RemoverKind kind);
RemoverKind remover_from_name(const std::string& name);  // throws ConfigError

/// One remover plus its settings. FlowR (worst case) consumes the exact
/// coverage and the prior; HeatDiffusionInpaint consumes the coverage
/// only; BlindThresholdInpaint receives nothing but the visible
/// composite (no mask).
struct RemoverSpec {
  RemoverKind kind = RemoverKind::FlowR;
  ContinuationSchedule flow_r;
  int heat_iterations = 4000;
  BlindThresholdSettings blind;

  std::string name() const { return remover_name(kind); }
};

struct GauntletRow {
  std::string image_id;
  std::string arm;      // "random" or "harvim"
  std::string remover;  // remover name or "observation"
  double psnr = 0.0;
  double ssim = 0.0;
  double v_psnr = 0.0;
  double v_ssim = 0.0;
};

struct CellStats {
  double mean = 0.0;
  double std_error = 0.0;  // sample std / sqrt(count)
  std::size_t count = 0;
};

/// Per-image rows plus derived Table-1-style aggregates. The paired
/// design holds by construction: a cell appears for both arms or not
/// at all.
struct MetricsReport {
  std::vector<GauntletRow> rows;

  CellStats cell(const std::string& remover, const std::string& arm,
                 Metric metric_kind, bool delta) const;
  /// mean_random - mean_harvim over images present in both arms.
  double improvement(const std::string& remover, Metric metric_kind) const;
  std::vector<std::string> removers() const;

  std::string to_csv() const;
  static MetricsReport from_csv(const std::string& text);  // throws IoError
  std::string to_table() const;
};

struct GauntletConfig {
  HarvimConfig harvim;
  std::vector<RemoverSpec> removers;
  std::size_t glyph_index = 0;
  /// Visible-composite tone handed to blind removers; a negative value
  /// means per-image camouflage (the image mean).
  double display_tone = 1.0;
  std::uint64_t seed = 0;
  int threads = 2;
};

/// For each image: learn a watermark, draw a random-placement baseline
/// of matched glyph and scale, apply every remover to both arms, and
/// collect paired rows. A remover failure marks that (image, remover)
/// cell missing on both arms; it never aborts the run.
MetricsReport run_gauntlet(const std::vector<Tensor>& images,
                           const FlowModel& prior, const GauntletConfig& config);

/// One-sided exact sign test for the paired hypothesis that the random
/// arm beats the learned arm (per-image v higher): P(wins >= observed)
/// under a fair coin, ties dropped.
double paired_sign_test_p(const std::vector<double>& random_values,
                          const std::vector<double>& harvim_values);

}  // namespace harvim
