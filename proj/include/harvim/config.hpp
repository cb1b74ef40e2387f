#pragma once

#include <string>
#include <vector>

#include "harvim/flow.hpp"
#include "harvim/gauntlet.hpp"
#include "harvim/harvim.hpp"

namespace harvim {

/// Every tunable in one place, parsed from a plain-text `key = value`
/// file ('#' comments) with CLI-flag overrides applied on top (the
/// flag wins). Unknown keys are a hard error; ranges are validated at
/// parse time.
struct RunConfig {
  std::uint64_t seed = 0;
  int image_side = 32;

  std::string prior_checkpoint = "out/prior.hvmf";
  std::string corpus = "toy";    // "toy", "toy:<count>", or a PNG directory
  std::string image = "toy:0";   // "toy:<index>" or a PNG path
  std::string out_dir = "out";
  std::string wm_params = "";    // params file for the remove command

  int flow_layers = 6;
  int flow_hidden = 128;
  double flow_scale_clamp = 2.0;

  PriorTrainConfig prior;
  HarvimConfig harvim;
  char glyph = 'D';

  ContinuationSchedule remover_flow_r;
  int remover_heat_iterations = 4000;
  BlindThresholdSettings remover_blind;

  int gauntlet_images = 20;
  std::string gauntlet_removers = "flow-r,heat-diffusion,blind-threshold";
  double gauntlet_display_tone = 1.0;  // negative: camouflage to image mean
  int gauntlet_threads = 2;

  void validate() const;  // throws ConfigError

  /// Gauntlet-level view assembled from the fields above.
  GauntletConfig gauntlet_config() const;
};

/// Parse file contents (not a path). Later assignments win.
RunConfig parse_config(const std::string& text);

/// Apply one `key=value` override.
void apply_override(RunConfig& config, const std::string& key,
                    const std::string& value);

/// Canonical serialization: every key, one per line, stable order.
/// parse(serialize(c)) == c.
std::string serialize_config(const RunConfig& config);

/// Watermark parameter files written by learn-wm and read by remove.
void save_wm_params(const std::string& path, const WatermarkParams& params);
WatermarkParams load_wm_params(const std::string& path);

}  // namespace harvim
