#include "harvim/config.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "harvim/errors.hpp"

namespace harvim {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + value + "'");
  }
}

long long parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + value + "'");
  }
}

std::string meta_mode_name(MetaMode mode) {
  switch (mode) {
    case MetaMode::ExactK1: return "exact-k1";
    case MetaMode::FirstOrder: return "first-order";
    case MetaMode::Hvp: return "hvp";
  }
  throw Error("bad meta mode");
}

MetaMode meta_mode_from(const std::string& key, const std::string& value) {
  if (value == "exact-k1") return MetaMode::ExactK1;
  if (value == "first-order") return MetaMode::FirstOrder;
  if (value == "hvp") return MetaMode::Hvp;
  throw ConfigError(key + ": unknown meta mode '" + value + "'");
}

std::string format_value(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

struct Entry {
  const char* key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define NUM_ENTRY(KEY, FIELD)                                                  \
  Entry{KEY,                                                                   \
        [](RunConfig& c, const std::string& v) {                               \
          c.FIELD = static_cast<decltype(c.FIELD)>(parse_double(KEY, v));      \
        },                                                                     \
        [](const RunConfig& c) { return format_value(double(c.FIELD)); }}

#define INT_ENTRY(KEY, FIELD)                                                  \
  Entry{KEY,                                                                   \
        [](RunConfig& c, const std::string& v) {                               \
          c.FIELD = static_cast<decltype(c.FIELD)>(parse_int(KEY, v));         \
        },                                                                     \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }}

#define STR_ENTRY(KEY, FIELD)                                                  \
  Entry{KEY, [](RunConfig& c, const std::string& v) { c.FIELD = v; },          \
        [](const RunConfig& c) { return c.FIELD; }}

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = {
      INT_ENTRY("seed", seed),
      INT_ENTRY("image_side", image_side),
      STR_ENTRY("prior_checkpoint", prior_checkpoint),
      STR_ENTRY("corpus", corpus),
      STR_ENTRY("image", image),
      STR_ENTRY("out_dir", out_dir),
      STR_ENTRY("wm_params", wm_params),
      INT_ENTRY("flow.layers", flow_layers),
      INT_ENTRY("flow.hidden", flow_hidden),
      NUM_ENTRY("flow.scale_clamp", flow_scale_clamp),
      INT_ENTRY("prior.epochs", prior.epochs),
      INT_ENTRY("prior.batch_size", prior.batch_size),
      NUM_ENTRY("prior.learning_rate", prior.learning_rate),
      NUM_ENTRY("prior.val_fraction", prior.val_fraction),
      INT_ENTRY("harvim.rounds", harvim.rounds),
      INT_ENTRY("harvim.inner_steps", harvim.inner_steps),
      NUM_ENTRY("harvim.lambda_target", harvim.lambda_target),
      NUM_ENTRY("harvim.sigma", harvim.sigma),
      NUM_ENTRY("harvim.learning_rate", harvim.learning_rate),
      NUM_ENTRY("harvim.reg_coeff", harvim.reg_coeff),
      NUM_ENTRY("harvim.alpha", harvim.alpha),
      NUM_ENTRY("harvim.beta", harvim.beta),
      INT_ENTRY("harvim.grid_mle_steps", harvim.grid_mle_steps),
      NUM_ENTRY("harvim.eta", harvim.eta),
      INT_ENTRY("harvim.warmup_steps", harvim.warmup_steps),
      NUM_ENTRY("harvim.weight_decay", harvim.weight_decay),
      Entry{"harvim.meta_mode",
            [](RunConfig& c, const std::string& v) {
              c.harvim.meta_mode = meta_mode_from("harvim.meta_mode", v);
            },
            [](const RunConfig& c) { return meta_mode_name(c.harvim.meta_mode); }},
      Entry{"harvim.glyph",
            [](RunConfig& c, const std::string& v) {
              if (v.size() != 1) throw ConfigError("harvim.glyph: one character");
              (void)GlyphAtlas::index_of(v[0]);
              c.glyph = v[0];
            },
            [](const RunConfig& c) { return std::string(1, c.glyph); }},
      INT_ENTRY("remover.flow_r.rounds", remover_flow_r.rounds),
      INT_ENTRY("remover.flow_r.inner_steps", remover_flow_r.inner_steps),
      NUM_ENTRY("remover.flow_r.lambda_target", remover_flow_r.lambda_target),
      NUM_ENTRY("remover.flow_r.eta", remover_flow_r.eta),
      INT_ENTRY("remover.flow_r.warmup_steps", remover_flow_r.warmup_steps),
      INT_ENTRY("remover.heat.iterations", remover_heat_iterations),
      NUM_ENTRY("remover.blind.tone", remover_blind.tone),
      NUM_ENTRY("remover.blind.tolerance", remover_blind.tolerance),
      INT_ENTRY("remover.blind.min_component", remover_blind.min_component),
      NUM_ENTRY("remover.blind.max_area_fraction", remover_blind.max_area_fraction),
      INT_ENTRY("remover.blind.inpaint_iterations", remover_blind.inpaint_iterations),
      INT_ENTRY("gauntlet.images", gauntlet_images),
      STR_ENTRY("gauntlet.removers", gauntlet_removers),
      NUM_ENTRY("gauntlet.display_tone", gauntlet_display_tone),
      INT_ENTRY("gauntlet.threads", gauntlet_threads),
  };
  return entries;
}

#undef NUM_ENTRY
#undef INT_ENTRY
#undef STR_ENTRY

}  // namespace

void apply_override(RunConfig& config, const std::string& key,
                    const std::string& value) {
  for (const auto& entry : registry()) {
    if (key == entry.key) {
      entry.set(config, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

RunConfig parse_config(const std::string& text) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected key = value");
    }
    apply_override(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  config.validate();
  return config;
}

std::string serialize_config(const RunConfig& config) {
  std::string out;
  for (const auto& entry : registry()) {
    out += std::string(entry.key) + " = " + entry.get(config) + "\n";
  }
  return out;
}

void RunConfig::validate() const {
  if (image_side < 4) throw ConfigError("image_side must be >= 4");
  if (flow_layers < 0) throw ConfigError("flow.layers must be >= 0");
  if (flow_hidden < 1) throw ConfigError("flow.hidden must be >= 1");
  if (flow_scale_clamp <= 0) throw ConfigError("flow.scale_clamp must be positive");
  prior.validate();
  harvim.validate();
  remover_flow_r.validate();
  if (remover_heat_iterations < 1) {
    throw ConfigError("remover.heat.iterations must be >= 1");
  }
  if (remover_blind.tolerance < 0) {
    throw ConfigError("remover.blind.tolerance must be >= 0");
  }
  if (remover_blind.min_component < 0) {
    throw ConfigError("remover.blind.min_component must be >= 0");
  }
  if (remover_blind.max_area_fraction <= 0 || remover_blind.max_area_fraction > 1) {
    throw ConfigError("remover.blind.max_area_fraction must lie in (0,1]");
  }
  if (remover_blind.inpaint_iterations < 1) {
    throw ConfigError("remover.blind.inpaint_iterations must be >= 1");
  }
  if (gauntlet_images < 1) throw ConfigError("gauntlet.images must be >= 1");
  if (gauntlet_threads < 1) throw ConfigError("gauntlet.threads must be >= 1");
  (void)GlyphAtlas::index_of(glyph);
}

GauntletConfig RunConfig::gauntlet_config() const {
  GauntletConfig out;
  out.harvim = harvim;
  out.glyph_index = GlyphAtlas::index_of(glyph);
  out.display_tone = gauntlet_display_tone;
  out.seed = seed;
  out.threads = gauntlet_threads;

  std::istringstream in(gauntlet_removers);
  std::string name;
  while (std::getline(in, name, ',')) {
    name = trim(name);
    if (name.empty()) continue;
    RemoverSpec spec;
    spec.kind = remover_from_name(name);
    spec.flow_r = remover_flow_r;
    spec.heat_iterations = remover_heat_iterations;
    spec.blind = remover_blind;
    out.removers.push_back(spec);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Watermark parameter files

void save_wm_params(const std::string& path, const WatermarkParams& params) {
  std::ostringstream out;
  out.precision(17);
  out << "glyph = " << GlyphAtlas::glyph_of(params.glyph_index) << "\n";
  out << "raw_left = " << params.raw_left.item() << "\n";
  out << "raw_bottom = " << params.raw_bottom.item() << "\n";
  out << "raw_scale = " << params.raw_scale.item() << "\n";
  if (params.latent.defined()) {
    out << "latent =";
    for (double v : params.latent.data()) out << " " << v;
    out << "\n";
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream file(tmp, std::ios::trunc);
    if (!file) throw IoError("cannot open " + tmp + " for writing");
    file << out.str();
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename " + tmp + " -> " + path + ": " + ec.message());
}

WatermarkParams load_wm_params(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open params file " + path);
  char glyph = '0';
  double raw_left = 0, raw_bottom = 0, raw_scale = 0;
  std::vector<double> latent;
  bool saw_glyph = false;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError(path + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "glyph") {
      if (value.size() != 1) throw IoError(path + ": glyph must be one character");
      glyph = value[0];
      saw_glyph = true;
    } else if (key == "raw_left") {
      raw_left = parse_double(key, value);
    } else if (key == "raw_bottom") {
      raw_bottom = parse_double(key, value);
    } else if (key == "raw_scale") {
      raw_scale = parse_double(key, value);
    } else if (key == "latent") {
      std::istringstream vs(value);
      double v;
      while (vs >> v) latent.push_back(v);
    } else {
      throw IoError(path + ": unknown key '" + key + "'");
    }
  }
  if (!saw_glyph) throw IoError(path + ": missing glyph");
  WatermarkParams params = WatermarkParams::make(
      GlyphAtlas::index_of(glyph), raw_left, raw_bottom, raw_scale, false);
  if (!latent.empty()) {
    params.latent = Tensor::from_data({latent.size()}, latent);
  }
  return params;
}

}  // namespace harvim
