// Command-line front end: prior training, watermark learning, removal,
// the evaluation gauntlet, report re-aggregation, and gradient checks.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "harvim/config.hpp"
#include "harvim/errors.hpp"
#include "harvim/gauntlet.hpp"
#include "harvim/gradcheck.hpp"
#include "harvim/metrics.hpp"
#include "harvim/png_io.hpp"
#include "harvim/solver.hpp"
#include "harvim/toy_corpus.hpp"

namespace {

using namespace harvim;

void write_text_file(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    out << content;
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename " + tmp + " -> " + path + ": " + ec.message());
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

RunConfig resolve_config(const std::string& config_path,
                         const std::vector<std::string>& overrides) {
  RunConfig config;
  if (!config_path.empty()) {
    config = parse_config(read_text_file(config_path));
  }
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("--set expects key=value, got '" + item + "'");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    apply_override(config, trim(item.substr(0, eq)), trim(item.substr(eq + 1)));
  }
  config.validate();
  return config;
}

Tensor flatten_image(const Tensor& img, const std::string& what) {
  if (img.rank() == 2 && img.shape()[0] != img.shape()[1]) {
    throw ConfigError(what + ": image must be square, got " +
                      std::to_string(img.shape()[0]) + "x" +
                      std::to_string(img.shape()[1]));
  }
  return reshape(img, {img.size()});
}

std::vector<Tensor> load_corpus(const RunConfig& config, bool training_family) {
  const std::string& spec = config.corpus;
  const std::size_t side = std::size_t(config.image_side);
  if (spec == "toy" || spec.rfind("toy:", 0) == 0) {
    std::size_t count = training_family ? 1000 : std::size_t(config.gauntlet_images);
    if (spec.size() > 4) count = std::size_t(std::stoul(spec.substr(4)));
    return training_family ? toy_training_corpus(count, side)
                           : toy_corpus(count, side);
  }
  if (!std::filesystem::is_directory(spec)) {
    throw IoError("corpus directory not found: " + spec);
  }
  std::vector<std::string> paths;
  for (const auto& entry : std::filesystem::directory_iterator(spec)) {
    if (entry.path().extension() == ".png") paths.push_back(entry.path().string());
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw IoError("no .png files in " + spec);
  std::vector<Tensor> images;
  for (const auto& path : paths) {
    Tensor img = flatten_image(load_png(path), path);
    if (img.size() != side * side) {
      throw ConfigError(path + ": expected " + std::to_string(side) + "x" +
                        std::to_string(side) + " pixels");
    }
    images.push_back(img);
  }
  return images;
}

Tensor load_image(const RunConfig& config) {
  const std::string& spec = config.image;
  const std::size_t side = std::size_t(config.image_side);
  if (spec.rfind("toy:", 0) == 0) {
    const std::size_t index = std::size_t(std::stoul(spec.substr(4)));
    return toy_corpus(index + 1, side)[index];
  }
  return flatten_image(load_png(spec), spec);
}

// ---------------------------------------------------------------------------

int cmd_train_prior(const RunConfig& config) {
  auto corpus = load_corpus(config, /*training_family=*/true);
  const std::size_t side = std::size_t(config.image_side);
  std::printf("training prior on %zu images (%zux%zu), %d epochs\n",
              corpus.size(), side, side, config.prior.epochs);

  SeededRng init_rng = SeededRng(config.seed).derive(1);
  FlowModel model =
      FlowModel::make(side * side, side, std::size_t(config.flow_layers),
                      std::size_t(config.flow_hidden), config.flow_scale_clamp,
                      init_rng);
  SeededRng train_rng = SeededRng(config.seed).derive(2);
  FlowTrainCurve curve = train_mle(model, corpus, config.prior, train_rng);

  std::filesystem::create_directories(config.out_dir);
  model.save(config.prior_checkpoint);

  std::string csv = "epoch,train_nll,val_nll\n";
  csv += "0,," + std::to_string(curve.val_nll[0]) + "\n";
  for (std::size_t e = 0; e < curve.train_nll.size(); ++e) {
    csv += std::to_string(e + 1) + "," + std::to_string(curve.train_nll[e]) +
           "," + std::to_string(curve.val_nll[e + 1]) + "\n";
  }
  write_text_file(config.out_dir + "/prior_train.csv", csv);
  std::printf("validation NLL %.3f -> %.3f\nsaved %s\n", curve.val_nll.front(),
              curve.val_nll.back(), config.prior_checkpoint.c_str());
  return 0;
}

int cmd_learn_wm(const RunConfig& config) {
  FlowModel prior = FlowModel::load(config.prior_checkpoint);
  Tensor x_t = load_image(config);
  if (x_t.size() != prior.dim()) {
    throw ConfigError("image has " + std::to_string(x_t.size()) +
                      " pixels but the prior expects " +
                      std::to_string(prior.dim()));
  }
  HarvimConfig harvim_config = config.harvim;
  harvim_config.master_seed = config.seed;
  HarvimResult result =
      run(x_t, harvim_config, prior, GlyphAtlas::index_of(config.glyph));

  std::filesystem::create_directories(config.out_dir);
  save_png(config.out_dir + "/display.png", result.display);
  save_png(config.out_dir + "/mask.png", result.coverage);
  save_wm_params(config.out_dir + "/params.txt", result.params);

  std::string csv =
      "round,lambda,similarity_db,reg,upper_loss,meta_grad_norm,p_left,"
      "p_bottom,scale\n";
  char line[256];
  for (const auto& row : result.audit) {
    std::snprintf(line, sizeof(line), "%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                  row.round, row.lambda, row.similarity_db, row.reg_value,
                  row.upper_loss, row.meta_grad_norm, row.p_left, row.p_bottom,
                  row.area_frac);
    csv += line;
  }
  write_text_file(config.out_dir + "/audit.csv", csv);

  std::printf("learned watermark: glyph %c, p_left %.3f, p_bottom %.3f, area %.3f\n",
              config.glyph, result.params.p_left(), result.params.p_bottom(),
              result.params.area_frac());
  std::printf("wrote %s/{display.png,mask.png,params.txt,audit.csv}\n",
              config.out_dir.c_str());
  return 0;
}

int cmd_remove(const RunConfig& config) {
  FlowModel prior = FlowModel::load(config.prior_checkpoint);
  Tensor x_t = load_image(config);
  if (config.wm_params.empty()) {
    throw ConfigError("remove needs wm_params (path to a params file)");
  }
  WatermarkParams params = load_wm_params(config.wm_params);
  const std::size_t side =
      std::size_t(std::llround(std::sqrt(double(x_t.size()))));

  NoGradGuard no_grad;
  Tensor m = render(params, side);
  Tensor coverage = soft_mask(m, config.harvim.alpha, config.harvim.beta).w;
  SeededRng noise_rng = SeededRng(config.seed).derive(3);
  Tensor y = compose_observation(x_t, m, config.harvim.alpha, config.harvim.beta,
                                 config.harvim.sigma, noise_rng);
  const double tone = config.gauntlet_display_tone >= 0.0
                          ? config.gauntlet_display_tone
                          : mean(x_t).item();
  Tensor display =
      compose_display(x_t, m, tone, config.harvim.alpha, config.harvim.beta);

  std::filesystem::create_directories(config.out_dir);
  GauntletConfig gauntlet = config.gauntlet_config();
  for (std::size_t s = 0; s < gauntlet.removers.size(); ++s) {
    const RemoverSpec& spec = gauntlet.removers[s];
    Tensor x_hat;
    Tensor base = y;
    switch (spec.kind) {
      case RemoverKind::FlowR: {
        SeededRng rng = SeededRng(config.seed).derive(10 + s);
        x_hat = flow_r_remove(y, coverage, prior, spec.flow_r, rng,
                              config.harvim.sigma);
        break;
      }
      case RemoverKind::HeatDiffusionInpaint:
        x_hat = heat_diffusion_inpaint(y, coverage, spec.heat_iterations);
        break;
      case RemoverKind::BlindThresholdInpaint: {
        BlindThresholdSettings blind = spec.blind;
        if (config.gauntlet_display_tone < 0.0) blind.tone = tone;
        x_hat = blind_threshold_inpaint(display, blind);
        base = display;
        break;
      }
    }
    const std::string out_path =
        config.out_dir + "/recon_" + spec.name() + ".png";
    save_png(out_path, x_hat);
    std::printf("%-16s psnr %6.2f dB  v_psnr %+6.2f dB  v_ssim %+7.4f  -> %s\n",
                spec.name().c_str(), psnr(x_hat, x_t),
                v_metric(x_hat, base, x_t, Metric::Psnr),
                v_metric(x_hat, base, x_t, Metric::Ssim), out_path.c_str());
  }
  return 0;
}

int cmd_gauntlet(const RunConfig& config) {
  FlowModel prior = FlowModel::load(config.prior_checkpoint);
  std::vector<Tensor> images;
  if (config.corpus == "toy" || config.corpus.rfind("toy:", 0) == 0) {
    images = toy_corpus(std::size_t(config.gauntlet_images),
                        std::size_t(config.image_side));
  } else {
    images = load_corpus(config, /*training_family=*/false);
  }
  if (prior.dim() != images.front().size()) {
    throw ConfigError("prior/image dimension mismatch");
  }

  MetricsReport report = run_gauntlet(images, prior, config.gauntlet_config());

  std::filesystem::create_directories(config.out_dir);
  write_text_file(config.out_dir + "/gauntlet.csv", report.to_csv());
  const std::string table = report.to_table();
  write_text_file(config.out_dir + "/gauntlet_table.txt", table);
  std::fputs(table.c_str(), stdout);

  for (const auto& remover : report.removers()) {
    std::vector<double> random_v, harvim_v;
    std::map<std::string, double> by_image;
    for (const auto& row : report.rows) {
      if (row.remover == remover && row.arm == "random") {
        by_image[row.image_id] = row.v_psnr;
      }
    }
    for (const auto& row : report.rows) {
      if (row.remover == remover && row.arm == "harvim") {
        auto it = by_image.find(row.image_id);
        if (it != by_image.end()) {
          random_v.push_back(it->second);
          harvim_v.push_back(row.v_psnr);
        }
      }
    }
    std::printf("%s: Imp(v_PSNR) %+0.2f dB, one-sided sign test p = %.4f\n",
                remover.c_str(), report.improvement(remover, Metric::Psnr),
                paired_sign_test_p(random_v, harvim_v));
  }
  std::printf("wrote %s/gauntlet.csv and gauntlet_table.txt\n",
              config.out_dir.c_str());
  return 0;
}

int cmd_report(const std::string& csv_path) {
  MetricsReport report = MetricsReport::from_csv(read_text_file(csv_path));
  std::fputs(report.to_table().c_str(), stdout);
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, int cases) {
  bool all_ok = true;
  for (const auto& suite : gradcheck::run_all(seed, cases)) {
    std::printf("[%s] %-20s cases=%d failures=%d worst_rel_err=%.3g (tol %.0e)\n",
                suite.passed() ? "PASS" : "FAIL", suite.name.c_str(), suite.cases,
                suite.failures, suite.worst_rel_err, suite.tolerance);
    all_ok = all_ok && suite.passed();
  }
  if (!all_ok) throw NumericalError("gradient checks failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hard-to-remove visible watermark toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string csv_path;
  std::uint64_t gradcheck_seed = 0;
  int gradcheck_cases = 100;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "config file (key = value lines)");
    sub->add_option("--set", overrides, "override: key=value (repeatable)")
        ->take_all();
  };

  CLI::App* train = app.add_subcommand("train-prior", "train the flow prior");
  CLI::App* learn = app.add_subcommand("learn-wm", "learn a watermark for one image");
  CLI::App* remove = app.add_subcommand("remove", "apply removers to a watermarked image");
  CLI::App* gauntlet = app.add_subcommand("gauntlet", "paired random-vs-learned evaluation");
  CLI::App* report = app.add_subcommand("report", "re-aggregate a gauntlet CSV");
  CLI::App* gradcheck_cmd =
      app.add_subcommand("gradcheck", "finite-difference oracle suites");
  for (CLI::App* sub : {train, learn, remove, gauntlet}) add_common(sub);
  report->add_option("--csv", csv_path, "gauntlet CSV to aggregate")->required();
  gradcheck_cmd->add_option("--seed", gradcheck_seed, "suite seed");
  gradcheck_cmd->add_option("--cases", gradcheck_cases, "cases per suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 1;
  }

  try {
    if (report->parsed()) return cmd_report(csv_path);
    if (gradcheck_cmd->parsed()) return cmd_gradcheck(gradcheck_seed, gradcheck_cases);
    const RunConfig config = resolve_config(config_path, overrides);
    if (train->parsed()) return cmd_train_prior(config);
    if (learn->parsed()) return cmd_learn_wm(config);
    if (remove->parsed()) return cmd_remove(config);
    if (gauntlet->parsed()) return cmd_gauntlet(config);
    return 1;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 1;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 2;
  } catch (const IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
