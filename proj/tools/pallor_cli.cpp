#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <pthread.h>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pallor/error.hpp"
#include "pallor/gradcheck.hpp"
#include "pallor/manifest.hpp"
#include "pallor/pipeline.hpp"
#include "pallor/random.hpp"
#include "pallor/screening.hpp"
#include "pallor/service.hpp"
#include "pallor/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pallor;

namespace {

constexpr int kExitDomain = 1;
constexpr int kExitUsage = 2;

fs::path manifest_path(const fs::path& data) {
  return fs::is_directory(data) ? data / "manifest.csv" : data;
}

std::vector<double> parse_cutoff_list(const std::string& text) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const std::string item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::logic_error&) {
      used = 0;
    }
    if (used == 0 || used != item.size() || !(v > 0.0)) {
      throw Error(ErrorCode::invalid_argument, "cutoffs must be positive numbers separated by commas, got '" + text + "'");
    }
    out.push_back(v);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

void print_json(const json& j) { std::cout << j.dump(2) << '\n'; }

struct LoadedModels {
  std::optional<nn::Network> regressor;
  std::optional<nn::Network> segmenter;
  std::string model_id;

  Models view() const {
    return {segmenter ? &*segmenter : nullptr, regressor ? &*regressor : nullptr, model_id};
  }
};

LoadedModels load_cli_models(const std::string& regressor, const std::string& segmenter) {
  LoadedModels m;
  if (!regressor.empty()) {
    m.regressor = nn::load_weights(regressor);
    m.model_id = file_sha256(regressor);
  }
  if (!segmenter.empty()) m.segmenter = nn::load_weights(segmenter);
  return m;
}

// Feature source for regressor training: a segmenter, or the manifest's ground-truth masks.
struct FeatureSource {
  std::string name = "classical";
  std::string segmenter_weights;
};

FeatureVector row_features(const ManifestRow& row, const FeatureSource& source, const nn::Network* segmenter) {
  const RgbImage image = load_image(row.image_path);
  if (source.name == "truth") {
    if (!row.mask_path) throw Error(ErrorCode::missing_file, "manifest row has no mask path");
    const BinaryMask mask = load_mask(*row.mask_path);
    const RgbImage calibrated = apply_gains(image, compute_gains(image, row.card));
    return extract_features(calibrated, mask);
  }
  PipelineOptions options;
  options.card_roi = row.card;
  options.segmenter = parse_segmenter(source.name);
  return analyze(image, options, segmenter).features;
}

int cmd_synth(std::size_t n, std::uint64_t seed, const std::string& out, double noise, double hb_min, double hb_max,
              double gain_min, double gain_max, int size) {
  synth::SynthConfig config;
  config.n_samples = n;
  config.seed = seed;
  config.noise_sigma = noise;
  config.hb_min = hb_min;
  config.hb_max = hb_max;
  config.gain_min = gain_min;
  config.gain_max = gain_max;
  config.width = size;
  config.height = size;
  synth::generate_dataset(config, out);
  print_json({{"out", out}, {"samples", n}, {"seed", seed}, {"manifest", (fs::path(out) / "manifest.csv").string()}});
  return 0;
}

struct TrainSegArgs {
  std::string data;
  std::string out;
  int epochs = 40;
  std::uint64_t seed = 0;
  double lr = 0.3;
  int batch = 8;
  std::size_t resolution = 64;
  std::size_t levels = 1;
  std::size_t base_channels = 8;
  std::size_t holdout = 0;
};

int cmd_train_seg(const TrainSegArgs& a) {
  const auto rows = read_manifest(manifest_path(a.data));
  std::vector<SegmenterExample> samples;
  for (const auto& row : rows) {
    if (!row.mask_path) throw Error(ErrorCode::missing_file, "segmenter training needs mask paths in the manifest");
    const RgbImage image = load_image(row.image_path);
    samples.push_back({apply_gains(image, compute_gains(image, row.card)), load_mask(*row.mask_path)});
  }
  const std::size_t holdout = a.holdout > 0 ? a.holdout : std::max<std::size_t>(1, samples.size() / 10);
  if (samples.size() <= holdout) {
    throw Error(ErrorCode::dataset_too_small, "need more samples than the held-out count " + std::to_string(holdout));
  }
  const std::span<const SegmenterExample> all(samples);
  const auto train = all.first(samples.size() - holdout);
  const auto heldout = all.last(holdout);

  SegNetConfig net_config{a.resolution, a.levels, a.base_channels, a.seed};
  nn::TrainingConfig config{a.lr, a.epochs, a.batch, splitmix64(a.seed)};
  const auto result = train_segmenter(train, heldout, net_config, config, [](int epoch, double loss, double score) {
    std::fprintf(stderr, "epoch %d  loss %.6f  heldout_median_iou %.4f\n", epoch + 1, loss, score);
  });
  nn::save_weights(result.model, a.out);
  double best = 0.0;
  for (double s : result.heldout_iou) best = std::max(best, s);
  print_json({{"out", a.out},
              {"train_count", train.size()},
              {"heldout_count", heldout.size()},
              {"train_loss", result.train_loss},
              {"heldout_median_iou", result.heldout_iou},
              {"best_heldout_median_iou", best},
              {"layers", nn::summarize(result.model.spec())}});
  return 0;
}

struct TrainRegArgs {
  std::string data;
  std::string out;
  int epochs = 200;
  std::uint64_t seed = 0;
  double lr = 0.01;
  int batch = 16;
  FeatureSource source;
};

int cmd_train_reg(const TrainRegArgs& a) {
  const auto rows = read_manifest(manifest_path(a.data));
  std::optional<nn::Network> segmenter;
  if (a.source.name == "cnn") {
    if (a.source.segmenter_weights.empty()) throw Error(ErrorCode::model_not_loaded, "--seg cnn needs --seg-weights");
    segmenter = nn::load_weights(a.source.segmenter_weights);
  }
  std::vector<LabeledFeatures> dataset;
  std::size_t skipped = 0;
  for (const auto& row : rows) {
    try {
      dataset.push_back({row_features(row, a.source, segmenter ? &*segmenter : nullptr), row.gold_hb});
    } catch (const Error& e) {
      if (e.code() != ErrorCode::mask_too_small && e.code() != ErrorCode::under_floor) throw;
      ++skipped;
      std::fprintf(stderr, "skipping %s: %s\n", row.image_path.string().c_str(), e.what());
    }
  }
  nn::TrainingConfig config{a.lr, a.epochs, a.batch, a.seed};
  auto spec = default_regressor_spec(a.seed);
  const auto result = train_regressor(dataset, config, spec);
  for (std::size_t e = 0; e < result.validation_mae.size(); ++e) {
    std::fprintf(stderr, "epoch %zu  loss %.6f  validation_mae %.4f\n", e + 1, result.train_loss[e],
                 result.validation_mae[e]);
  }
  nn::save_weights(result.model, a.out);
  print_json({{"out", a.out},
              {"model_id", file_sha256(a.out)},
              {"train_count", result.train_count},
              {"validation_count", result.validation_count},
              {"skipped", skipped},
              {"validation_mae", result.final_validation_mae}});
  return 0;
}

struct PredictArgs {
  std::string image;
  std::string card;
  std::string conjunctiva;
  std::string seg = "cnn";
  std::string weights;
  std::string seg_weights;
  std::string cutoffs = "9,10,11";
};

int cmd_predict(const PredictArgs& a) {
  PipelineOptions options;
  options.card_roi = parse_roi(a.card);
  if (!a.conjunctiva.empty()) options.conjunctiva_roi = parse_roi(a.conjunctiva);
  options.segmenter = parse_segmenter(a.seg);
  options.cutoffs = parse_cutoff_list(a.cutoffs);
  const LoadedModels models = load_cli_models(a.weights, a.seg_weights);
  print_json(to_json(run_pipeline(load_image(a.image), options, models.view())));
  return 0;
}

struct EvaluateArgs {
  std::string data;
  std::string seg = "cnn";
  std::string weights;
  std::string seg_weights;
  std::string cutoffs = "9,10,11";
  bool json_output = false;
};

int cmd_evaluate(const EvaluateArgs& a) {
  const auto rows = read_manifest(manifest_path(a.data));
  const auto cutoffs = parse_cutoff_list(a.cutoffs);
  const LoadedModels models = load_cli_models(a.weights, a.seg_weights);
  PipelineOptions options;
  options.segmenter = parse_segmenter(a.seg);
  options.cutoffs = {};

  std::vector<std::pair<double, double>> pairs;
  std::size_t skipped = 0;
  for (const auto& row : rows) {
    options.card_roi = row.card;
    try {
      const auto result = run_pipeline(load_image(row.image_path), options, models.view());
      pairs.emplace_back(result.prediction.hb, row.gold_hb);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::mask_too_small && e.code() != ErrorCode::under_floor) throw;
      ++skipped;
      std::fprintf(stderr, "skipping %s: %s\n", row.image_path.string().c_str(), e.what());
    }
  }
  std::map<double, ScreeningMetrics> metrics;
  for (double c : cutoffs) metrics[c] = evaluate(pairs, c);
  if (a.json_output) {
    json j = report_json(metrics);
    j["evaluated"] = pairs.size();
    j["skipped"] = skipped;
    print_json(j);
  } else {
    std::cout << render_report(metrics);
    if (skipped > 0) std::fprintf(stderr, "%zu of %zu rows skipped\n", skipped, rows.size());
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
  double worst = 0.0;
  json cases = json::array();
  for (const auto& r : nn::run_gradient_suite(seed)) {
    worst = std::max(worst, r.max_relative_error);
    cases.push_back({{"name", r.name}, {"max_relative_error", r.max_relative_error}});
  }
  const bool pass = worst < nn::kGradientCheckTolerance;
  print_json({{"seed", seed},
              {"step", nn::kGradientCheckStep},
              {"tolerance", nn::kGradientCheckTolerance},
              {"max_relative_error", worst},
              {"pass", pass},
              {"cases", cases}});
  return pass ? 0 : kExitDomain;
}

struct ServeArgs {
  std::string config;
  std::string listen;
  std::string regressor_weights;
  std::string segmenter_weights;
  std::optional<std::size_t> max_payload_bytes;
  std::string cutoffs;
  bool cors = false;
};

int cmd_serve(const ServeArgs& a) {
  ServiceConfig config = a.config.empty() ? ServiceConfig{} : load_service_config(a.config);
  apply_environment(config);
  if (!a.listen.empty()) {
    const auto colon = a.listen.rfind(':');
    if (colon == std::string::npos) throw Error(ErrorCode::invalid_argument, "--listen must be host:port");
    config.host = a.listen.substr(0, colon);
    config.port = std::stoi(a.listen.substr(colon + 1));
  }
  if (!a.regressor_weights.empty()) config.regressor_weights = a.regressor_weights;
  if (!a.segmenter_weights.empty()) config.segmenter_weights = a.segmenter_weights;
  if (a.max_payload_bytes) config.max_payload_bytes = *a.max_payload_bytes;
  if (!a.cutoffs.empty()) config.default_cutoffs = parse_cutoff_list(a.cutoffs);
  if (a.cors) config.cors = true;

  std::vector<std::string> errors;
  ServiceModels models = load_models(config, &errors);
  for (const auto& e : errors) std::fprintf(stderr, "warning: %s\n", e.c_str());

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  Service service(config, std::move(models));
  const int port = service.bind();
  std::fprintf(stderr, "listening on %s:%d (%s)\n", config.host.c_str(), port,
               service.ready() ? "ready" : "no regressor loaded");
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    service.stop();
  });
  service.run();
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pallor: conjunctiva-based anemia screening"};
  app.require_subcommand(1);

  std::size_t synth_n = 100;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  double synth_noise = 2.0, hb_min = 7.0, hb_max = 14.0, gain_min = 0.5, gain_max = 2.0;
  int synth_size = 256;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--n", synth_n, "Number of samples")->capture_default_str();
  synth->add_option("--seed", synth_seed, "Random seed")->capture_default_str();
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--noise", synth_noise, "Pixel noise sigma")->capture_default_str();
  synth->add_option("--hb-min", hb_min, "Lowest gold Hb (g/dL)")->capture_default_str();
  synth->add_option("--hb-max", hb_max, "Highest gold Hb (g/dL)")->capture_default_str();
  synth->add_option("--gain-min", gain_min, "Lowest illumination gain")->capture_default_str();
  synth->add_option("--gain-max", gain_max, "Highest illumination gain")->capture_default_str();
  synth->add_option("--size", synth_size, "Image width and height")->capture_default_str();

  TrainSegArgs seg_args;
  auto* train_seg = app.add_subcommand("train-seg", "Train the convolutional segmenter");
  train_seg->add_option("--data", seg_args.data, "Dataset directory or manifest")->required();
  train_seg->add_option("--out", seg_args.out, "Output weights file")->required();
  train_seg->add_option("--epochs", seg_args.epochs, "Training epochs")->capture_default_str();
  train_seg->add_option("--seed", seg_args.seed, "Random seed")->capture_default_str();
  train_seg->add_option("--lr", seg_args.lr, "Learning rate")->capture_default_str();
  train_seg->add_option("--batch", seg_args.batch, "Batch size")->capture_default_str();
  train_seg->add_option("--resolution", seg_args.resolution, "Network input resolution")->capture_default_str();
  train_seg->add_option("--levels", seg_args.levels, "Downsampling stages")->capture_default_str();
  train_seg->add_option("--base-channels", seg_args.base_channels, "Channels at the first stage")
      ->capture_default_str();
  train_seg->add_option("--holdout", seg_args.holdout, "Held-out samples (default 10%)");

  TrainRegArgs reg_args;
  auto* train_reg = app.add_subcommand("train-reg", "Train the Hb regressor");
  train_reg->add_option("--data", reg_args.data, "Dataset directory or manifest")->required();
  train_reg->add_option("--out", reg_args.out, "Output weights file")->required();
  train_reg->add_option("--epochs", reg_args.epochs, "Training epochs")->capture_default_str();
  train_reg->add_option("--seed", reg_args.seed, "Random seed")->capture_default_str();
  train_reg->add_option("--lr", reg_args.lr, "Learning rate")->capture_default_str();
  train_reg->add_option("--batch", reg_args.batch, "Batch size")->capture_default_str();
  train_reg->add_option("--seg", reg_args.source.name, "Feature source")
      ->check(CLI::IsMember({"classical", "cnn", "truth"}))
      ->capture_default_str();
  train_reg->add_option("--seg-weights", reg_args.source.segmenter_weights, "Segmenter weights for --seg cnn");

  PredictArgs predict_args;
  auto* predict = app.add_subcommand("predict", "Predict Hb for one image");
  predict->add_option("--image", predict_args.image, "PPM or PNG image")->required();
  predict->add_option("--card", predict_args.card, "Calibration white square x,y,w,h")->required();
  predict->add_option("--conjunctiva", predict_args.conjunctiva, "Optional conjunctiva crop x,y,w,h");
  predict->add_option("--seg", predict_args.seg, "Segmenter")
      ->check(CLI::IsMember({"classical", "cnn"}))
      ->capture_default_str();
  predict->add_option("--weights", predict_args.weights, "Regressor weights")->required();
  predict->add_option("--seg-weights", predict_args.seg_weights, "Segmenter weights");
  predict->add_option("--cutoffs", predict_args.cutoffs, "Comma-separated cutoffs (g/dL)")->capture_default_str();

  EvaluateArgs eval_args;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Screening report over a dataset");
  evaluate_cmd->add_option("--data", eval_args.data, "Dataset directory or manifest")->required();
  evaluate_cmd->add_option("--weights", eval_args.weights, "Regressor weights")->required();
  evaluate_cmd->add_option("--seg-weights", eval_args.seg_weights, "Segmenter weights");
  evaluate_cmd->add_option("--seg", eval_args.seg, "Segmenter")
      ->check(CLI::IsMember({"classical", "cnn"}))
      ->capture_default_str();
  evaluate_cmd->add_option("--cutoffs", eval_args.cutoffs, "Comma-separated cutoffs (g/dL)")->capture_default_str();
  evaluate_cmd->add_flag("--json", eval_args.json_output, "Emit JSON instead of the table");

  std::uint64_t grad_seed = 0;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of backpropagation");
  gradcheck->add_option("--seed", grad_seed, "Random seed")->capture_default_str();

  ServeArgs serve_args;
  std::size_t max_payload = 0;
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  serve->add_option("--config", serve_args.config, "JSON config file");
  serve->add_option("--listen", serve_args.listen, "host:port");
  serve->add_option("--regressor-weights", serve_args.regressor_weights, "Regressor weights");
  serve->add_option("--segmenter-weights", serve_args.segmenter_weights, "Segmenter weights");
  auto* payload_opt = serve->add_option("--max-payload-bytes", max_payload, "Request size limit");
  serve->add_option("--cutoffs", serve_args.cutoffs, "Default cutoffs");
  serve->add_flag("--cors", serve_args.cors, "Send permissive cross-origin headers");

  std::string oracle_out;
  auto* oracle = app.add_subcommand("oracle-reg", "Write the exact synthetic-ground-truth regressor");
  oracle->add_option("--out", oracle_out, "Output weights file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*synth) {
      return cmd_synth(synth_n, synth_seed, synth_out, synth_noise, hb_min, hb_max, gain_min, gain_max, synth_size);
    }
    if (*train_seg) return cmd_train_seg(seg_args);
    if (*train_reg) return cmd_train_reg(reg_args);
    if (*predict) return cmd_predict(predict_args);
    if (*evaluate_cmd) return cmd_evaluate(eval_args);
    if (*gradcheck) return cmd_gradcheck(grad_seed);
    if (*serve) {
      if (payload_opt->count() > 0) serve_args.max_payload_bytes = max_payload;
      return cmd_serve(serve_args);
    }
    if (*oracle) {
      nn::save_weights(synth::oracle_regressor(), oracle_out);
      print_json({{"out", oracle_out}, {"model_id", file_sha256(oracle_out)}});
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return kExitDomain;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDomain;
  }
  return kExitUsage;
}
