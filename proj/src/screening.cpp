#include "pallor/screening.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "pallor/error.hpp"
#include "pallor/manifest.hpp"
#include "pallor/random.hpp"

namespace pallor {

namespace {

constexpr std::size_t kFeatureCount = 3;
constexpr std::size_t kMinDatasetSize = 10;

double scale_of(double std_dev) { return std_dev > 0.0 && std::isfinite(std_dev) ? std_dev : 1.0; }

std::pair<double, double> mean_std(const std::vector<double>& v) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, scale_of(std::sqrt(ss / static_cast<double>(v.size())))};
}

nn::Tensor standardized_input(const nn::Network& model, const FeatureVector& f) {
  nn::Tensor x = regressor_features(f);
  const auto& s = model.standardization();
  if (model.input_shape() != nn::Shape{kFeatureCount} || nn::element_count(model.output_shape()) != 1) {
    throw Error(ErrorCode::spec_mismatch, "regressor must map 3 features to one output, got " +
                                              nn::to_string(model.input_shape()) + " -> " +
                                              nn::to_string(model.output_shape()));
  }
  if (!s.input_mean.empty()) {
    if (s.input_mean.size() != kFeatureCount || s.input_std.size() != kFeatureCount) {
      throw Error(ErrorCode::spec_mismatch, "regressor standardization does not cover 3 features");
    }
    for (std::size_t i = 0; i < kFeatureCount; ++i) x[i] = (x[i] - s.input_mean[i]) / s.input_std[i];
  }
  return x;
}

double destandardize_output(const nn::Network& model, double y) {
  const auto& s = model.standardization();
  if (s.output_mean.empty()) return y;
  return y * s.output_std[0] + s.output_mean[0];
}

std::string format_rate(const Rate& r) {
  if (!r) return "—";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", *r);
  return buf;
}

// Display width of UTF-8 text: one column per code point.
std::size_t display_width(const std::string& s) {
  return static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

std::string pad(const std::string& s, std::size_t width) {
  const auto w = display_width(s);
  return w >= width ? s : s + std::string(width - w, ' ');
}

}  // namespace

nn::NetworkSpec default_regressor_spec(std::uint64_t seed) {
  nn::NetworkSpec spec;
  spec.input_shape = {kFeatureCount};
  spec.seed = seed;
  spec.layers = {nn::Dense{3, 16}, nn::ActivationLayer{nn::Activation::relu},
                 nn::Dense{16, 8}, nn::ActivationLayer{nn::Activation::relu},
                 nn::Dense{8, 1},  nn::ActivationLayer{nn::Activation::linear}};
  return spec;
}

nn::Tensor regressor_features(const FeatureVector& f) { return nn::Tensor({kFeatureCount}, {f.mean_r, f.mean_g, f.ei}); }

RegressorTraining train_regressor(std::span<const LabeledFeatures> dataset, const nn::TrainingConfig& config,
                                  const nn::NetworkSpec& spec) {
  nn::validate(config);
  if (dataset.size() < kMinDatasetSize) {
    throw Error(ErrorCode::dataset_too_small, "regressor needs at least " + std::to_string(kMinDatasetSize) +
                                                  " samples, got " + std::to_string(dataset.size()));
  }
  for (const auto& s : dataset) {
    if (!std::isfinite(s.features.mean_r) || !std::isfinite(s.features.mean_g) || !std::isfinite(s.features.ei) ||
        !std::isfinite(s.gold_hb)) {
      throw Error(ErrorCode::non_finite, "dataset contains non-finite features or labels");
    }
    if (s.gold_hb < kHbReportMin || s.gold_hb > kHbReportMax) {
      throw Error(ErrorCode::invalid_argument, "gold hb " + format_number(s.gold_hb) + " outside [3, 20]");
    }
  }

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng = Rng::substream(config.seed, 0);
  split_rng.shuffle(order.begin(), order.end());
  const std::size_t n_val = std::max<std::size_t>(1, dataset.size() / 5);
  const std::size_t n_train = dataset.size() - n_val;
  const std::span<const std::size_t> train_idx(order.data(), n_train);
  const std::span<const std::size_t> val_idx(order.data() + n_train, n_val);

  nn::Standardization scaling;
  for (std::size_t k = 0; k < kFeatureCount; ++k) {
    std::vector<double> column;
    for (auto i : train_idx) column.push_back(regressor_features(dataset[i].features)[k]);
    const auto [m, s] = mean_std(column);
    scaling.input_mean.push_back(m);
    scaling.input_std.push_back(s);
  }
  {
    std::vector<double> gold;
    for (auto i : train_idx) gold.push_back(dataset[i].gold_hb);
    const auto [m, s] = mean_std(gold);
    scaling.output_mean = {m};
    scaling.output_std = {s};
  }

  nn::Network net(spec);
  net.set_standardization(scaling);

  std::vector<nn::Example> examples;
  examples.reserve(n_train);
  for (auto i : train_idx) {
    examples.push_back({standardized_input(net, dataset[i].features),
                        nn::Tensor({1}, {(dataset[i].gold_hb - scaling.output_mean[0]) / scaling.output_std[0]})});
  }

  auto validation_mae = [&](const nn::Network& model) {
    double err = 0.0;
    for (auto i : val_idx) err += std::abs(predict_hb(model, dataset[i].features).hb - dataset[i].gold_hb);
    return err / static_cast<double>(val_idx.size());
  };

  RegressorTraining result{net, {}, {}, {}, validation_mae(net), n_train, n_val};
  double best = result.final_validation_mae;
  nn::TrainingConfig train_config = config;
  train_config.seed = splitmix64(config.seed);
  result.train_loss = nn::train(net, examples, train_config, [&](int, double) {
    const double mae = validation_mae(net);
    result.validation_mae.push_back(mae);
    if (mae < best) {
      best = mae;
      result.model = net;
    }
    result.best_validation_mae.push_back(best);
    return true;
  });
  result.final_validation_mae = best;
  return result;
}

HbPrediction predict_hb(const nn::Network& model, const FeatureVector& features, std::string model_id) {
  const nn::Tensor y = nn::forward(model, standardized_input(model, features));
  HbPrediction p;
  p.raw_hb = destandardize_output(model, y[0]);
  if (!std::isfinite(p.raw_hb)) throw Error(ErrorCode::non_finite, "regressor produced a non-finite Hb");
  p.hb = std::clamp(p.raw_hb, kHbReportMin, kHbReportMax);
  p.clamped = p.hb != p.raw_hb;
  p.features = features;
  p.model_id = std::move(model_id);
  return p;
}

CutoffDecision classify(double hb, double cutoff) {
  if (!(cutoff > 0.0)) throw Error(ErrorCode::invalid_argument, "cutoff must be positive");
  return {cutoff, hb < cutoff};
}

CutoffDecision classify(const HbPrediction& prediction, double cutoff) { return classify(prediction.hb, cutoff); }

ScreeningRates ScreeningMetrics::rates() const noexcept {
  auto pct = [](std::size_t num, std::size_t den) -> Rate {
    if (den == 0) return std::nullopt;
    return 100.0 * static_cast<double>(num) / static_cast<double>(den);
  };
  return {pct(tp + tn, total()), pct(tp, tp + fn), pct(tn, tn + fp)};
}

ScreeningMetrics evaluate(std::span<const std::pair<double, double>> pairs, double cutoff) {
  if (pairs.empty()) throw Error(ErrorCode::dataset_too_small, "evaluation needs at least one pair");
  ScreeningMetrics m;
  for (const auto& [predicted, gold] : pairs) {
    const bool predicted_anemic = classify(predicted, cutoff).anemic;
    const bool gold_anemic = classify(gold, cutoff).anemic;
    if (gold_anemic) {
      ++(predicted_anemic ? m.tp : m.fn);
    } else {
      ++(predicted_anemic ? m.fp : m.tn);
    }
  }
  return m;
}

std::string render_report(const std::map<double, ScreeningRates>& rates_by_cutoff) {
  if (rates_by_cutoff.empty()) throw Error(ErrorCode::invalid_argument, "report needs at least one cutoff");
  const std::vector<std::string> labels{"Cut-off point", "Accuracy", "Sensitivity", "Specificity"};
  std::vector<std::vector<std::string>> columns;
  columns.emplace_back(labels);
  for (const auto& [cutoff, r] : rates_by_cutoff) {
    columns.push_back({"Hb = " + format_number(cutoff), format_rate(r.accuracy), format_rate(r.sensitivity),
                       format_rate(r.specificity)});
  }
  std::vector<std::size_t> widths;
  for (const auto& col : columns) {
    std::size_t w = 0;
    for (const auto& cell : col) w = std::max(w, display_width(cell));
    widths.push_back(w);
  }
  std::ostringstream os;
  for (std::size_t row = 0; row < labels.size(); ++row) {
    std::string line;
    for (std::size_t c = 0; c < columns.size(); ++c) {
      line += c + 1 < columns.size() ? pad(columns[c][row], widths[c] + 2) : columns[c][row];
    }
    os << line << '\n';
  }
  return os.str();
}

std::string render_report(const std::map<double, ScreeningMetrics>& metrics_by_cutoff) {
  std::map<double, ScreeningRates> rates;
  for (const auto& [cutoff, m] : metrics_by_cutoff) rates[cutoff] = m.rates();
  return render_report(rates);
}

nlohmann::json report_json(const std::map<double, ScreeningMetrics>& metrics_by_cutoff) {
  auto rate = [](const Rate& r) { return r ? nlohmann::json(*r) : nlohmann::json(nullptr); };
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& [cutoff, m] : metrics_by_cutoff) {
    const auto r = m.rates();
    rows.push_back({{"cutoff", cutoff},
                    {"tp", m.tp},
                    {"fp", m.fp},
                    {"tn", m.tn},
                    {"fn", m.fn},
                    {"accuracy", rate(r.accuracy)},
                    {"sensitivity", rate(r.sensitivity)},
                    {"specificity", rate(r.specificity)}});
  }
  return {{"cutoffs", rows}};
}

}  // namespace pallor
