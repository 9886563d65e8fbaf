#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pallor/features.hpp"
#include "pallor/nn.hpp"

namespace pallor {

inline constexpr double kHbReportMin = 3.0;
inline constexpr double kHbReportMax = 20.0;
inline const std::vector<double> kDefaultCutoffs{9.0, 10.0, 11.0};

struct HbPrediction {
  double hb = 0.0;      ///< g/dL, clamped to [kHbReportMin, kHbReportMax]
  double raw_hb = 0.0;  ///< network output before clamping
  bool clamped = false;
  FeatureVector features;
  std::string model_id;
};

struct CutoffDecision {
  double cutoff = 0.0;
  bool anemic = false;
};

struct LabeledFeatures {
  FeatureVector features;
  double gold_hb = 0.0;
};

/// Dense(3->16) relu, Dense(16->8) relu, Dense(8->1) linear.
nn::NetworkSpec default_regressor_spec(std::uint64_t seed = 0);

/// Raw regressor input (mean_r, mean_g, ei), before standardization.
nn::Tensor regressor_features(const FeatureVector& f);

struct RegressorTraining {
  nn::Network model;
  std::vector<double> train_loss;           ///< mean standardized MSE per epoch
  std::vector<double> validation_mae;       ///< g/dL per epoch
  std::vector<double> best_validation_mae;  ///< running minimum, non-increasing
  double final_validation_mae = 0.0;        ///< MAE of the returned model
  std::size_t train_count = 0;
  std::size_t validation_count = 0;
};

/// Seeded 80/20 train/validation split, per-feature standardization from the
/// training part, SGD on the standardized target. Returns the weights of the
/// epoch with the lowest validation MAE.
RegressorTraining train_regressor(std::span<const LabeledFeatures> dataset, const nn::TrainingConfig& config,
                                  const nn::NetworkSpec& spec = default_regressor_spec());

/// Deterministic; clamps to the reporting range and flags it.
HbPrediction predict_hb(const nn::Network& model, const FeatureVector& features, std::string model_id = {});

/// Anemic iff hb < cutoff.
CutoffDecision classify(double hb, double cutoff);
CutoffDecision classify(const HbPrediction& prediction, double cutoff);

/// A rate in percent, or nullopt when its denominator is zero.
using Rate = std::optional<double>;

struct ScreeningRates {
  Rate accuracy;
  Rate sensitivity;
  Rate specificity;
};

/// Confusion counts with anemia as the positive class.
struct ScreeningMetrics {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const noexcept { return tp + fp + tn + fn; }
  ScreeningRates rates() const noexcept;

  friend bool operator==(const ScreeningMetrics&, const ScreeningMetrics&) = default;
};

/// pairs are (predicted_hb, gold_hb). Gold labels use the same cutoff.
ScreeningMetrics evaluate(std::span<const std::pair<double, double>> pairs, double cutoff);

/// Accuracy/Sensitivity/Specificity rows, one "Hb = <cutoff>" column per
/// cutoff, two decimals, undefined rates as an em dash.
std::string render_report(const std::map<double, ScreeningRates>& rates_by_cutoff);
std::string render_report(const std::map<double, ScreeningMetrics>& metrics_by_cutoff);

nlohmann::json report_json(const std::map<double, ScreeningMetrics>& metrics_by_cutoff);

}  // namespace pallor
