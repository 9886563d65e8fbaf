#include "pallor/pipeline.hpp"

#include <chrono>

#include "pallor/error.hpp"

namespace pallor {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

// Places a mask computed on `roi` into a full-size mask.
BinaryMask embed(const BinaryMask& part, const Roi& roi, int width, int height) {
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 0);
  for (int y = 0; y < roi.h; ++y) {
    for (int x = 0; x < roi.w; ++x) {
      bits[static_cast<std::size_t>(roi.y + y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(roi.x + x)] =
          part.test(x, y);
    }
  }
  return BinaryMask(width, height, std::move(bits));
}

}  // namespace

Analysis analyze(const RgbImage& image, const PipelineOptions& options, const nn::Network* segmenter) {
  if (options.conjunctiva_roi && !options.conjunctiva_roi->fits(image)) {
    throw Error(ErrorCode::out_of_bounds, "conjunctiva ROI " + format_roi(*options.conjunctiva_roi) +
                                              " outside image");
  }
  if (options.segmenter == SegmenterKind::cnn && segmenter == nullptr) {
    throw Error(ErrorCode::model_not_loaded, "CNN segmenter requested but no segmenter weights are loaded");
  }

  auto t0 = Clock::now();
  const CalibrationResult calibration =
      compute_gains(image, options.card_roi, options.calibration_target, options.gain_mode);
  RgbImage calibrated = apply_gains(image, calibration);
  const double calibration_ms = elapsed_ms(t0);

  t0 = Clock::now();
  const RgbImage& region = options.conjunctiva_roi ? crop(calibrated, *options.conjunctiva_roi) : calibrated;
  const SegmenterOutput soft = options.segmenter == SegmenterKind::cnn ? cnn_segment(region, *segmenter)
                                                                      : classical_segment(region, options.classical);
  auto [mask, histogram] = to_mask(soft);
  if (options.conjunctiva_roi) mask = embed(mask, *options.conjunctiva_roi, image.width(), image.height());
  const double segmentation_ms = elapsed_ms(t0);

  t0 = Clock::now();
  const FeatureVector features = extract_features(calibrated, mask, options.min_area);
  const double features_ms = elapsed_ms(t0);

  return Analysis{calibration, std::move(calibrated), std::move(mask), histogram, features,
                  StageTimings{calibration_ms, segmentation_ms, features_ms, 0.0}};
}

PipelineResult run_pipeline(const RgbImage& image, const PipelineOptions& options, const Models& models) {
  if (models.regressor == nullptr) throw Error(ErrorCode::model_not_loaded, "no regressor weights are loaded");
  for (double c : options.cutoffs) {
    if (!(c > 0.0)) throw Error(ErrorCode::invalid_argument, "cutoffs must be positive");
  }
  PipelineResult result{analyze(image, options, models.segmenter), options.segmenter, {}, {}};
  const auto t0 = Clock::now();
  result.prediction = predict_hb(*models.regressor, result.analysis.features, models.model_id);
  result.analysis.timings.regression_ms = elapsed_ms(t0);
  for (double c : options.cutoffs) result.decisions.push_back(classify(result.prediction, c));
  return result;
}

nlohmann::json roi_to_json(const Roi& roi) { return {{"x", roi.x}, {"y", roi.y}, {"w", roi.w}, {"h", roi.h}}; }

Roi roi_from_json(const nlohmann::json& j) {
  try {
    return {j.at("x").get<int>(), j.at("y").get<int>(), j.at("w").get<int>(), j.at("h").get<int>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::invalid_argument, std::string("ROI must be an object {x, y, w, h}: ") + e.what());
  }
}

nlohmann::json to_json(const PipelineResult& result) {
  const auto& a = result.analysis;
  const auto& f = a.features;
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& [start, length] : encode_rle(a.mask)) runs.push_back({start, length});
  nlohmann::json decisions = nlohmann::json::array();
  for (const auto& d : result.decisions) decisions.push_back({{"cutoff", d.cutoff}, {"anemic", d.anemic}});
  return {
      {"gains", {{"r", a.calibration.gains[0]}, {"g", a.calibration.gains[1]}, {"b", a.calibration.gains[2]}}},
      {"card_means", {{"r", a.calibration.card_means.r}, {"g", a.calibration.card_means.g}, {"b", a.calibration.card_means.b}}},
      {"features", {{"mean_r", f.mean_r}, {"mean_g", f.mean_g}, {"ei", f.ei}, {"mask_area", f.mask_area}}},
      {"hb", result.prediction.hb},
      {"hb_clamped", result.prediction.clamped},
      {"decisions", decisions},
      {"mask_rle", {{"width", a.mask.width()}, {"height", a.mask.height()}, {"runs", runs}}},
      {"segmenter", to_string(result.segmenter)},
      {"model_id", result.prediction.model_id},
      {"timings",
       {{"calibration_ms", a.timings.calibration_ms},
        {"segmentation_ms", a.timings.segmentation_ms},
        {"features_ms", a.timings.features_ms},
        {"regression_ms", a.timings.regression_ms}}},
  };
}

}  // namespace pallor
