#pragma once

// The full screening chain shared by the CLI and the HTTP service:
// calibrate -> segment -> threshold -> features -> regress -> classify.

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pallor/calibration.hpp"
#include "pallor/features.hpp"
#include "pallor/image.hpp"
#include "pallor/nn.hpp"
#include "pallor/screening.hpp"
#include "pallor/segmentation.hpp"

namespace pallor {

struct PipelineOptions {
  Roi card_roi;
  std::optional<Roi> conjunctiva_roi;  ///< operator crop hint; segmentation runs inside it
  SegmenterKind segmenter = SegmenterKind::cnn;
  std::vector<double> cutoffs = kDefaultCutoffs;
  double calibration_target = kDefaultCalibrationTarget;
  GainMode gain_mode = GainMode::per_channel;
  ClassicalParams classical;
  std::size_t min_area = kDefaultMinMaskArea;
};

/// Read-only model state. `segmenter` may be null when only the classical
/// segmenter is used.
struct Models {
  const nn::Network* segmenter = nullptr;
  const nn::Network* regressor = nullptr;
  std::string model_id;
};

struct StageTimings {
  double calibration_ms = 0.0;
  double segmentation_ms = 0.0;
  double features_ms = 0.0;
  double regression_ms = 0.0;
};

struct Analysis {
  CalibrationResult calibration;
  RgbImage calibrated;
  BinaryMask mask;
  MaskHistogram histogram;
  FeatureVector features;
  StageTimings timings;
};

struct PipelineResult {
  Analysis analysis;
  SegmenterKind segmenter = SegmenterKind::cnn;
  HbPrediction prediction;
  std::vector<CutoffDecision> decisions;
};

/// Calibration, segmentation and feature extraction. Throws
/// Error(mask_too_small) when segmentation finds too little conjunctiva.
Analysis analyze(const RgbImage& image, const PipelineOptions& options, const nn::Network* segmenter);

PipelineResult run_pipeline(const RgbImage& image, const PipelineOptions& options, const Models& models);

/// PredictResponse JSON (shared by `pallor predict` and POST /v1/predict).
nlohmann::json to_json(const PipelineResult& result);

nlohmann::json roi_to_json(const Roi& roi);
Roi roi_from_json(const nlohmann::json& j);

}  // namespace pallor
