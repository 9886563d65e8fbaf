#pragma once

// Synthetic eye images with a known hemoglobin/color relation. The constants
// below are test fixtures, not physiology:
//
//   true_ei(hb)  = -0.9 + 0.1 * hb
//   mean_g       = 80
//   mean_r(hb)   = 80 * 10^true_ei(hb)
//
// Scene: skin (180, 140, 120); conjunctiva ellipse (mean_r, 80, 90) covering
// 2-8% of the image; a dark card (20, 20, 20) in the top-left corner holding
// a white square (200, 200, 200). Gaussian noise is added to every pixel but
// the white square, then per-channel illumination gains scale the whole image.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>

#include "pallor/image.hpp"
#include "pallor/nn.hpp"

namespace pallor::synth {

inline constexpr double kEiIntercept = -0.9;
inline constexpr double kEiSlope = 0.1;
inline constexpr double kConjunctivaGreen = 80.0;
inline constexpr double kConjunctivaBlue = 90.0;
inline constexpr std::array<double, 3> kSkin{180.0, 140.0, 120.0};
inline constexpr std::array<double, 3> kCardBody{20.0, 20.0, 20.0};
inline constexpr double kCardWhite = 200.0;

double true_ei(double hb) noexcept;
double conjunctiva_red(double hb) noexcept;
double hb_from_ei(double ei) noexcept;

struct SynthConfig {
  std::size_t n_samples = 100;
  double hb_min = 7.0;
  double hb_max = 14.0;
  double noise_sigma = 2.0;
  double gain_min = 0.5;
  double gain_max = 2.0;
  int width = 256;
  int height = 256;
  std::uint64_t seed = 0;
};

void validate(const SynthConfig& config);

struct SynthSample {
  RgbImage image;
  BinaryMask mask_gt;
  Roi card_roi;
  double gold_hb = 0.0;
  double true_ei = 0.0;
  std::array<double, 3> illumination{1.0, 1.0, 1.0};
};

/// White-square ROI for an image of the given size.
Roi card_roi(int width, int height);

/// Throws Error(invalid_argument) when hb is outside [hb_min, hb_max].
SynthSample generate_sample(double hb, const SynthConfig& config, std::uint64_t seed);

/// Sample `index` of a dataset: hb uniform over the configured range, all
/// randomness drawn from the (config.seed, index) substream.
SynthSample dataset_sample(const SynthConfig& config, std::size_t index);

/// Writes images/NNNN.ppm, masks/NNNN.pbm and manifest.csv under `out_dir`.
void generate_dataset(const SynthConfig& config, const std::filesystem::path& out_dir);

/// Dense(3->1) regressor encoding the inverse map hb = (ei + 0.9) / 0.1 on
/// the (mean_r, mean_g, ei) input.
nn::Network oracle_regressor();

}  // namespace pallor::synth
