#pragma once

#include <array>

#include "pallor/image.hpp"

namespace pallor {

/// How the white-square mean brightness MB is formed.
enum class GainMode {
  per_channel,  ///< one MB (and gain) per channel; neutralizes color casts
  scalar,       ///< one MB for all channels (mean of the three channel means)
};

inline constexpr double kDefaultCalibrationTarget = 200.0;
/// Minimum white-square channel mean; darker squares are not visible/white.
inline constexpr double kCardMeanFloor = 1.0;

struct CalibrationResult {
  std::array<double, 3> gains{1.0, 1.0, 1.0};
  ChannelMeans card_means;
  double target = kDefaultCalibrationTarget;
};

/// Gains that bring the white square's mean brightness to `target`:
/// gain_c = target / MB_c.
CalibrationResult compute_gains(const RgbImage& image, const Roi& white_square,
                                double target = kDefaultCalibrationTarget,
                                GainMode mode = GainMode::per_channel);

/// Multiplies every sample of channel c by gain_c. Nothing is clamped.
RgbImage apply_gains(const RgbImage& image, const CalibrationResult& result);

/// Per-channel illumination scaling, the inverse operation used by tests and
/// the synthetic generator.
RgbImage scale_channels(const RgbImage& image, std::array<double, 3> factors);

}  // namespace pallor
