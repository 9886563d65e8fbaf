#include "pallor/calibration.hpp"

#include <cmath>
#include <string>

#include "pallor/error.hpp"

namespace pallor {

CalibrationResult compute_gains(const RgbImage& image, const Roi& white_square, double target,
                                GainMode mode) {
  if (!(target > 0.0) || !std::isfinite(target)) {
    throw Error(ErrorCode::invalid_argument, "calibration target must be positive");
  }
  if (!white_square.fits(image)) {
    throw Error(ErrorCode::out_of_bounds,
                "white-square ROI " + format_roi(white_square) + " outside " +
                    std::to_string(image.width()) + "x" + std::to_string(image.height()) + " image");
  }
  CalibrationResult result;
  result.target = target;
  result.card_means = channel_means(image, white_square);
  for (int c = 0; c < 3; ++c) {
    if (!(result.card_means[c] >= kCardMeanFloor)) {
      throw Error(ErrorCode::under_floor,
                  "white-square mean " + std::to_string(result.card_means[c]) + " in channel " +
                      std::to_string(c) + " is below the floor; is the card visible?");
    }
  }
  if (mode == GainMode::per_channel) {
    for (int c = 0; c < 3; ++c) result.gains[c] = target / result.card_means[c];
  } else {
    const double mb = (result.card_means.r + result.card_means.g + result.card_means.b) / 3.0;
    result.gains = {target / mb, target / mb, target / mb};
  }
  return result;
}

RgbImage apply_gains(const RgbImage& image, const CalibrationResult& result) {
  return scale_channels(image, result.gains);
}

RgbImage scale_channels(const RgbImage& image, std::array<double, 3> factors) {
  RgbImage out = image;
  for (int c = 0; c < 3; ++c) {
    for (double& v : out.plane(c)) v *= factors[c];
  }
  return out;
}

}  // namespace pallor
