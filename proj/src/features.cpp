#include "pallor/features.hpp"

#include <cmath>
#include <string>

#include "pallor/error.hpp"

namespace pallor {

double erythema_index(double mean_r, double mean_g) {
  if (!(mean_r >= kBrightnessFloor) || !(mean_g >= kBrightnessFloor) || !std::isfinite(mean_r) ||
      !std::isfinite(mean_g)) {
    throw Error(ErrorCode::under_floor, "conjunctiva brightness below floor (R=" +
                                            std::to_string(mean_r) + ", G=" +
                                            std::to_string(mean_g) + ")");
  }
  return std::log10(mean_r) - std::log10(mean_g);
}

FeatureVector extract_features(const RgbImage& calibrated, const BinaryMask& mask,
                               std::size_t min_area) {
  if (mask.popcount() < min_area || mask.empty()) {
    throw Error(ErrorCode::mask_too_small, "segmentation failed: mask has " +
                                               std::to_string(mask.popcount()) +
                                               " px, need at least " + std::to_string(min_area));
  }
  const auto means = channel_means(calibrated, mask);
  FeatureVector f;
  f.mean_r = means.r;
  f.mean_g = means.g;
  f.ei = erythema_index(means.r, means.g);
  f.mask_area = mask.popcount();
  return f;
}

}  // namespace pallor
