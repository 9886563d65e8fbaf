#pragma once

#include <cstddef>

#include "pallor/image.hpp"

namespace pallor {

/// Below this brightness a conjunctiva region is treated as a capture failure.
inline constexpr double kBrightnessFloor = 1.0;
inline constexpr std::size_t kDefaultMinMaskArea = 50;

/// Erythema index of region-mean brightness: log10(R) - log10(G).
double erythema_index(double mean_r, double mean_g);

struct FeatureVector {
  double mean_r = 0.0;
  double mean_g = 0.0;
  double ei = 0.0;
  std::size_t mask_area = 0;

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

/// Mean red/green over the mask and their erythema index. Throws
/// Error(mask_too_small) when the mask holds fewer than `min_area` pixels.
FeatureVector extract_features(const RgbImage& calibrated, const BinaryMask& mask,
                               std::size_t min_area = kDefaultMinMaskArea);

}  // namespace pallor
