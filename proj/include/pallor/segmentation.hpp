#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "pallor/image.hpp"
#include "pallor/nn.hpp"

namespace pallor {

enum class SegmenterKind { cnn, classical };

std::string_view to_string(SegmenterKind kind) noexcept;
SegmenterKind parse_segmenter(std::string_view name);

/// Three-channel "segmented conjunctiva" image in [0, 255], same size as the input.
struct SegmenterOutput {
  RgbImage soft;
  SegmenterKind source = SegmenterKind::classical;
};

// ---------------------------------------------------------------------------
// Classical segmenter

struct ClassicalParams {
  /// Minimum L1 distance between a pixel's chromaticity (R,G,B)/(R+G+B) and
  /// the background, the median chromaticity of the image's border pixels.
  double min_contrast = 0.035;
  /// Minimum L1 chromaticity distance from neutral gray. A background closer
  /// than this to neutral is treated as neutral and only this test applies.
  double neutral_contrast = 0.01;
  /// Gate on (R+G+B)/3.
  double v_min = 40.0;
  double v_max = 250.0;
};

/// Keeps pixels that are chromatically distinct from the dominant background
/// and from neutral gray and inside the brightness gate, then only the
/// largest 4-connected component. Everything else is zeroed. Black pixels
/// count as neutral gray, so segmenting an output again keeps the same pixels.
SegmenterOutput classical_segment(const RgbImage& image, const ClassicalParams& params = {});

// ---------------------------------------------------------------------------
// Histogram thresholding

inline constexpr int kHistogramBins = 128;
inline constexpr double kHistogramBinWidth = 2.0;

struct MaskHistogram {
  std::array<std::size_t, kHistogramBins> bins{};
  int threshold_bin = 0;
  /// (threshold_bin + 1) * bin width.
  double threshold_value = kHistogramBinWidth;
  /// All mass in one bin; the mask is then (L > 0).
  bool degenerate = false;
};

/// Luminance (R+G+B)/3 mapped to one of 128 bins of width 2 over [0, 255].
int luminance_bin(double luminance) noexcept;

/// Otsu's threshold over the bins: class 0 is bins [0, t], class 1 the rest.
/// Maximizes between-class variance exactly; ties resolve to the lowest t.
/// Returns {t, degenerate}.
std::pair<int, bool> otsu_threshold(std::span<const std::size_t, kHistogramBins> bins);

/// Mask = L > threshold_value, or L > 0 for a degenerate histogram.
std::pair<BinaryMask, MaskHistogram> to_mask(const SegmenterOutput& soft);

/// |a & b| / |a | b|; 1 when both are empty.
double iou(const BinaryMask& a, const BinaryMask& b);

// ---------------------------------------------------------------------------
// Convolutional segmenter

struct SegNetConfig {
  /// Square working resolution; must be divisible by 2^levels.
  std::size_t resolution = 128;
  /// Downsampling stages. Learnable layers = 2 * levels + 1 (7 by default).
  std::size_t levels = 3;
  std::size_t base_channels = 8;
  std::uint64_t seed = 0;
};

/// Encoder-decoder: `levels` stride-2 3x3 convolutions, one 3x3 bottleneck,
/// `levels` (upsample2x + 3x3 convolution) stages; relu inside, sigmoid out.
nn::NetworkSpec segnet_spec(const SegNetConfig& config);

/// Bilinear resize to the network's resolution, scaled to [-2, 2].
nn::Tensor segnet_input(const RgbImage& calibrated, std::size_t resolution);

/// Training target: the input with non-conjunctiva pixels zeroed, at the
/// network resolution, scaled to [0, 1].
nn::Tensor segnet_target(const RgbImage& calibrated, const BinaryMask& truth, std::size_t resolution);

/// Forward pass at the network resolution; output scaled to [0, 255] and
/// upsampled back to the input size by nearest neighbour.
SegmenterOutput cnn_segment(const RgbImage& calibrated, const nn::Network& model);

struct SegmenterExample {
  RgbImage calibrated;
  BinaryMask truth;
};

/// Median over `samples` of iou(to_mask(cnn_segment(image)), truth).
double median_iou(const nn::Network& model, std::span<const SegmenterExample> samples);

struct SegmenterTraining {
  nn::Network model;
  std::vector<double> train_loss;  ///< per epoch
  std::vector<double> heldout_iou;  ///< median IoU per epoch; empty without a held-out set
};

/// Called after every epoch with (epoch, training loss, held-out median IoU or NaN).
using SegmenterProgress = std::function<void(int, double, double)>;

/// MSE training towards segnet_target. With a held-out set, returns the
/// weights of the epoch with the best median IoU; otherwise the last epoch.
SegmenterTraining train_segmenter(std::span<const SegmenterExample> train, std::span<const SegmenterExample> heldout,
                                  const SegNetConfig& net_config, const nn::TrainingConfig& config,
                                  const SegmenterProgress& progress = {});

}  // namespace pallor
