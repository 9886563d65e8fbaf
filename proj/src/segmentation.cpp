#include "pallor/segmentation.hpp"

#include <boost/multiprecision/cpp_int.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "pallor/detail/parallel.hpp"
#include "pallor/error.hpp"

namespace pallor {

namespace {

using boost::multiprecision::cpp_int;

std::array<double, 3> chromaticity(double r, double g, double b) {
  const double sum = r + g + b;
  if (!(sum > 0.0)) return {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  return {r / sum, g / sum, b / sum};
}

double median_of(std::vector<double> values) {
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2);
  std::nth_element(values.begin(), mid, values.end());
  return *mid;
}

// Largest 4-connected component of `keep`; ties go to the component whose
// first pixel comes first in row-major order.
std::vector<std::uint8_t> largest_component(const std::vector<std::uint8_t>& keep, int width, int height) {
  std::vector<int> label(keep.size(), -1);
  std::vector<std::size_t> sizes;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < keep.size(); ++start) {
    if (!keep[start] || label[start] >= 0) continue;
    const int id = static_cast<int>(sizes.size());
    std::size_t count = 0;
    stack.push_back(start);
    label[start] = id;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      ++count;
      const int x = static_cast<int>(i % static_cast<std::size_t>(width));
      const int y = static_cast<int>(i / static_cast<std::size_t>(width));
      const std::pair<int, int> nbrs[] = {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}};
      for (auto [nx, ny] : nbrs) {
        if (nx < 0 || ny < 0 || nx >= width || ny >= height) continue;
        const auto j = static_cast<std::size_t>(ny) * static_cast<std::size_t>(width) + static_cast<std::size_t>(nx);
        if (keep[j] && label[j] < 0) {
          label[j] = id;
          stack.push_back(j);
        }
      }
    }
    sizes.push_back(count);
  }
  std::vector<std::uint8_t> out(keep.size(), 0);
  if (sizes.empty()) return out;
  const int best = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  for (std::size_t i = 0; i < keep.size(); ++i) out[i] = label[i] == best;
  return out;
}

double luminance(const RgbImage& image, std::size_t i) {
  return (image.plane(0)[i] + image.plane(1)[i] + image.plane(2)[i]) / 3.0;
}

// Bilinear resize to resolution x resolution, channel-major, scaled by 1/255.
nn::Tensor unit_tensor(const RgbImage& image, std::size_t resolution) {
  const int r = static_cast<int>(resolution);
  const RgbImage small = resize_bilinear(image, r, r);
  nn::Tensor t({3, resolution, resolution});
  const std::size_t plane = resolution * resolution;
  for (int c = 0; c < 3; ++c) {
    const auto src = small.plane(c);
    for (std::size_t i = 0; i < plane; ++i) t[static_cast<std::size_t>(c) * plane + i] = src[i] / 255.0;
  }
  return t;
}

}  // namespace

std::string_view to_string(SegmenterKind kind) noexcept {
  return kind == SegmenterKind::cnn ? "cnn" : "classical";
}

SegmenterKind parse_segmenter(std::string_view name) {
  if (name == "cnn") return SegmenterKind::cnn;
  if (name == "classical") return SegmenterKind::classical;
  throw Error(ErrorCode::invalid_argument, "segmenter must be 'cnn' or 'classical', got '" + std::string(name) + "'");
}

SegmenterOutput classical_segment(const RgbImage& image, const ClassicalParams& params) {
  const std::size_t n = image.pixel_count();
  std::array<std::vector<double>, 3> chroma;
  for (auto& c : chroma) c.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ch = chromaticity(image.plane(0)[i], image.plane(1)[i], image.plane(2)[i]);
    for (int c = 0; c < 3; ++c) chroma[c][i] = ch[c];
  }
  std::array<double, 3> reference{};
  for (int c = 0; c < 3; ++c) {
    std::vector<double> border;
    for (int y = 0; y < image.height(); ++y) {
      for (int x = 0; x < image.width(); ++x) {
        if (y == 0 || x == 0 || y == image.height() - 1 || x == image.width() - 1) {
          border.push_back(chroma[c][image.index(x, y)]);
        }
      }
    }
    reference[c] = median_of(std::move(border));
  }

  constexpr double kNeutral = 1.0 / 3.0;
  double reference_tint = 0.0;
  for (int c = 0; c < 3; ++c) reference_tint += std::abs(reference[c] - kNeutral);
  const bool neutral_background = reference_tint < params.neutral_contrast;

  std::vector<std::uint8_t> keep(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = luminance(image, i);
    if (v < params.v_min || v > params.v_max) continue;
    double from_background = 0.0, from_neutral = 0.0;
    for (int c = 0; c < 3; ++c) {
      from_background += std::abs(chroma[c][i] - reference[c]);
      from_neutral += std::abs(chroma[c][i] - kNeutral);
    }
    keep[i] = from_neutral >= params.neutral_contrast &&
              (neutral_background || from_background >= params.min_contrast);
  }
  keep = largest_component(keep, image.width(), image.height());

  SegmenterOutput out{RgbImage(image.width(), image.height()), SegmenterKind::classical};
  for (int c = 0; c < 3; ++c) {
    auto dst = out.soft.plane(c);
    const auto src = image.plane(c);
    for (std::size_t i = 0; i < n; ++i) dst[i] = keep[i] ? std::clamp(src[i], 0.0, 255.0) : 0.0;
  }
  return out;
}

int luminance_bin(double luminance) noexcept {
  if (!(luminance > 0.0)) return 0;
  const double bin = std::floor(luminance / kHistogramBinWidth);
  return bin >= kHistogramBins - 1 ? kHistogramBins - 1 : static_cast<int>(bin);
}

std::pair<int, bool> otsu_threshold(std::span<const std::size_t, kHistogramBins> bins) {
  // Between-class variance for split t is proportional to
  //   (s0 * n1 - s1 * n0)^2 / (n0 * n1)
  // with n the class counts and s the class sums of bin indices. Candidates
  // are compared by cross-multiplication in exact integer arithmetic.
  cpp_int total_n = 0, total_s = 0;
  for (int k = 0; k < kHistogramBins; ++k) {
    total_n += bins[static_cast<std::size_t>(k)];
    total_s += cpp_int(bins[static_cast<std::size_t>(k)]) * k;
  }
  cpp_int n0 = 0, s0 = 0;
  cpp_int best_num = 0, best_den = 1;
  int best_t = 0;
  for (int t = 0; t < kHistogramBins; ++t) {
    n0 += bins[static_cast<std::size_t>(t)];
    s0 += cpp_int(bins[static_cast<std::size_t>(t)]) * t;
    const cpp_int n1 = total_n - n0;
    if (n0 == 0 || n1 == 0) continue;
    const cpp_int s1 = total_s - s0;
    const cpp_int diff = s0 * n1 - s1 * n0;
    const cpp_int num = diff * diff;
    const cpp_int den = n0 * n1;
    if (num * best_den > best_num * den) {
      best_num = num;
      best_den = den;
      best_t = t;
    }
  }
  return {best_t, best_num == 0};
}

std::pair<BinaryMask, MaskHistogram> to_mask(const SegmenterOutput& soft) {
  const RgbImage& image = soft.soft;
  const std::size_t n = image.pixel_count();
  MaskHistogram hist;
  std::vector<double> lum(n);
  for (std::size_t i = 0; i < n; ++i) {
    lum[i] = luminance(image, i);
    ++hist.bins[static_cast<std::size_t>(luminance_bin(lum[i]))];
  }
  const auto [t, degenerate] = otsu_threshold(hist.bins);
  hist.threshold_bin = t;
  hist.threshold_value = (t + 1) * kHistogramBinWidth;
  hist.degenerate = degenerate;
  const double cut = degenerate ? 0.0 : hist.threshold_value;
  std::vector<std::uint8_t> bits(n);
  for (std::size_t i = 0; i < n; ++i) bits[i] = lum[i] > cut;
  return {BinaryMask(image.width(), image.height(), std::move(bits)), hist};
}

double iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw Error(ErrorCode::dimension_mismatch, "IoU of masks with different dimensions");
  }
  std::size_t inter = 0, uni = 0;
  const auto ab = a.bits();
  const auto bb = b.bits();
  for (std::size_t i = 0; i < ab.size(); ++i) {
    inter += ab[i] & bb[i];
    uni += ab[i] | bb[i];
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

nn::NetworkSpec segnet_spec(const SegNetConfig& config) {
  if (config.levels < 1 || config.base_channels < 1) {
    throw Error(ErrorCode::invalid_argument, "segmenter needs levels >= 1 and base_channels >= 1");
  }
  if (config.resolution == 0 || config.resolution % (std::size_t{1} << config.levels) != 0) {
    throw Error(ErrorCode::invalid_argument, "segmenter resolution must be divisible by 2^levels");
  }
  auto channels_at = [&](std::size_t level) {
    return config.base_channels * (level == 0 ? 1 : 2);
  };
  nn::NetworkSpec spec;
  spec.input_shape = {3, config.resolution, config.resolution};
  spec.seed = config.seed;
  std::size_t ch = 3;
  for (std::size_t i = 0; i < config.levels; ++i) {
    const std::size_t out = channels_at(i);
    spec.layers.emplace_back(nn::Conv2d{ch, out, 3, 2, 1});
    spec.layers.emplace_back(nn::ActivationLayer{nn::Activation::relu});
    ch = out;
  }
  spec.layers.emplace_back(nn::Conv2d{ch, ch, 3, 1, 1});
  spec.layers.emplace_back(nn::ActivationLayer{nn::Activation::relu});
  for (std::size_t i = config.levels; i-- > 0;) {
    const bool last = i == 0;
    const std::size_t out = last ? 3 : channels_at(i - 1);
    spec.layers.emplace_back(nn::Upsample2x{});
    spec.layers.emplace_back(nn::Conv2d{ch, out, 3, 1, 1});
    spec.layers.emplace_back(nn::ActivationLayer{last ? nn::Activation::sigmoid : nn::Activation::relu});
    ch = out;
  }
  return spec;
}

nn::Tensor segnet_input(const RgbImage& calibrated, std::size_t resolution) {
  nn::Tensor t = unit_tensor(calibrated, resolution);
  for (double& v : t.data()) v = (v - 0.5) * 4.0;
  return t;
}

nn::Tensor segnet_target(const RgbImage& calibrated, const BinaryMask& truth, std::size_t resolution) {
  if (truth.width() != calibrated.width() || truth.height() != calibrated.height()) {
    throw Error(ErrorCode::dimension_mismatch, "ground-truth mask and image dimensions differ");
  }
  RgbImage masked = calibrated;
  for (int c = 0; c < 3; ++c) {
    auto p = masked.plane(c);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!truth.test(i)) p[i] = 0.0;
    }
  }
  nn::Tensor t = unit_tensor(masked, resolution);
  for (double& v : t.data()) v = std::clamp(v, 0.0, 1.0);
  return t;
}

SegmenterOutput cnn_segment(const RgbImage& calibrated, const nn::Network& model) {
  const auto& in = model.input_shape();
  const auto& out = model.output_shape();
  if (in.size() != 3 || in[0] != 3 || in[1] != in[2] || out != in) {
    throw Error(ErrorCode::dimension_mismatch,
                "segmenter network must map (3,R,R) to (3,R,R), got " + nn::to_string(in) + " -> " +
                    nn::to_string(out));
  }
  const std::size_t res = in[1];
  const nn::Tensor y = nn::forward(model, segnet_input(calibrated, res));
  const int r = static_cast<int>(res);
  RgbImage small(r, r);
  const std::size_t plane = res * res;
  for (int c = 0; c < 3; ++c) {
    auto dst = small.plane(c);
    for (std::size_t i = 0; i < plane; ++i) {
      dst[i] = std::clamp(y[static_cast<std::size_t>(c) * plane + i] * 255.0, 0.0, 255.0);
    }
  }
  return {resize_nearest(small, calibrated.width(), calibrated.height()), SegmenterKind::cnn};
}

double median_iou(const nn::Network& model, std::span<const SegmenterExample> samples) {
  if (samples.empty()) throw Error(ErrorCode::dataset_too_small, "median IoU needs at least one sample");
  std::vector<double> scores(samples.size());
  detail::parallel_for(samples.size(), [&](std::size_t i) {
    scores[i] = iou(to_mask(cnn_segment(samples[i].calibrated, model)).first, samples[i].truth);
  });
  std::sort(scores.begin(), scores.end());
  const std::size_t n = scores.size();
  return n % 2 == 1 ? scores[n / 2] : 0.5 * (scores[n / 2 - 1] + scores[n / 2]);
}

SegmenterTraining train_segmenter(std::span<const SegmenterExample> train, std::span<const SegmenterExample> heldout,
                                  const SegNetConfig& net_config, const nn::TrainingConfig& config,
                                  const SegmenterProgress& progress) {
  nn::validate(config);
  if (train.empty()) throw Error(ErrorCode::dataset_too_small, "segmenter needs at least one training sample");
  nn::Network net(segnet_spec(net_config));
  std::vector<nn::Example> examples(train.size());
  detail::parallel_for(train.size(), [&](std::size_t i) {
    examples[i] = {segnet_input(train[i].calibrated, net_config.resolution),
                   segnet_target(train[i].calibrated, train[i].truth, net_config.resolution)};
  });

  SegmenterTraining result{net, {}, {}};
  double best = -1.0;
  result.train_loss = nn::train(net, examples, config, [&](int epoch, double loss) {
    double score = std::numeric_limits<double>::quiet_NaN();
    if (!heldout.empty()) {
      score = median_iou(net, heldout);
      result.heldout_iou.push_back(score);
      if (score > best) {
        best = score;
        result.model = net;
      }
    }
    if (progress) progress(epoch, loss, score);
    return true;
  });
  if (heldout.empty()) result.model = net;
  return result;
}

}  // namespace pallor
