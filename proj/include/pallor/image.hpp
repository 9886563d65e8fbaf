#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace pallor {

enum class Channel : int { r = 0, g = 1, b = 2 };

/// Real-valued RGB raster with separate row-major planes and a top-left
/// origin. Samples are nominally in [0, 255] but are never clamped until export.
class RgbImage {
 public:
  RgbImage(int width, int height);
  RgbImage(int width, int height, std::array<double, 3> fill);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t pixel_count() const noexcept { return planes_[0].size(); }

  std::span<const double> plane(int c) const noexcept { return planes_[c]; }
  std::span<double> plane(int c) noexcept { return planes_[c]; }

  double at(int c, int x, int y) const noexcept { return planes_[c][index(x, y)]; }
  double& at(int c, int x, int y) noexcept { return planes_[c][index(x, y)]; }

  std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  void set_pixel(int x, int y, std::array<double, 3> rgb) noexcept;
  std::array<double, 3> pixel(int x, int y) const noexcept;

  bool all_finite() const noexcept;

  friend bool operator==(const RgbImage&, const RgbImage&) = default;

 private:
  int width_;
  int height_;
  std::array<std::vector<double>, 3> planes_;
};

struct Roi {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  bool fits(int width, int height) const noexcept {
    return x >= 0 && y >= 0 && w >= 1 && h >= 1 && x + w <= width && y + h <= height;
  }
  bool fits(const RgbImage& image) const noexcept { return fits(image.width(), image.height()); }
  long long area() const noexcept { return static_cast<long long>(w) * h; }

  friend bool operator==(const Roi&, const Roi&) = default;
};

/// Parses "x,y,w,h". Throws Error(invalid_argument) on anything else.
Roi parse_roi(std::string_view text);
std::string format_roi(const Roi& roi);

/// Binary mask with a cached popcount. Immutable once built.
class BinaryMask {
 public:
  BinaryMask(int width, int height);
  BinaryMask(int width, int height, std::vector<std::uint8_t> bits);

  static BinaryMask from_roi(int width, int height, const Roi& roi);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t popcount() const noexcept { return popcount_; }
  bool empty() const noexcept { return popcount_ == 0; }

  bool test(std::size_t i) const noexcept { return bits_[i] != 0; }
  bool test(int x, int y) const noexcept {
    return bits_[static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
                 static_cast<std::size_t>(x)] != 0;
  }
  std::span<const std::uint8_t> bits() const noexcept { return bits_; }

  BinaryMask complement() const;

  friend bool operator==(const BinaryMask& a, const BinaryMask& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ && a.bits_ == b.bits_;
  }

 private:
  int width_;
  int height_;
  std::vector<std::uint8_t> bits_;
  std::size_t popcount_ = 0;
};

struct ChannelMeans {
  double r = 0.0;
  double g = 0.0;
  double b = 0.0;

  double operator[](int c) const noexcept { return c == 0 ? r : (c == 1 ? g : b); }
};

ChannelMeans channel_means(const RgbImage& image, const Roi& region);
ChannelMeans channel_means(const RgbImage& image, const BinaryMask& region);

/// Copy of the pixels inside `roi`.
RgbImage crop(const RgbImage& image, const Roi& roi);

/// Bilinear resampling with pixel-center alignment (edge samples clamped).
RgbImage resize_bilinear(const RgbImage& image, int width, int height);
/// Nearest-neighbour resampling with pixel-center alignment.
RgbImage resize_nearest(const RgbImage& image, int width, int height);
BinaryMask resize_nearest(const BinaryMask& mask, int width, int height);

// Raster I/O. Binary PPM (P6, maxval 255) is read and written; PNG is read.

RgbImage load_image(const std::filesystem::path& path);
RgbImage decode_image(std::span<const std::uint8_t> bytes);
void save_image(const RgbImage& image, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_ppm(const RgbImage& image);

/// Export quantization: clamp to [0, 255], then round half-up.
std::uint8_t quantize_sample(double v) noexcept;

// Masks as 1-bit PBM (P4).
void save_mask(const BinaryMask& mask, const std::filesystem::path& path);
BinaryMask load_mask(const std::filesystem::path& path);

/// Runs of set pixels over row-major order as (start, length) pairs.
using MaskRuns = std::vector<std::pair<std::size_t, std::size_t>>;
MaskRuns encode_rle(const BinaryMask& mask);
BinaryMask decode_rle(int width, int height, const MaskRuns& runs);

}  // namespace pallor
