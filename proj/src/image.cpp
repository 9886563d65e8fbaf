#include "pallor/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "pallor/error.hpp"

namespace pallor {

namespace {

void require_dims(int width, int height) {
  if (width < 1 || height < 1) {
    throw Error(ErrorCode::invalid_argument,
                "image dimensions must be positive, got " + std::to_string(width) + "x" +
                    std::to_string(height));
  }
}

// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double v) noexcept {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw Error(ErrorCode::missing_file, "no such file: " + path.string());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::missing_file, "cannot open: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::unwritable_path, "cannot write: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::unwritable_path, "write failed: " + path.string());
}

// Netpbm header reader: magic, then whitespace/comment separated integers,
// then exactly one whitespace byte before the raster.
class PnmHeader {
 public:
  explicit PnmHeader(std::span<const std::uint8_t> bytes) : bytes_(bytes), pos_(2) {}

  int next_int() {
    skip_space_and_comments();
    int value = 0;
    const auto* first = reinterpret_cast<const char*>(bytes_.data()) + pos_;
    const auto* last = reinterpret_cast<const char*>(bytes_.data()) + bytes_.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr == first) {
      throw Error(ErrorCode::corrupt_header, "malformed netpbm header");
    }
    pos_ += static_cast<std::size_t>(ptr - first);
    return value;
  }

  std::size_t raster_offset() {
    if (pos_ >= bytes_.size() || !is_space(bytes_[pos_])) {
      throw Error(ErrorCode::corrupt_header, "missing separator before raster");
    }
    return pos_ + 1;
  }

 private:
  static bool is_space(std::uint8_t c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
  }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (is_space(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        return;
      }
    }
    throw Error(ErrorCode::corrupt_header, "netpbm header ends early");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_;
};

RgbImage decode_ppm(std::span<const std::uint8_t> bytes) {
  PnmHeader header(bytes);
  const int width = header.next_int();
  const int height = header.next_int();
  const int maxval = header.next_int();
  if (width < 1 || height < 1) throw Error(ErrorCode::corrupt_header, "non-positive PPM dimensions");
  if (maxval < 1 || maxval > 65535) throw Error(ErrorCode::corrupt_header, "invalid PPM maxval");
  if (maxval != 255) {
    throw Error(ErrorCode::unsupported_format, "only maxval 255 PPM is supported");
  }
  const std::size_t offset = header.raster_offset();
  const std::size_t need = static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3;
  if (bytes.size() - offset < need) {
    throw Error(ErrorCode::truncated_data, "PPM raster is truncated");
  }
  RgbImage image(width, height);
  const auto* p = bytes.data() + offset;
  for (std::size_t i = 0; i < image.pixel_count(); ++i) {
    for (int c = 0; c < 3; ++c) image.plane(c)[i] = p[3 * i + static_cast<std::size_t>(c)];
  }
  return image;
}

RgbImage decode_png(std::span<const std::uint8_t> bytes) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    throw Error(ErrorCode::corrupt_header, std::string("PNG: ") + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> raster(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, raster.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw Error(ErrorCode::truncated_data, "PNG: " + msg);
  }
  RgbImage image(static_cast<int>(png.width), static_cast<int>(png.height));
  for (std::size_t i = 0; i < image.pixel_count(); ++i) {
    for (int c = 0; c < 3; ++c) image.plane(c)[i] = raster[3 * i + static_cast<std::size_t>(c)];
  }
  return image;
}

}  // namespace

RgbImage::RgbImage(int width, int height) : RgbImage(width, height, {0.0, 0.0, 0.0}) {}

RgbImage::RgbImage(int width, int height, std::array<double, 3> fill)
    : width_(width), height_(height) {
  require_dims(width, height);
  const auto n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  for (int c = 0; c < 3; ++c) planes_[c].assign(n, fill[c]);
}

void RgbImage::set_pixel(int x, int y, std::array<double, 3> rgb) noexcept {
  const auto i = index(x, y);
  for (int c = 0; c < 3; ++c) planes_[c][i] = rgb[c];
}

std::array<double, 3> RgbImage::pixel(int x, int y) const noexcept {
  const auto i = index(x, y);
  return {planes_[0][i], planes_[1][i], planes_[2][i]};
}

bool RgbImage::all_finite() const noexcept {
  for (const auto& p : planes_) {
    if (!std::all_of(p.begin(), p.end(), [](double v) { return std::isfinite(v); })) return false;
  }
  return true;
}

Roi parse_roi(std::string_view text) {
  Roi roi;
  int* fields[] = {&roi.x, &roi.y, &roi.w, &roi.h};
  std::size_t pos = 0;
  for (int i = 0; i < 4; ++i) {
    const auto end = (i < 3) ? text.find(',', pos) : text.size();
    if (end == std::string_view::npos) {
      throw Error(ErrorCode::invalid_argument, "ROI must be x,y,w,h: '" + std::string(text) + "'");
    }
    auto token = text.substr(pos, end - pos);
    while (!token.empty() && std::isspace(static_cast<unsigned char>(token.front()))) token.remove_prefix(1);
    while (!token.empty() && std::isspace(static_cast<unsigned char>(token.back()))) token.remove_suffix(1);
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), *fields[i]);
    if (ec != std::errc{} || ptr != token.data() + token.size() || token.empty()) {
      throw Error(ErrorCode::invalid_argument, "ROI must be x,y,w,h: '" + std::string(text) + "'");
    }
    pos = end + 1;
  }
  return roi;
}

std::string format_roi(const Roi& roi) {
  std::ostringstream os;
  os << roi.x << ',' << roi.y << ',' << roi.w << ',' << roi.h;
  return os.str();
}

BinaryMask::BinaryMask(int width, int height)
    : BinaryMask(width, height,
                 std::vector<std::uint8_t>(static_cast<std::size_t>(std::max(width, 0)) *
                                           static_cast<std::size_t>(std::max(height, 0)))) {}

BinaryMask::BinaryMask(int width, int height, std::vector<std::uint8_t> bits)
    : width_(width), height_(height), bits_(std::move(bits)) {
  require_dims(width, height);
  if (bits_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw Error(ErrorCode::dimension_mismatch, "mask bit count does not match dimensions");
  }
  for (auto& b : bits_) {
    b = b ? 1 : 0;
    popcount_ += b;
  }
}

BinaryMask BinaryMask::from_roi(int width, int height, const Roi& roi) {
  if (!roi.fits(width, height)) throw Error(ErrorCode::out_of_bounds, "ROI outside mask bounds");
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(width) * static_cast<std::size_t>(height));
  for (int y = roi.y; y < roi.y + roi.h; ++y) {
    for (int x = roi.x; x < roi.x + roi.w; ++x) bits[static_cast<std::size_t>(y) * width + x] = 1;
  }
  return BinaryMask(width, height, std::move(bits));
}

BinaryMask BinaryMask::complement() const {
  std::vector<std::uint8_t> bits(bits_.size());
  std::transform(bits_.begin(), bits_.end(), bits.begin(), [](std::uint8_t b) { return b ? 0 : 1; });
  return BinaryMask(width_, height_, std::move(bits));
}

ChannelMeans channel_means(const RgbImage& image, const Roi& region) {
  if (region.w < 1 || region.h < 1) throw Error(ErrorCode::empty_region, "empty ROI");
  if (!region.fits(image)) throw Error(ErrorCode::out_of_bounds, "ROI outside image bounds");
  std::array<CompensatedSum, 3> sums;
  for (int y = region.y; y < region.y + region.h; ++y) {
    for (int x = region.x; x < region.x + region.w; ++x) {
      const auto i = image.index(x, y);
      for (int c = 0; c < 3; ++c) sums[c].add(image.plane(c)[i]);
    }
  }
  const auto n = static_cast<double>(region.area());
  return {sums[0].value() / n, sums[1].value() / n, sums[2].value() / n};
}

ChannelMeans channel_means(const RgbImage& image, const BinaryMask& region) {
  if (region.width() != image.width() || region.height() != image.height()) {
    throw Error(ErrorCode::dimension_mismatch, "mask and image dimensions differ");
  }
  if (region.empty()) throw Error(ErrorCode::empty_region, "empty mask");
  std::array<CompensatedSum, 3> sums;
  for (std::size_t i = 0; i < image.pixel_count(); ++i) {
    if (!region.test(i)) continue;
    for (int c = 0; c < 3; ++c) sums[c].add(image.plane(c)[i]);
  }
  const auto n = static_cast<double>(region.popcount());
  return {sums[0].value() / n, sums[1].value() / n, sums[2].value() / n};
}

RgbImage crop(const RgbImage& image, const Roi& roi) {
  if (!roi.fits(image)) throw Error(ErrorCode::out_of_bounds, "crop ROI " + format_roi(roi) + " outside image");
  RgbImage out(roi.w, roi.h);
  for (int y = 0; y < roi.h; ++y) {
    for (int x = 0; x < roi.w; ++x) out.set_pixel(x, y, image.pixel(roi.x + x, roi.y + y));
  }
  return out;
}

namespace {

// Source coordinate of destination pixel center i when mapping n_src -> n_dst.
double source_center(int i, int n_src, int n_dst) {
  return (i + 0.5) * static_cast<double>(n_src) / static_cast<double>(n_dst) - 0.5;
}

int nearest_index(int i, int n_src, int n_dst) {
  const auto s = static_cast<int>(std::floor((i + 0.5) * static_cast<double>(n_src) / n_dst));
  return std::clamp(s, 0, n_src - 1);
}

}  // namespace

RgbImage resize_bilinear(const RgbImage& image, int width, int height) {
  require_dims(width, height);
  RgbImage out(width, height);
  for (int y = 0; y < height; ++y) {
    const double sy = std::clamp(source_center(y, image.height(), height), 0.0, image.height() - 1.0);
    const int y0 = static_cast<int>(std::floor(sy));
    const int y1 = std::min(y0 + 1, image.height() - 1);
    const double fy = sy - y0;
    for (int x = 0; x < width; ++x) {
      const double sx = std::clamp(source_center(x, image.width(), width), 0.0, image.width() - 1.0);
      const int x0 = static_cast<int>(std::floor(sx));
      const int x1 = std::min(x0 + 1, image.width() - 1);
      const double fx = sx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = image.at(c, x0, y0) * (1.0 - fx) + image.at(c, x1, y0) * fx;
        const double bottom = image.at(c, x0, y1) * (1.0 - fx) + image.at(c, x1, y1) * fx;
        out.at(c, x, y) = top * (1.0 - fy) + bottom * fy;
      }
    }
  }
  return out;
}

RgbImage resize_nearest(const RgbImage& image, int width, int height) {
  require_dims(width, height);
  RgbImage out(width, height);
  for (int y = 0; y < height; ++y) {
    const int sy = nearest_index(y, image.height(), height);
    for (int x = 0; x < width; ++x) out.set_pixel(x, y, image.pixel(nearest_index(x, image.width(), width), sy));
  }
  return out;
}

BinaryMask resize_nearest(const BinaryMask& mask, int width, int height) {
  require_dims(width, height);
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(width) * static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) {
    const int sy = nearest_index(y, mask.height(), height);
    for (int x = 0; x < width; ++x) {
      bits[static_cast<std::size_t>(y) * width + x] = mask.test(nearest_index(x, mask.width(), width), sy);
    }
  }
  return BinaryMask(width, height, std::move(bits));
}

RgbImage load_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return decode_image(bytes);
}

RgbImage decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) {
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') {
      throw Error(ErrorCode::corrupt_header, "PPM header is truncated");
    }
    throw Error(ErrorCode::corrupt_header, "file too short to hold an image header");
  }
  if (bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes);
  static constexpr std::uint8_t png_sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  if (std::equal(std::begin(png_sig), std::end(png_sig), bytes.begin())) return decode_png(bytes);
  throw Error(ErrorCode::unsupported_format, "not a binary PPM (P6) or PNG file");
}

std::uint8_t quantize_sample(double v) noexcept {
  if (!(v > 0.0)) return 0;
  if (v >= 255.0) return 255;
  return static_cast<std::uint8_t>(std::floor(v + 0.5));
}

std::vector<std::uint8_t> encode_ppm(const RgbImage& image) {
  const std::string header = "P6\n" + std::to_string(image.width()) + " " +
                             std::to_string(image.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + image.pixel_count() * 3);
  for (std::size_t i = 0; i < image.pixel_count(); ++i) {
    for (int c = 0; c < 3; ++c) out.push_back(quantize_sample(image.plane(c)[i]));
  }
  return out;
}

void save_image(const RgbImage& image, const std::filesystem::path& path) {
  write_file(path, encode_ppm(image));
}

void save_mask(const BinaryMask& mask, const std::filesystem::path& path) {
  const std::string header =
      "P4\n" + std::to_string(mask.width()) + " " + std::to_string(mask.height()) + "\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const auto row_bytes = static_cast<std::size_t>((mask.width() + 7) / 8);
  for (int y = 0; y < mask.height(); ++y) {
    std::vector<std::uint8_t> row(row_bytes, 0);
    for (int x = 0; x < mask.width(); ++x) {
      if (mask.test(x, y)) row[static_cast<std::size_t>(x / 8)] |= static_cast<std::uint8_t>(0x80 >> (x % 8));
    }
    out.insert(out.end(), row.begin(), row.end());
  }
  write_file(path, out);
}

BinaryMask load_mask(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < 2) throw Error(ErrorCode::corrupt_header, "PBM header is truncated");
  if (bytes[0] != 'P' || bytes[1] != '4') {
    throw Error(ErrorCode::unsupported_format, "not a binary PBM (P4) file");
  }
  PnmHeader header(bytes);
  const int width = header.next_int();
  const int height = header.next_int();
  if (width < 1 || height < 1) throw Error(ErrorCode::corrupt_header, "non-positive PBM dimensions");
  const std::size_t offset = header.raster_offset();
  const auto row_bytes = static_cast<std::size_t>((width + 7) / 8);
  if (bytes.size() - offset < row_bytes * static_cast<std::size_t>(height)) {
    throw Error(ErrorCode::truncated_data, "PBM raster is truncated");
  }
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(width) * static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) {
    const auto* row = bytes.data() + offset + row_bytes * static_cast<std::size_t>(y);
    for (int x = 0; x < width; ++x) {
      bits[static_cast<std::size_t>(y) * width + x] = (row[x / 8] >> (7 - x % 8)) & 1;
    }
  }
  return BinaryMask(width, height, std::move(bits));
}

MaskRuns encode_rle(const BinaryMask& mask) {
  MaskRuns runs;
  const auto bits = mask.bits();
  std::size_t i = 0;
  while (i < bits.size()) {
    if (!bits[i]) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    while (i < bits.size() && bits[i]) ++i;
    runs.emplace_back(start, i - start);
  }
  return runs;
}

BinaryMask decode_rle(int width, int height, const MaskRuns& runs) {
  require_dims(width, height);
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(width) * static_cast<std::size_t>(height));
  for (const auto& [start, length] : runs) {
    if (start > bits.size() || length > bits.size() - start) {
      throw Error(ErrorCode::out_of_bounds, "RLE run exceeds mask size");
    }
    std::fill_n(bits.begin() + static_cast<std::ptrdiff_t>(start), length, std::uint8_t{1});
  }
  return BinaryMask(width, height, std::move(bits));
}

}  // namespace pallor
