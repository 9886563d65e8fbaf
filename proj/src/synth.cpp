#include "pallor/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <string>

#include "pallor/calibration.hpp"
#include "pallor/detail/parallel.hpp"
#include "pallor/error.hpp"
#include "pallor/manifest.hpp"
#include "pallor/random.hpp"

namespace pallor::synth {

namespace {

struct CardLayout {
  Roi body;
  Roi white;
};

CardLayout card_layout(int width, int height) {
  const int side = std::max(4, static_cast<int>(std::lround(std::min(width, height) * 0.1)));
  const int border = std::max(2, side / 3);
  const int margin = std::max(2, std::min(width, height) / 32);
  const int body = side + 2 * border;
  return {{margin, margin, body, body}, {margin + border, margin + border, side, side}};
}

struct Ellipse {
  double cx, cy, a, b;

  bool contains(int x, int y) const noexcept {
    const double dx = (x + 0.5 - cx) / a;
    const double dy = (y + 0.5 - cy) / b;
    return dx * dx + dy * dy <= 1.0;
  }
};

bool overlaps(const Ellipse& e, const Roi& r, double pad) {
  return e.cx + e.a + pad > r.x && e.cx - e.a - pad < r.x + r.w && e.cy + e.b + pad > r.y &&
         e.cy - e.b - pad < r.y + r.h;
}

Ellipse place_ellipse(Rng& rng, const SynthConfig& config, const Roi& card_body) {
  const double area = rng.uniform(0.02, 0.08) * config.width * config.height;
  const double ratio = rng.uniform(1.3, 2.2);
  double b = std::sqrt(area / (std::numbers::pi * ratio));
  double a = ratio * b;
  // Keep the ellipse inside the frame even for extreme aspect ratios.
  const double fit = std::min({1.0, (config.width / 2.0 - 1.0) / a, (config.height / 2.0 - 1.0) / b});
  a *= fit;
  b *= fit;
  Ellipse e{config.width / 2.0, config.height / 2.0, a, b};
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const Ellipse candidate{rng.uniform(a + 1.0, config.width - a - 1.0), rng.uniform(b + 1.0, config.height - b - 1.0),
                            a, b};
    if (!overlaps(candidate, card_body, 2.0)) return candidate;
  }
  return e;
}

std::string sample_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu", index);
  return buf;
}

}  // namespace

double true_ei(double hb) noexcept { return kEiIntercept + kEiSlope * hb; }

double conjunctiva_red(double hb) noexcept { return kConjunctivaGreen * std::pow(10.0, true_ei(hb)); }

double hb_from_ei(double ei) noexcept { return (ei - kEiIntercept) / kEiSlope; }

void validate(const SynthConfig& config) {
  if (!(config.hb_min <= config.hb_max)) throw Error(ErrorCode::invalid_argument, "hb_min must not exceed hb_max");
  if (!(config.noise_sigma >= 0.0)) throw Error(ErrorCode::invalid_argument, "noise_sigma must be >= 0");
  if (!(config.gain_min > 0.0) || !(config.gain_min <= config.gain_max)) {
    throw Error(ErrorCode::invalid_argument, "illumination gains must be positive with gain_min <= gain_max");
  }
  if (config.width < 32 || config.height < 32) {
    throw Error(ErrorCode::invalid_argument, "synthetic images must be at least 32x32");
  }
}

Roi card_roi(int width, int height) { return card_layout(width, height).white; }

SynthSample generate_sample(double hb, const SynthConfig& config, std::uint64_t seed) {
  validate(config);
  if (!(hb >= config.hb_min && hb <= config.hb_max)) {
    throw Error(ErrorCode::invalid_argument, "hb " + format_number(hb) + " outside [" + format_number(config.hb_min) +
                                                 ", " + format_number(config.hb_max) + "]");
  }
  Rng rng(seed);
  const CardLayout card = card_layout(config.width, config.height);
  const Ellipse ellipse = place_ellipse(rng, config, card.body);

  RgbImage image(config.width, config.height, kSkin);
  std::vector<std::uint8_t> truth(image.pixel_count(), 0);
  const std::array<double, 3> conjunctiva{conjunctiva_red(hb), kConjunctivaGreen, kConjunctivaBlue};
  for (int y = 0; y < config.height; ++y) {
    for (int x = 0; x < config.width; ++x) {
      if (ellipse.contains(x, y)) {
        image.set_pixel(x, y, conjunctiva);
        truth[image.index(x, y)] = 1;
      }
    }
  }
  auto fill = [&](const Roi& r, std::array<double, 3> rgb) {
    for (int y = r.y; y < r.y + r.h; ++y) {
      for (int x = r.x; x < r.x + r.w; ++x) image.set_pixel(x, y, rgb);
    }
  };
  fill(card.body, kCardBody);
  fill(card.white, {kCardWhite, kCardWhite, kCardWhite});

  if (config.noise_sigma > 0.0) {
    for (int y = 0; y < config.height; ++y) {
      for (int x = 0; x < config.width; ++x) {
        const bool white = x >= card.white.x && x < card.white.x + card.white.w && y >= card.white.y &&
                           y < card.white.y + card.white.h;
        if (white) continue;
        for (int c = 0; c < 3; ++c) image.at(c, x, y) += rng.normal(0.0, config.noise_sigma);
      }
    }
  }

  SynthSample sample{std::move(image), BinaryMask(config.width, config.height, std::move(truth)), card.white, hb,
                     true_ei(hb)};
  for (double& g : sample.illumination) g = rng.uniform(config.gain_min, config.gain_max);
  sample.image = scale_channels(sample.image, sample.illumination);
  return sample;
}

SynthSample dataset_sample(const SynthConfig& config, std::size_t index) {
  Rng rng = Rng::substream(config.seed, index);
  const double hb = config.hb_min == config.hb_max ? config.hb_min : rng.uniform(config.hb_min, config.hb_max);
  return generate_sample(hb, config, rng.next());
}

void generate_dataset(const SynthConfig& config, const std::filesystem::path& out_dir) {
  validate(config);
  if (config.n_samples < 1) throw Error(ErrorCode::invalid_argument, "n_samples must be >= 1");
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  std::filesystem::create_directories(out_dir / "masks", ec);
  if (ec) throw Error(ErrorCode::unwritable_path, "cannot create dataset directory " + out_dir.string());

  std::vector<ManifestRow> rows(config.n_samples);
  detail::parallel_for(config.n_samples, [&](std::size_t i) {
    const SynthSample s = dataset_sample(config, i);
    const auto name = sample_name(i);
    ManifestRow& row = rows[i];
    row.image_path = out_dir / "images" / (name + ".ppm");
    row.mask_path = out_dir / "masks" / (name + ".pbm");
    row.card = s.card_roi;
    row.gold_hb = s.gold_hb;
    row.gold_ei = s.true_ei;
    save_image(s.image, row.image_path);
    save_mask(s.mask_gt, *row.mask_path);
  });
  write_manifest(out_dir / "manifest.csv", rows);
}

nn::Network oracle_regressor() {
  nn::NetworkSpec spec;
  spec.input_shape = {3};
  spec.layers = {nn::Dense{3, 1}};
  nn::Network net(spec);
  net.params()[0].weights = {0.0, 0.0, 1.0 / kEiSlope};
  net.params()[0].biases = {-kEiIntercept / kEiSlope};
  return net;
}

}  // namespace pallor::synth
