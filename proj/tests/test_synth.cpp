#include <cmath>

#include "pallor/calibration.hpp"
#include "pallor/features.hpp"
#include "pallor/manifest.hpp"
#include "pallor/random.hpp"
#include "pallor/segmentation.hpp"
#include "pallor/synth.hpp"
#include "test_util.hpp"

namespace pallor::synth {
namespace {

using pallor::testing::fresh_dir;
using pallor::testing::read_bytes;

SynthConfig clean_config(int size = 128) {
  SynthConfig config;
  config.noise_sigma = 0.0;
  config.gain_min = config.gain_max = 1.0;
  config.width = config.height = size;
  return config;
}

TEST(GroundTruth, ColorMap) {
  EXPECT_NEAR(true_ei(12.0), 0.3, 1e-15);
  EXPECT_NEAR(conjunctiva_red(12.0), 159.62, 0.005);
  EXPECT_EQ(true_ei(9.0), 0.0);
  EXPECT_EQ(conjunctiva_red(9.0), 80.0);
  EXPECT_NEAR(hb_from_ei(true_ei(10.7)), 10.7, 1e-12);
  for (double hb = 7.0; hb < 14.0; hb += 0.01) EXPECT_LT(conjunctiva_red(hb), conjunctiva_red(hb + 0.01));
}

TEST(GenerateSample, PaintsTheStatedColors) {
  const auto s = generate_sample(9.0, clean_config(), 3);
  EXPECT_EQ(s.gold_hb, 9.0);
  EXPECT_EQ(s.true_ei, 0.0);
  bool seen_conjunctiva = false;
  for (int y = 0; y < 128; ++y) {
    for (int x = 0; x < 128; ++x) {
      if (s.mask_gt.test(x, y)) {
        ASSERT_EQ(s.image.pixel(x, y), (std::array<double, 3>{80.0, 80.0, 90.0}));
        seen_conjunctiva = true;
      }
    }
  }
  EXPECT_TRUE(seen_conjunctiva);
  EXPECT_EQ(channel_means(s.image, s.card_roi).r, 200.0);
}

TEST(GenerateSample, MaskIsExactlyThePaintedPixels) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = generate_sample(12.0, clean_config(), seed);
    const std::array<double, 3> color{conjunctiva_red(12.0), 80.0, 90.0};
    std::vector<std::uint8_t> painted(s.image.pixel_count());
    for (int y = 0; y < 128; ++y) {
      for (int x = 0; x < 128; ++x) painted[s.image.index(x, y)] = s.image.pixel(x, y) == color;
    }
    EXPECT_EQ(s.mask_gt, BinaryMask(128, 128, painted)) << seed;
    const double fraction = static_cast<double>(s.mask_gt.popcount()) / (128.0 * 128.0);
    EXPECT_GE(fraction, 0.015) << seed;
    EXPECT_LE(fraction, 0.085) << seed;
  }
}

TEST(GenerateSample, WhiteSquareIsExactBeforeIllumination) {
  SynthConfig config;
  config.width = config.height = 96;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = generate_sample(10.0, config, seed);
    const auto m = channel_means(s.image, s.card_roi);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(m[c] / s.illumination[static_cast<std::size_t>(c)], 200.0, 1e-9);
    for (double g : s.illumination) {
      EXPECT_GE(g, 0.5);
      EXPECT_LE(g, 2.0);
    }
  }
}

TEST(GenerateSample, CleanPipelineRecoversTrueEi) {
  for (double hb : {7.0, 9.0, 12.0, 14.0}) {
    const auto s = generate_sample(hb, clean_config(), 11);
    const RgbImage calibrated = apply_gains(s.image, compute_gains(s.image, s.card_roi));
    const auto [mask, hist] = to_mask(classical_segment(calibrated));
    const auto f = extract_features(calibrated, mask);
    EXPECT_NEAR(f.ei, true_ei(hb), 1e-6) << hb;
  }
}

TEST(GenerateSample, RejectsOutOfRangeHb) {
  EXPECT_PALLOR_ERROR(generate_sample(15.0, SynthConfig{}, 0), invalid_argument);
  EXPECT_PALLOR_ERROR(generate_sample(6.9, SynthConfig{}, 0), invalid_argument);
}

TEST(Config, IsValidated) {
  SynthConfig c;
  c.hb_min = 12.0;
  c.hb_max = 11.0;
  EXPECT_PALLOR_ERROR(validate(c), invalid_argument);
  c = {};
  c.noise_sigma = -1.0;
  EXPECT_PALLOR_ERROR(validate(c), invalid_argument);
  c = {};
  c.gain_min = 0.0;
  EXPECT_PALLOR_ERROR(validate(c), invalid_argument);
  c = {};
  c.width = 16;
  EXPECT_PALLOR_ERROR(validate(c), invalid_argument);
}

TEST(Dataset, HbIsUniformByChiSquare) {
  SynthConfig config;
  config.seed = 2024;
  config.width = config.height = 32;
  constexpr int kBins = 10;
  std::array<int, kBins> counts{};
  for (std::size_t i = 0; i < 500; ++i) {
    const double hb = dataset_sample(config, i).gold_hb;
    const int bin = std::min(kBins - 1, static_cast<int>((hb - 7.0) / 0.7));
    ++counts[static_cast<std::size_t>(bin)];
  }
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - 50.0) * (c - 50.0) / 50.0;
  // 99.9th percentile of chi-square with 9 degrees of freedom.
  EXPECT_LT(chi2, 27.877);
}

TEST(Dataset, SampleHbMatchesItsSubstream) {
  SynthConfig config;
  config.width = config.height = 48;
  config.seed = 5;
  for (std::size_t i = 0; i < 5; ++i) {
    Rng rng = Rng::substream(config.seed, i);
    EXPECT_EQ(dataset_sample(config, i).gold_hb, rng.uniform(7.0, 14.0));
  }
}

TEST(Dataset, FilesAreByteIdenticalAcrossRuns) {
  const auto dir = fresh_dir();
  SynthConfig config;
  config.n_samples = 6;
  config.width = config.height = 64;
  config.seed = 17;
  generate_dataset(config, dir / "a");
  generate_dataset(config, dir / "b");
  for (const char* rel : {"manifest.csv", "images/0000.ppm", "images/0005.ppm", "masks/0003.pbm"}) {
    EXPECT_EQ(read_bytes(dir / "a" / rel), read_bytes(dir / "b" / rel)) << rel;
  }
  const auto rows = read_manifest(dir / "a" / "manifest.csv");
  ASSERT_EQ(rows.size(), 6u);
  const auto s = dataset_sample(config, 2);
  EXPECT_EQ(rows[2].gold_hb, s.gold_hb);
  EXPECT_EQ(*rows[2].gold_ei, s.true_ei);
  EXPECT_EQ(rows[2].card, s.card_roi);
  EXPECT_EQ(load_mask(*rows[2].mask_path), s.mask_gt);
  EXPECT_EQ(load_image(rows[2].image_path).width(), 64);
}

TEST(Dataset, ManifestHeader) {
  const auto dir = fresh_dir();
  SynthConfig config;
  config.n_samples = 1;
  config.width = config.height = 32;
  generate_dataset(config, dir);
  const auto bytes = read_bytes(dir / "manifest.csv");
  const std::string text(bytes.begin(), bytes.end());
  EXPECT_EQ(text.substr(0, text.find('\n')), "image_path,card_x,card_y,card_w,card_h,gold_hb,gold_ei,mask_path");
  EXPECT_NE(text.find("images/0000.ppm"), std::string::npos);
}

TEST(Dataset, DegenerateRangeGivesConstantHb) {
  const auto dir = fresh_dir();
  SynthConfig config;
  config.n_samples = 5;
  config.hb_min = config.hb_max = 11.0;
  config.width = config.height = 32;
  generate_dataset(config, dir);
  for (const auto& row : read_manifest(dir / "manifest.csv")) EXPECT_EQ(row.gold_hb, 11.0);
}

TEST(Dataset, UnwritableDirectory) {
  const auto dir = fresh_dir();
  pallor::testing::write_bytes(dir / "file", {1});
  SynthConfig config;
  config.n_samples = 1;
  config.width = config.height = 32;
  EXPECT_PALLOR_ERROR(generate_dataset(config, dir / "file" / "sub"), unwritable_path);
}

TEST(Oracle, RegressorEncodesTheInverseMap) {
  const nn::Network net = oracle_regressor();
  const double ei = true_ei(10.3);
  EXPECT_NEAR(nn::forward(net, nn::Tensor({3}, {123.0, 80.0, ei}))[0], 10.3, 1e-12);
}

}  // namespace
}  // namespace pallor::synth
