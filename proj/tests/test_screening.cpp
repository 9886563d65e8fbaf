#include <cmath>

#include "pallor/random.hpp"
#include "pallor/screening.hpp"
#include "pallor/synth.hpp"
#include "test_util.hpp"

namespace pallor {
namespace {

FeatureVector features_for(double mean_r, double mean_g) {
  return {mean_r, mean_g, erythema_index(mean_r, mean_g), 500};
}

nn::Network constant_regressor(double value) {
  nn::NetworkSpec spec;
  spec.input_shape = {3};
  spec.layers = {nn::Dense{3, 1}};
  nn::Network net(spec);
  net.params()[0] = {{0.0, 0.0, 0.0}, {value}};
  return net;
}

TEST(Classify, StrictCutoff) {
  EXPECT_TRUE(classify(10.9, 11.0).anemic);
  EXPECT_FALSE(classify(11.0, 11.0).anemic);
  EXPECT_FALSE(classify(9.5, 9.0).anemic);
  EXPECT_EQ(classify(9.5, 9.0).cutoff, 9.0);
  EXPECT_PALLOR_ERROR(classify(9.5, 0.0), invalid_argument);
}

TEST(Classify, Monotone) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    double a = rng.uniform(3.0, 20.0), b = rng.uniform(3.0, 20.0);
    if (a > b) std::swap(a, b);
    const double c = rng.uniform(5.0, 15.0);
    if (classify(b, c).anemic) EXPECT_TRUE(classify(a, c).anemic);
  }
}

// Independent oracle: index a 2x2 table by (gold anemic, predicted anemic).
ScreeningMetrics brute_force(const std::vector<std::pair<double, double>>& pairs, double cutoff) {
  std::size_t table[2][2] = {{0, 0}, {0, 0}};
  for (const auto& [pred, gold] : pairs) ++table[gold < cutoff ? 1 : 0][pred < cutoff ? 1 : 0];
  ScreeningMetrics m;
  m.tp = table[1][1];
  m.fn = table[1][0];
  m.fp = table[0][1];
  m.tn = table[0][0];
  return m;
}

TEST(Evaluate, MatchesBruteForceCounting) {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(60);
    std::vector<std::pair<double, double>> pairs;
    for (std::size_t i = 0; i < n; ++i) {
      // Half-integer grid so values often land exactly on the cutoff.
      const auto grid = [&] { return 7.0 + 0.5 * static_cast<double>(rng.below(15)); };
      pairs.emplace_back(rng.uniform01() < 0.5 ? grid() : rng.uniform(6.0, 15.0), grid());
    }
    const double cutoff = 9.0 + static_cast<double>(rng.below(3));
    const auto m = evaluate(pairs, cutoff);
    EXPECT_EQ(m, brute_force(pairs, cutoff)) << trial;
    EXPECT_EQ(m.total(), n);
  }
}

TEST(Evaluate, ConstructedCase) {
  std::vector<std::pair<double, double>> pairs;
  for (int i = 0; i < 3; ++i) pairs.emplace_back(10.0, 10.0);  // tp
  pairs.emplace_back(12.0, 10.0);                              // fn
  for (int i = 0; i < 4; ++i) pairs.emplace_back(12.0, 12.0);  // tn
  for (int i = 0; i < 2; ++i) pairs.emplace_back(10.0, 12.0);  // fp
  const auto m = evaluate(pairs, 11.0);
  EXPECT_EQ(m, (ScreeningMetrics{3, 2, 4, 1}));
  const auto r = m.rates();
  EXPECT_EQ(*r.accuracy, 70.0);
  EXPECT_EQ(*r.sensitivity, 75.0);
  EXPECT_NEAR(*r.specificity, 66.67, 0.005);
  EXPECT_EQ(render_report(std::map<double, ScreeningMetrics>{{11.0, m}}),
            "Cut-off point  Hb = 11\n"
            "Accuracy       70.00\n"
            "Sensitivity    75.00\n"
            "Specificity    66.67\n");
}

TEST(Evaluate, PerfectPredictions) {
  const std::vector<std::pair<double, double>> pairs{{8, 8}, {12, 12}, {10.5, 10.5}};
  const auto r = evaluate(pairs, 11.0).rates();
  EXPECT_EQ(*r.accuracy, 100.0);
  EXPECT_EQ(*r.sensitivity, 100.0);
  EXPECT_EQ(*r.specificity, 100.0);
}

TEST(Evaluate, UndefinedRates) {
  const std::vector<std::pair<double, double>> pairs{{12, 12}, {10, 13}};
  const auto m = evaluate(pairs, 11.0);
  EXPECT_FALSE(m.rates().sensitivity.has_value());
  EXPECT_EQ(*m.rates().specificity, 50.0);
  const std::string text = render_report(std::map<double, ScreeningMetrics>{{11.0, m}});
  EXPECT_NE(text.find("Sensitivity    —\n"), std::string::npos) << text;
  const auto j = report_json({{11.0, m}});
  EXPECT_TRUE(j["cutoffs"][0]["sensitivity"].is_null());
  EXPECT_EQ(j["cutoffs"][0]["fp"], 1);
  EXPECT_PALLOR_ERROR(evaluate({}, 11.0), dataset_too_small);
}

TEST(Evaluate, RaisingCutoffAddsGoldPositives) {
  Rng rng(3);
  std::vector<std::pair<double, double>> pairs;
  for (int i = 0; i < 300; ++i) pairs.emplace_back(rng.uniform(6.0, 15.0), rng.uniform(6.0, 15.0));
  std::size_t previous = 0;
  for (double cutoff : {8.0, 9.0, 10.0, 11.0, 12.0}) {
    const auto m = evaluate(pairs, cutoff);
    EXPECT_GE(m.tp + m.fn, previous);
    previous = m.tp + m.fn;
  }
}

TEST(Report, ReproducesTableOne) {
  const std::map<double, ScreeningRates> rates{
      {9.0, {93.53, 22.49, 94.20}}, {10.0, {77.07, 52.21, 78.40}}, {11.0, {42.96, 77.58, 36.03}}};
  EXPECT_EQ(render_report(rates),
            "Cut-off point  Hb = 9  Hb = 10  Hb = 11\n"
            "Accuracy       93.53   77.07    42.96\n"
            "Sensitivity    22.49   52.21    77.58\n"
            "Specificity    94.20   78.40    36.03\n");
}

TEST(Report, SingleColumnAndFractionalCutoff) {
  EXPECT_EQ(render_report(std::map<double, ScreeningRates>{{11.0, {100.0, 100.0, 100.0}}}),
            "Cut-off point  Hb = 11\n"
            "Accuracy       100.00\n"
            "Sensitivity    100.00\n"
            "Specificity    100.00\n");
  const std::string text = render_report(std::map<double, ScreeningRates>{{10.5, {1.0, 2.0, 3.0}}});
  EXPECT_EQ(text.substr(0, text.find('\n')), "Cut-off point  Hb = 10.5");
  EXPECT_PALLOR_ERROR(render_report(std::map<double, ScreeningRates>{}), invalid_argument);
}

TEST(Predict, ClampsAndFlags) {
  const auto p = predict_hb(constant_regressor(25.0), features_for(150, 80), "m1");
  EXPECT_EQ(p.hb, 20.0);
  EXPECT_EQ(p.raw_hb, 25.0);
  EXPECT_TRUE(p.clamped);
  EXPECT_EQ(p.model_id, "m1");
  const auto low = predict_hb(constant_regressor(1.0), features_for(150, 80));
  EXPECT_EQ(low.hb, 3.0);
  EXPECT_TRUE(low.clamped);
  const auto mid = predict_hb(constant_regressor(12.5), features_for(150, 80));
  EXPECT_EQ(mid.hb, 12.5);
  EXPECT_FALSE(mid.clamped);
}

TEST(Predict, OracleRegressorInvertsTheGenerator) {
  const nn::Network oracle = synth::oracle_regressor();
  for (double hb : {7.0, 9.0, 11.0, 12.0, 14.0}) {
    const double r = synth::conjunctiva_red(hb);
    const auto p = predict_hb(oracle, features_for(r, 80.0));
    EXPECT_NEAR(p.hb, hb, 1e-9);
    EXPECT_EQ(p.hb, predict_hb(oracle, features_for(r, 80.0)).hb);
  }
}

TEST(Predict, RejectsNonRegressorNetworks) {
  nn::NetworkSpec spec;
  spec.input_shape = {4};
  spec.layers = {nn::Dense{4, 1}};
  EXPECT_PALLOR_ERROR(predict_hb(nn::Network(spec), features_for(150, 80)), spec_mismatch);
}

std::vector<LabeledFeatures> synthetic_features(std::size_t n, std::uint64_t seed, double noise = 0.0) {
  Rng rng(seed);
  std::vector<LabeledFeatures> data;
  for (std::size_t i = 0; i < n; ++i) {
    const double hb = rng.uniform(7.0, 14.0);
    const double r = synth::conjunctiva_red(hb) + rng.normal(0.0, noise);
    const double g = 80.0 + rng.normal(0.0, noise);
    data.push_back({features_for(r, g), hb});
  }
  return data;
}

TEST(TrainRegressor, InputErrors) {
  const nn::TrainingConfig config{0.01, 1, 4, 0};
  EXPECT_PALLOR_ERROR(train_regressor(synthetic_features(5, 1), config), dataset_too_small);
  auto bad = synthetic_features(20, 1);
  bad[3].features.ei = std::nan("");
  EXPECT_PALLOR_ERROR(train_regressor(bad, config), non_finite);
  auto out_of_range = synthetic_features(20, 1);
  out_of_range[0].gold_hb = 25.0;
  EXPECT_PALLOR_ERROR(train_regressor(out_of_range, config), invalid_argument);
}

TEST(TrainRegressor, ConstantTarget) {
  // Features cover the whole brightness box the check samples from.
  Rng rng(4);
  std::vector<LabeledFeatures> data;
  for (int i = 0; i < 1000; ++i) {
    data.push_back({features_for(rng.uniform(30.0, 250.0), rng.uniform(30.0, 250.0)), 11.0});
  }
  const auto result = train_regressor(data, {0.05, 200, 16, 3});
  for (int i = 0; i < 100; ++i) {
    const auto p = predict_hb(result.model, features_for(rng.uniform(30.0, 250.0), rng.uniform(30.0, 250.0)));
    EXPECT_NEAR(p.hb, 11.0, 0.05);
  }
}

TEST(TrainRegressor, LearnsTheSyntheticMap) {
  const auto data = synthetic_features(300, 5, 0.5);
  const auto result = train_regressor(data, {0.01, 150, 16, 6});
  EXPECT_EQ(result.train_count, 240u);
  EXPECT_EQ(result.validation_count, 60u);
  EXPECT_EQ(result.validation_mae.size(), 150u);
  for (std::size_t i = 1; i < result.best_validation_mae.size(); ++i) {
    EXPECT_LE(result.best_validation_mae[i], result.best_validation_mae[i - 1]);
  }
  EXPECT_EQ(result.final_validation_mae, result.best_validation_mae.back());
  EXPECT_LT(result.final_validation_mae, 0.3);
  const auto p = predict_hb(result.model, features_for(synth::conjunctiva_red(12.0), 80.0));
  EXPECT_GE(p.hb, 11.7);
  EXPECT_LE(p.hb, 12.3);
}

TEST(TrainRegressor, Deterministic) {
  const auto data = synthetic_features(40, 8, 0.5);
  const nn::TrainingConfig config{0.01, 10, 8, 9};
  EXPECT_EQ(train_regressor(data, config).model, train_regressor(data, config).model);
}

}  // namespace
}  // namespace pallor
