#include <cmath>
#include <cstring>

#include "pallor/gradcheck.hpp"
#include "pallor/nn.hpp"
#include "pallor/random.hpp"
#include "test_util.hpp"

namespace pallor::nn {
namespace {

using pallor::testing::fresh_dir;
using pallor::testing::read_bytes;
using pallor::testing::write_bytes;

NetworkSpec dense_spec(std::size_t in, std::size_t out, Activation a = Activation::linear) {
  NetworkSpec spec;
  spec.input_shape = {in};
  spec.layers = {Dense{in, out}, ActivationLayer{a}};
  return spec;
}

NetworkSpec mixed_spec(std::uint64_t seed) {
  NetworkSpec spec;
  spec.input_shape = {2, 8, 8};
  spec.seed = seed;
  spec.layers = {Conv2d{2, 4, 3, 2, 1}, ActivationLayer{Activation::relu}, Upsample2x{},
                 Conv2d{4, 2, 3, 1, 1}, ActivationLayer{Activation::sigmoid}, Flatten{},
                 Dense{128, 3},         ActivationLayer{Activation::linear}};
  return spec;
}

Tensor random_tensor(Rng& rng, const Shape& shape) {
  Tensor t(shape);
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

TEST(Forward, DenseByHand) {
  Network net(dense_spec(2, 1));
  net.params()[0] = {{2.0, -1.0}, {0.5}};
  EXPECT_EQ(forward(net, Tensor({2}, {3.0, 4.0}))[0], 2.5);
}

TEST(Forward, Relu) {
  NetworkSpec spec;
  spec.input_shape = {3};
  spec.layers = {ActivationLayer{Activation::relu}};
  const Tensor y = forward(Network(spec), Tensor({3}, {-1.0, 0.0, 2.0}));
  EXPECT_EQ(y, Tensor({3}, {0.0, 0.0, 2.0}));
}

TEST(Forward, SigmoidAtZero) {
  NetworkSpec spec;
  spec.input_shape = {1};
  spec.layers = {ActivationLayer{Activation::sigmoid}};
  EXPECT_EQ(forward(Network(spec), Tensor({1}, {0.0}))[0], 0.5);
}

TEST(Forward, ConvSumKernel) {
  NetworkSpec spec;
  spec.input_shape = {1, 2, 2};
  spec.layers = {Conv2d{1, 1, 2, 1, 0}};
  Network net(spec);
  net.params()[0] = {{1.0, 1.0, 1.0, 1.0}, {0.0}};
  const Tensor y = forward(net, Tensor({1, 2, 2}, {1, 2, 3, 4}));
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1}));
  EXPECT_EQ(y[0], 10.0);
}

TEST(Forward, ConvIsCrossCorrelationWithZeroPadding) {
  NetworkSpec spec;
  spec.input_shape = {1, 2, 2};
  spec.layers = {Conv2d{1, 1, 3, 1, 1}};
  Network net(spec);
  // Only the top-left tap is set: out(y, x) = in(y - 1, x - 1).
  net.params()[0] = {{1, 0, 0, 0, 0, 0, 0, 0, 0}, {0.0}};
  EXPECT_EQ(forward(net, Tensor({1, 2, 2}, {1, 2, 3, 4})), Tensor({1, 2, 2}, {0, 0, 0, 1}));
}

TEST(Forward, StrideAndUpsampleShapes) {
  NetworkSpec spec;
  spec.input_shape = {3, 16, 16};
  spec.layers = {Conv2d{3, 5, 3, 2, 1}, Upsample2x{}, Flatten{}};
  const auto shapes = propagate_shapes(spec);
  EXPECT_EQ(shapes[0], (Shape{5, 8, 8}));
  EXPECT_EQ(shapes[1], (Shape{5, 16, 16}));
  EXPECT_EQ(shapes[2], (Shape{1280}));
}

TEST(Forward, UpsampleRepeatsPixels) {
  NetworkSpec spec;
  spec.input_shape = {1, 1, 2};
  spec.layers = {Upsample2x{}};
  EXPECT_EQ(forward(Network(spec), Tensor({1, 1, 2}, {1, 2})), Tensor({1, 2, 4}, {1, 1, 2, 2, 1, 1, 2, 2}));
}

TEST(Forward, WrongInputShapeIsRejected) {
  EXPECT_PALLOR_ERROR(forward(Network(dense_spec(2, 1)), Tensor({3})), shape_mismatch);
}

TEST(Init, CompositionErrors) {
  NetworkSpec spec;
  spec.input_shape = {3, 8, 8};
  spec.layers = {Conv2d{3, 8, 3, 1, 0}, Flatten{}, Dense{100, 1}};
  EXPECT_PALLOR_ERROR(Network{spec}, shape_mismatch);
  spec.layers = {Conv2d{4, 8, 3, 1, 0}};
  EXPECT_PALLOR_ERROR(Network{spec}, shape_mismatch);
  spec.layers = {};
  EXPECT_PALLOR_ERROR(Network{spec}, shape_mismatch);
}

TEST(Init, GlorotUniformAndDeterministic) {
  const Network a(dense_spec(3, 1));
  ASSERT_EQ(a.params()[0].weights.size(), 3u);
  EXPECT_EQ(a.params()[0].biases, std::vector<double>{0.0});
  EXPECT_TRUE(a.params()[1].weights.empty());
  EXPECT_EQ(a, Network(dense_spec(3, 1)));

  NetworkSpec spec = mixed_spec(42);
  const Network b(spec);
  EXPECT_EQ(b, Network(spec));
  spec.seed = 43;
  EXPECT_NE(b.params(), Network(spec).params());

  const double limit = std::sqrt(6.0 / (128.0 + 3.0));
  for (double w : b.params()[6].weights) EXPECT_LE(std::abs(w), limit);
  for (const auto& p : b.params()) {
    for (double v : p.biases) EXPECT_EQ(v, 0.0);
  }
  EXPECT_EQ(b.parameter_count(), (2u * 9u * 4u + 4u) + (4u * 9u * 2u + 2u) + (128u * 3u + 3u));
}

TEST(Backward, DenseByHand) {
  NetworkSpec spec;
  spec.input_shape = {1};
  spec.layers = {Dense{1, 1}};
  Network net(spec);
  net.params()[0] = {{2.0}, {0.0}};
  const auto r = backward(net, Tensor({1}, {3.0}), Tensor({1}, {0.0}));
  EXPECT_EQ(r.loss, 36.0);
  EXPECT_EQ(r.grads[0].weights, std::vector<double>{36.0});
  EXPECT_EQ(r.grads[0].biases, std::vector<double>{12.0});
}

TEST(Backward, ShapeErrors) {
  const Network net(dense_spec(2, 1));
  EXPECT_PALLOR_ERROR(backward(net, Tensor({2}), Tensor({2})), shape_mismatch);
}

TEST(Sgd, Examples) {
  NetworkSpec spec;
  spec.input_shape = {1};
  spec.layers = {Dense{1, 1}};
  Network net(spec);
  net.params()[0] = {{1.0}, {0.5}};
  Gradients g{{{2.0}, {-1.0}}};

  Network same = net;
  sgd_step(same, g, 0.0);
  EXPECT_EQ(same, net);

  Network once = net;
  sgd_step(once, g, 0.1);
  EXPECT_DOUBLE_EQ(once.params()[0].weights[0], 0.8);
  EXPECT_DOUBLE_EQ(once.params()[0].biases[0], 0.6);

  Network twice = net;
  sgd_step(twice, g, 0.05);
  sgd_step(twice, g, 0.05);
  EXPECT_DOUBLE_EQ(twice.params()[0].weights[0], once.params()[0].weights[0]);
  EXPECT_DOUBLE_EQ(twice.params()[0].biases[0], once.params()[0].biases[0]);
}

TEST(GradientCheck, LinearDenseIsExact) {
  NetworkSpec spec;
  spec.input_shape = {1};
  spec.layers = {Dense{1, 1}};
  Network net(spec);
  net.params()[0] = {{0.7}, {-0.2}};
  EXPECT_LT(gradient_check(net, Tensor({1}, {1.3}), Tensor({1}, {0.4}), kGradientCheckStep), 1e-9);
}

TEST(GradientCheck, StepMustBePositive) {
  const Network net(dense_spec(2, 1));
  EXPECT_PALLOR_ERROR(gradient_check(net, Tensor({2}), Tensor({1}), 0.0), invalid_argument);
  EXPECT_PALLOR_ERROR(gradient_check(net, Tensor({2}), Tensor({1}), -1e-4), invalid_argument);
  EXPECT_PALLOR_ERROR(run_gradient_suite(1, 0.0), invalid_argument);
}

TEST(GradientCheck, SuiteCoversEveryLayerAndActivation) {
  const auto cases = gradient_cases(0);
  bool seen_dense = false, seen_conv_s1 = false, seen_conv_s2 = false, seen_up = false, seen_flat = false;
  bool seen_act[3] = {false, false, false};
  for (const auto& c : cases) {
    for (const auto& layer : c.spec.layers) {
      if (std::holds_alternative<Dense>(layer)) seen_dense = true;
      if (const auto* conv = std::get_if<Conv2d>(&layer)) (conv->stride == 1 ? seen_conv_s1 : seen_conv_s2) = true;
      if (std::holds_alternative<Upsample2x>(layer)) seen_up = true;
      if (std::holds_alternative<Flatten>(layer)) seen_flat = true;
      if (const auto* a = std::get_if<ActivationLayer>(&layer)) seen_act[static_cast<int>(a->fn)] = true;
    }
  }
  EXPECT_TRUE(seen_dense && seen_conv_s1 && seen_conv_s2 && seen_up && seen_flat);
  EXPECT_TRUE(seen_act[0] && seen_act[1] && seen_act[2]);
}

TEST(GradientCheck, TenSeedsBelowTolerance) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (const auto& r : run_gradient_suite(seed)) {
      EXPECT_LT(r.max_relative_error, kGradientCheckTolerance) << "seed " << seed << " case " << r.name;
    }
  }
}

TEST(Weights, RoundTripIsBitIdentical) {
  const auto dir = fresh_dir();
  Network net(mixed_spec(9));
  Rng rng(10);
  for (auto& p : net.params()) {
    for (double& b : p.biases) b = rng.uniform(-1.0, 1.0) * 1e-3 + 1.0 / 3.0;
  }
  Standardization st;
  for (std::size_t i = 0; i < 128; ++i) {
    st.input_mean.push_back(rng.uniform(-1.0, 1.0));
    st.input_std.push_back(rng.uniform(0.5, 2.0));
  }
  st.output_mean = {0.1, 0.2, 0.3};
  st.output_std = {1.5, 2.5, 3.5};
  net.set_standardization(st);
  for (const auto format : {WeightsFormat::binary, WeightsFormat::json}) {
    const auto path = dir / (format == WeightsFormat::binary ? "w.bin" : "w.json");
    save_weights(net, path, format);
    const Network back = load_weights(path);
    EXPECT_EQ(back, net);
    EXPECT_EQ(load_weights(path, net.spec()), net);
    for (int i = 0; i < 100; ++i) {
      const Tensor x = random_tensor(rng, net.input_shape());
      ASSERT_TRUE(bit_equal(forward(back, x), forward(net, x))) << i;
    }
  }
}

TEST(Weights, BinaryLayoutHasMagicVersionAndLittleEndianValues) {
  Network net(dense_spec(1, 1));
  net.params()[0] = {{1.0}, {-2.0}};
  const auto bytes = serialize_weights(net, WeightsFormat::binary);
  ASSERT_GT(bytes.size(), kWeightsMagic.size() + 4 + 16);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(kWeightsMagic.size())), "PALLOR-NN");
  const std::size_t v = kWeightsMagic.size();
  EXPECT_EQ(bytes[v] | bytes[v + 1] << 8 | bytes[v + 2] << 16 | bytes[v + 3] << 24, 1);
  // Trailing 16 bytes: weight 1.0 then bias -2.0.
  const std::vector<std::uint8_t> tail(bytes.end() - 16, bytes.end());
  const std::vector<std::uint8_t> expected{0, 0, 0, 0, 0, 0, 0xf0, 0x3f, 0, 0, 0, 0, 0, 0, 0, 0xc0};
  EXPECT_EQ(tail, expected);
}

TEST(Weights, CorruptFilesAreRejected) {
  const auto dir = fresh_dir();
  const Network net(mixed_spec(1));
  save_weights(net, dir / "w.bin");
  auto bytes = read_bytes(dir / "w.bin");

  for (std::size_t cut : {std::size_t{3}, std::size_t{12}, bytes.size() / 2, bytes.size() - 1}) {
    const std::vector<std::uint8_t> truncated(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    write_bytes(dir / "cut.bin", truncated);
    EXPECT_THROW(load_weights(dir / "cut.bin"), Error) << cut;
  }
  const std::vector<std::uint8_t> half(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(bytes.size() / 2));
  write_bytes(dir / "half.bin", half);
  EXPECT_PALLOR_ERROR(load_weights(dir / "half.bin"), truncated_data);

  auto bad = bytes;
  bad[0] = 'X';
  write_bytes(dir / "magic.bin", bad);
  EXPECT_PALLOR_ERROR(load_weights(dir / "magic.bin"), bad_magic);

  auto newer = bytes;
  newer[kWeightsMagic.size()] = 2;
  write_bytes(dir / "version.bin", newer);
  EXPECT_PALLOR_ERROR(load_weights(dir / "version.bin"), version_mismatch);

  auto longer = bytes;
  longer.push_back(0);
  write_bytes(dir / "long.bin", longer);
  EXPECT_THROW(load_weights(dir / "long.bin"), Error);

  EXPECT_PALLOR_ERROR(load_weights(dir / "none.bin"), missing_file);
  EXPECT_PALLOR_ERROR(load_weights(dir / "w.bin", mixed_spec(2)), spec_mismatch);
}

TEST(Weights, JsonMagicIsChecked) {
  const auto dir = fresh_dir();
  write_bytes(dir / "w.json", pallor::testing::to_bytes(R"({"magic": "OTHER", "version": 1})"));
  EXPECT_PALLOR_ERROR(load_weights(dir / "w.json"), bad_magic);
}

TEST(Summary, FoldsActivations) {
  const auto lines = summarize(mixed_spec(0));
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_NE(lines[0].find("relu"), std::string::npos);
  EXPECT_NE(lines[4].find("dense 128->3 linear"), std::string::npos);
}

TEST(Training, ConfigIsValidated) {
  EXPECT_PALLOR_ERROR(validate(TrainingConfig{0.0, 1, 1, 0}), invalid_argument);
  EXPECT_PALLOR_ERROR(validate(TrainingConfig{0.1, 0, 1, 0}), invalid_argument);
  EXPECT_PALLOR_ERROR(validate(TrainingConfig{0.1, 1, 0, 0}), invalid_argument);
  Network net(dense_spec(2, 1));
  EXPECT_PALLOR_ERROR(train(net, {}, TrainingConfig{}), dataset_too_small);
}

std::vector<Example> linear_dataset(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::vector<Example> data;
  for (std::size_t i = 0; i < n; ++i) {
    const double x1 = rng.uniform(-1.0, 1.0), x2 = rng.uniform(-1.0, 1.0);
    data.push_back({Tensor({2}, {x1, x2}), Tensor({1}, {2.0 * x1 - x2 + 3.0 + rng.normal(0.0, 0.01)})});
  }
  return data;
}

TEST(Training, LinearRegressionConverges) {
  const auto data = linear_dataset(5, 100);
  Network net(dense_spec(2, 1));
  // 10 batches per epoch, 200 epochs: 2000 steps.
  const auto losses = train(net, data, TrainingConfig{0.1, 200, 10, 1});
  ASSERT_EQ(losses.size(), 200u);
  EXPECT_NEAR(net.params()[0].weights[0], 2.0, 0.05);
  EXPECT_NEAR(net.params()[0].weights[1], -1.0, 0.05);
  EXPECT_NEAR(net.params()[0].biases[0], 3.0, 0.05);
  EXPECT_LT(losses.back(), 1e-3);
}

TEST(Training, DeterministicAndStoppable) {
  const auto data = linear_dataset(6, 40);
  Network a(dense_spec(2, 1));
  Network b = a;
  const TrainingConfig config{0.05, 5, 4, 17};
  train(a, data, config);
  train(b, data, config);
  EXPECT_EQ(a, b);

  Network c(dense_spec(2, 1));
  int calls = 0;
  const auto losses = train(c, data, config, [&](int epoch, double) {
    ++calls;
    return epoch < 1;
  });
  EXPECT_EQ(calls, 2);
  EXPECT_EQ(losses.size(), 2u);
}

TEST(Training, DivergenceIsReported) {
  const auto data = linear_dataset(7, 20);
  Network net(dense_spec(2, 1));
  EXPECT_PALLOR_ERROR(train(net, data, TrainingConfig{1e6, 50, 1, 0}), non_finite);
}

}  // namespace
}  // namespace pallor::nn
