#include "pallor/gradcheck.hpp"

#include "pallor/random.hpp"

namespace pallor::nn {

std::vector<GradientCase> gradient_cases(std::uint64_t seed) {
  std::vector<GradientCase> cases;
  for (Activation a : {Activation::relu, Activation::sigmoid, Activation::linear}) {
    const std::string act(to_string(a));
    const ActivationLayer f{a};
    cases.push_back({"dense+" + act, {{4}, {Dense{4, 5}, f, Dense{5, 3}}, seed}});
    cases.push_back({"conv3x3s1p1+" + act, {{2, 5, 5}, {Conv2d{2, 3, 3, 1, 1}, f, Conv2d{3, 2, 3, 1, 1}}, seed}});
    cases.push_back({"conv3x3s2p1+" + act, {{2, 6, 6}, {Conv2d{2, 3, 3, 2, 1}, f, Conv2d{3, 2, 1, 1, 0}}, seed}});
    cases.push_back({"conv2x2s1p0+" + act, {{3, 4, 4}, {Conv2d{3, 2, 2, 1, 0}, f}, seed}});
    cases.push_back({"upsample2x+" + act, {{2, 3, 3}, {Conv2d{2, 2, 3, 1, 1}, f, Upsample2x{}, Conv2d{2, 2, 3, 1, 1}}, seed}});
    cases.push_back({"flatten+dense+" + act, {{2, 3, 3}, {Conv2d{2, 2, 3, 1, 1}, f, Flatten{}, Dense{18, 2}}, seed}});
  }
  cases.push_back({"encoder-decoder",
                   {{3, 8, 8},
                    {Conv2d{3, 4, 3, 2, 1}, ActivationLayer{Activation::relu}, Conv2d{4, 4, 3, 1, 1},
                     ActivationLayer{Activation::relu}, Upsample2x{}, Conv2d{4, 3, 3, 1, 1},
                     ActivationLayer{Activation::sigmoid}},
                    seed}});
  cases.push_back({"regressor",
                   {{3},
                    {Dense{3, 16}, ActivationLayer{Activation::relu}, Dense{16, 8}, ActivationLayer{Activation::relu},
                     Dense{8, 1}, ActivationLayer{Activation::linear}},
                    seed}});
  return cases;
}

std::vector<GradientCaseResult> run_gradient_suite(std::uint64_t seed, double step) {
  std::vector<GradientCaseResult> results;
  std::uint64_t index = 0;
  for (auto& c : gradient_cases(seed)) {
    const Network net(c.spec);
    Rng rng = Rng::substream(seed, index++);
    Tensor input(c.spec.input_shape);
    Tensor target(net.output_shape());
    for (double& v : input.data()) v = rng.uniform(-1.0, 1.0);
    for (double& v : target.data()) v = rng.uniform(0.0, 1.0);
    results.push_back({c.name, gradient_check(net, input, target, step)});
  }
  return results;
}

}  // namespace pallor::nn
