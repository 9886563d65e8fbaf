#include "pallor/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "pallor/detail/parallel.hpp"
#include "pallor/error.hpp"
#include "pallor/random.hpp"

namespace pallor::nn {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

[[noreturn]] void shape_error(const std::string& msg) { throw Error(ErrorCode::shape_mismatch, msg); }

// Output positions o in [lo, hi) whose input index o*stride + offset - padding
// lies inside [0, n_in).
struct Span {
  std::size_t lo = 0;
  std::size_t hi = 0;
};

Span valid_outputs(std::size_t n_in, std::size_t n_out, std::size_t stride, std::size_t padding,
                   std::size_t offset) {
  std::size_t lo = 0;
  if (offset < padding) lo = (padding - offset + stride - 1) / stride;
  const long long top = static_cast<long long>(n_in) - 1 + static_cast<long long>(padding) -
                        static_cast<long long>(offset);
  if (top < 0) return {0, 0};
  const std::size_t hi = std::min(n_out, static_cast<std::size_t>(top) / stride + 1);
  return {std::min(lo, hi), hi};
}

void dense_forward(const Dense& d, const LayerParams& p, std::span<const double> x, std::span<double> y) {
  for (std::size_t o = 0; o < d.out; ++o) {
    const double* w = p.weights.data() + o * d.in;
    double acc = p.biases[o];
    for (std::size_t i = 0; i < d.in; ++i) acc += w[i] * x[i];
    y[o] = acc;
  }
}

void dense_backward(const Dense& d, const LayerParams& p, std::span<const double> x,
                    std::span<const double> dy, LayerParams& g, std::span<double> dx) {
  std::fill(dx.begin(), dx.end(), 0.0);
  for (std::size_t o = 0; o < d.out; ++o) {
    const double* w = p.weights.data() + o * d.in;
    double* gw = g.weights.data() + o * d.in;
    g.biases[o] += dy[o];
    for (std::size_t i = 0; i < d.in; ++i) {
      gw[i] += dy[o] * x[i];
      dx[i] += w[i] * dy[o];
    }
  }
}

void conv_forward(const Conv2d& l, const LayerParams& p, const Shape& in_shape, std::span<const double> x,
                  const Shape& out_shape, std::span<double> y) {
  const std::size_t h = in_shape[1], w = in_shape[2];
  const std::size_t ho = out_shape[1], wo = out_shape[2];
  const std::size_t k = l.kernel, s = l.stride, pad = l.padding;
  for (std::size_t o = 0; o < l.out_ch; ++o) {
    double* out_plane = y.data() + o * ho * wo;
    std::fill(out_plane, out_plane + ho * wo, p.biases[o]);
    for (std::size_t c = 0; c < l.in_ch; ++c) {
      const double* in_plane = x.data() + c * h * w;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const Span rows = valid_outputs(h, ho, s, pad, ky);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const Span cols = valid_outputs(w, wo, s, pad, kx);
          const double wt = p.weights[((o * l.in_ch + c) * k + ky) * k + kx];
          for (std::size_t oy = rows.lo; oy < rows.hi; ++oy) {
            const double* in_row = in_plane + (oy * s + ky - pad) * w;
            double* out_row = out_plane + oy * wo;
            for (std::size_t ox = cols.lo; ox < cols.hi; ++ox) out_row[ox] += wt * in_row[ox * s + kx - pad];
          }
        }
      }
    }
  }
}

void conv_backward(const Conv2d& l, const LayerParams& p, const Shape& in_shape, std::span<const double> x,
                   const Shape& out_shape, std::span<const double> dy, LayerParams& g, std::span<double> dx) {
  const std::size_t h = in_shape[1], w = in_shape[2];
  const std::size_t ho = out_shape[1], wo = out_shape[2];
  const std::size_t k = l.kernel, s = l.stride, pad = l.padding;
  std::fill(dx.begin(), dx.end(), 0.0);
  for (std::size_t o = 0; o < l.out_ch; ++o) {
    const double* dy_plane = dy.data() + o * ho * wo;
    g.biases[o] += std::accumulate(dy_plane, dy_plane + ho * wo, 0.0);
    for (std::size_t c = 0; c < l.in_ch; ++c) {
      const double* in_plane = x.data() + c * h * w;
      double* dx_plane = dx.data() + c * h * w;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const Span rows = valid_outputs(h, ho, s, pad, ky);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const Span cols = valid_outputs(w, wo, s, pad, kx);
          const std::size_t widx = ((o * l.in_ch + c) * k + ky) * k + kx;
          const double wt = p.weights[widx];
          double acc = 0.0;
          for (std::size_t oy = rows.lo; oy < rows.hi; ++oy) {
            const std::size_t base = (oy * s + ky - pad) * w;
            const double* in_row = in_plane + base;
            double* dx_row = dx_plane + base;
            const double* dy_row = dy_plane + oy * wo;
            for (std::size_t ox = cols.lo; ox < cols.hi; ++ox) {
              const std::size_t ix = ox * s + kx - pad;
              acc += dy_row[ox] * in_row[ix];
              dx_row[ix] += wt * dy_row[ox];
            }
          }
          g.weights[widx] += acc;
        }
      }
    }
  }
}

double sigmoid(double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); }

void activation_forward(Activation fn, std::span<const double> x, std::span<double> y) {
  switch (fn) {
    case Activation::relu:
      std::transform(x.begin(), x.end(), y.begin(), [](double v) { return v > 0.0 ? v : 0.0; });
      break;
    case Activation::sigmoid:
      std::transform(x.begin(), x.end(), y.begin(), sigmoid);
      break;
    case Activation::linear:
      std::copy(x.begin(), x.end(), y.begin());
      break;
  }
}

void activation_backward(Activation fn, std::span<const double> x, std::span<const double> y,
                         std::span<const double> dy, std::span<double> dx) {
  for (std::size_t i = 0; i < dx.size(); ++i) {
    switch (fn) {
      case Activation::relu: dx[i] = x[i] > 0.0 ? dy[i] : 0.0; break;
      case Activation::sigmoid: dx[i] = dy[i] * y[i] * (1.0 - y[i]); break;
      case Activation::linear: dx[i] = dy[i]; break;
    }
  }
}

void upsample_forward(const Shape& in_shape, std::span<const double> x, std::span<double> y) {
  const std::size_t c_n = in_shape[0], h = in_shape[1], w = in_shape[2];
  for (std::size_t c = 0; c < c_n; ++c) {
    for (std::size_t iy = 0; iy < h; ++iy) {
      const double* in_row = x.data() + (c * h + iy) * w;
      double* r0 = y.data() + (c * 2 * h + 2 * iy) * 2 * w;
      double* r1 = r0 + 2 * w;
      for (std::size_t ix = 0; ix < w; ++ix) {
        r0[2 * ix] = r0[2 * ix + 1] = r1[2 * ix] = r1[2 * ix + 1] = in_row[ix];
      }
    }
  }
}

void upsample_backward(const Shape& in_shape, std::span<const double> dy, std::span<double> dx) {
  const std::size_t c_n = in_shape[0], h = in_shape[1], w = in_shape[2];
  for (std::size_t c = 0; c < c_n; ++c) {
    for (std::size_t iy = 0; iy < h; ++iy) {
      double* dx_row = dx.data() + (c * h + iy) * w;
      const double* r0 = dy.data() + (c * 2 * h + 2 * iy) * 2 * w;
      const double* r1 = r0 + 2 * w;
      for (std::size_t ix = 0; ix < w; ++ix) {
        dx_row[ix] = r0[2 * ix] + r0[2 * ix + 1] + r1[2 * ix] + r1[2 * ix + 1];
      }
    }
  }
}

// Values at every layer boundary: trace[0] is the input, trace[i + 1] the
// output of layer i.
std::vector<Tensor> forward_trace(const Network& net, const Tensor& input) {
  if (input.shape() != net.input_shape()) {
    shape_error("input shape " + to_string(input.shape()) + " does not match network input " +
                to_string(net.input_shape()));
  }
  const auto& layers = net.spec().layers;
  std::vector<Tensor> trace;
  trace.reserve(layers.size() + 1);
  trace.push_back(input);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Tensor& x = trace.back();
    Tensor y(net.layer_shapes()[i]);
    const auto& p = net.params()[i];
    std::visit(Overloaded{
                   [&](const Dense& d) { dense_forward(d, p, x.data(), y.data()); },
                   [&](const Conv2d& c) { conv_forward(c, p, x.shape(), x.data(), y.shape(), y.data()); },
                   [&](const ActivationLayer& a) { activation_forward(a.fn, x.data(), y.data()); },
                   [&](const Upsample2x&) { upsample_forward(x.shape(), x.data(), y.data()); },
                   [&](const Flatten&) { std::copy(x.data().begin(), x.data().end(), y.data().begin()); },
               },
               layers[i]);
    trace.push_back(std::move(y));
  }
  return trace;
}

void check_target(const Network& net, const Tensor& target) {
  if (target.shape() != net.output_shape()) {
    shape_error("target shape " + to_string(target.shape()) + " does not match network output " +
                to_string(net.output_shape()));
  }
}

double mse(const Tensor& y, const Tensor& t) {
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y[i] - t[i];
    acc += d * d;
  }
  return acc / static_cast<double>(y.size());
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != element_count(shape_)) {
    shape_error("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                to_string(shape_));
  }
}

std::size_t element_count(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

std::string_view to_string(Activation a) noexcept {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::linear: return "linear";
  }
  return "linear";
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "linear") return Activation::linear;
  throw Error(ErrorCode::invalid_argument, "unknown activation '" + std::string(name) + "'");
}

std::vector<Shape> propagate_shapes(const NetworkSpec& spec) {
  if (spec.layers.empty()) shape_error("network needs at least one layer");
  if (spec.input_shape.empty() ||
      std::any_of(spec.input_shape.begin(), spec.input_shape.end(), [](std::size_t d) { return d == 0; })) {
    shape_error("input shape " + to_string(spec.input_shape) + " is empty");
  }
  std::vector<Shape> shapes;
  Shape cur = spec.input_shape;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const std::string where = "layer " + std::to_string(i) + ": ";
    cur = std::visit(
        Overloaded{
            [&](const Dense& d) -> Shape {
              if (d.in == 0 || d.out == 0) shape_error(where + "dense sizes must be positive");
              if (cur.size() != 1 || cur[0] != d.in) {
                shape_error(where + "dense expects (" + std::to_string(d.in) + "), got " + to_string(cur));
              }
              return {d.out};
            },
            [&](const Conv2d& c) -> Shape {
              if (c.in_ch == 0 || c.out_ch == 0 || c.kernel == 0 || c.stride == 0) {
                shape_error(where + "conv2d sizes must be positive");
              }
              if (cur.size() != 3 || cur[0] != c.in_ch) {
                shape_error(where + "conv2d expects " + std::to_string(c.in_ch) + " channels, got " +
                            to_string(cur));
              }
              if (cur[1] + 2 * c.padding < c.kernel || cur[2] + 2 * c.padding < c.kernel) {
                shape_error(where + "conv2d kernel larger than padded input " + to_string(cur));
              }
              return {c.out_ch, (cur[1] + 2 * c.padding - c.kernel) / c.stride + 1,
                      (cur[2] + 2 * c.padding - c.kernel) / c.stride + 1};
            },
            [&](const ActivationLayer&) -> Shape { return cur; },
            [&](const Upsample2x&) -> Shape {
              if (cur.size() != 3) shape_error(where + "upsample2x expects (C,H,W), got " + to_string(cur));
              return {cur[0], cur[1] * 2, cur[2] * 2};
            },
            [&](const Flatten&) -> Shape { return {element_count(cur)}; },
        },
        spec.layers[i]);
    shapes.push_back(cur);
  }
  return shapes;
}

std::vector<std::string> summarize(const NetworkSpec& spec) {
  std::vector<std::string> out;
  bool after_parametric = false;
  for (const auto& layer : spec.layers) {
    if (const auto* a = std::get_if<ActivationLayer>(&layer); a && after_parametric) {
      out.back() += " " + std::string(to_string(a->fn));
      after_parametric = false;
      continue;
    }
    after_parametric = std::holds_alternative<Dense>(layer) || std::holds_alternative<Conv2d>(layer);
    out.push_back(std::visit(
        Overloaded{
            [](const Dense& d) { return "dense " + std::to_string(d.in) + "->" + std::to_string(d.out); },
            [](const Conv2d& c) {
              return "conv2d " + std::to_string(c.in_ch) + "->" + std::to_string(c.out_ch) + " k" +
                     std::to_string(c.kernel) + " s" + std::to_string(c.stride) + " p" +
                     std::to_string(c.padding);
            },
            [](const ActivationLayer& a) { return std::string(to_string(a.fn)); },
            [](const Upsample2x&) { return std::string("upsample2x"); },
            [](const Flatten&) { return std::string("flatten"); },
        },
        layer));
  }
  return out;
}

Network::Network(NetworkSpec spec) : spec_(std::move(spec)), shapes_(propagate_shapes(spec_)) {
  Rng rng(spec_.seed);
  params_.resize(spec_.layers.size());
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    std::size_t n_weights = 0, n_biases = 0, fan_in = 0, fan_out = 0;
    if (const auto* d = std::get_if<Dense>(&spec_.layers[i])) {
      n_weights = d->in * d->out;
      n_biases = d->out;
      fan_in = d->in;
      fan_out = d->out;
    } else if (const auto* c = std::get_if<Conv2d>(&spec_.layers[i])) {
      n_weights = c->out_ch * c->in_ch * c->kernel * c->kernel;
      n_biases = c->out_ch;
      fan_in = c->in_ch * c->kernel * c->kernel;
      fan_out = c->out_ch * c->kernel * c->kernel;
    }
    if (n_weights == 0) continue;
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    auto& p = params_[i];
    p.weights.resize(n_weights);
    for (double& w : p.weights) w = rng.uniform(-limit, limit);
    p.biases.assign(n_biases, 0.0);
  }
}

std::size_t Network::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.weights.size() + p.biases.size();
  return n;
}

std::vector<double> Network::flat_parameters() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const auto& p : params_) {
    flat.insert(flat.end(), p.weights.begin(), p.weights.end());
    flat.insert(flat.end(), p.biases.begin(), p.biases.end());
  }
  return flat;
}

void Network::set_flat_parameters(std::span<const double> flat) {
  if (flat.size() != parameter_count()) {
    shape_error("expected " + std::to_string(parameter_count()) + " parameters, got " +
                std::to_string(flat.size()));
  }
  std::size_t pos = 0;
  for (auto& p : params_) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), p.weights.size(), p.weights.begin());
    pos += p.weights.size();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), p.biases.size(), p.biases.begin());
    pos += p.biases.size();
  }
}

Network init_network(const NetworkSpec& spec) { return Network(spec); }

Tensor forward(const Network& net, const Tensor& input) { return std::move(forward_trace(net, input).back()); }

double mse_loss(const Network& net, const Tensor& input, const Tensor& target) {
  check_target(net, target);
  return mse(forward(net, input), target);
}

Gradients zero_gradients(const Network& net) {
  Gradients g(net.params().size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i].weights.assign(net.params()[i].weights.size(), 0.0);
    g[i].biases.assign(net.params()[i].biases.size(), 0.0);
  }
  return g;
}

void accumulate(Gradients& into, const Gradients& g, double scale) {
  for (std::size_t i = 0; i < into.size(); ++i) {
    for (std::size_t j = 0; j < into[i].weights.size(); ++j) into[i].weights[j] += scale * g[i].weights[j];
    for (std::size_t j = 0; j < into[i].biases.size(); ++j) into[i].biases[j] += scale * g[i].biases[j];
  }
}

BackwardResult backward(const Network& net, const Tensor& input, const Tensor& target) {
  check_target(net, target);
  const auto trace = forward_trace(net, input);
  const Tensor& y = trace.back();
  BackwardResult result;
  result.loss = mse(y, target);
  result.grads = zero_gradients(net);

  Tensor dy(y.shape());
  const double scale = 2.0 / static_cast<double>(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) dy[i] = scale * (y[i] - target[i]);

  const auto& layers = net.spec().layers;
  for (std::size_t li = layers.size(); li-- > 0;) {
    const Tensor& x = trace[li];
    const Tensor& out = trace[li + 1];
    Tensor dx(x.shape());
    const auto& p = net.params()[li];
    auto& g = result.grads[li];
    std::visit(Overloaded{
                   [&](const Dense& d) { dense_backward(d, p, x.data(), dy.data(), g, dx.data()); },
                   [&](const Conv2d& c) {
                     conv_backward(c, p, x.shape(), x.data(), out.shape(), dy.data(), g, dx.data());
                   },
                   [&](const ActivationLayer& a) {
                     activation_backward(a.fn, x.data(), out.data(), dy.data(), dx.data());
                   },
                   [&](const Upsample2x&) { upsample_backward(x.shape(), dy.data(), dx.data()); },
                   [&](const Flatten&) { std::copy(dy.data().begin(), dy.data().end(), dx.data().begin()); },
               },
               layers[li]);
    dy = std::move(dx);
  }
  return result;
}

void sgd_step(Network& net, const Gradients& grads, double lr) {
  auto& params = net.params();
  if (grads.size() != params.size()) shape_error("gradient layer count does not match network");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].weights.size() != params[i].weights.size() ||
        grads[i].biases.size() != params[i].biases.size()) {
      shape_error("gradient shape does not match layer " + std::to_string(i));
    }
    for (std::size_t j = 0; j < params[i].weights.size(); ++j) params[i].weights[j] -= lr * grads[i].weights[j];
    for (std::size_t j = 0; j < params[i].biases.size(); ++j) params[i].biases[j] -= lr * grads[i].biases[j];
  }
}

double gradient_check(const Network& net, const Tensor& input, const Tensor& target, double step) {
  if (!(step > 0.0) || !std::isfinite(step)) {
    throw Error(ErrorCode::invalid_argument, "gradient-check step must be positive");
  }
  const auto analytic = backward(net, input, target).grads;
  Network probe = net;
  double worst = 0.0;
  auto check = [&](double& param, double grad) {
    const double saved = param;
    param = saved + step;
    const double up = mse_loss(probe, input, target);
    param = saved - step;
    const double down = mse_loss(probe, input, target);
    param = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(grad), std::abs(numeric), kGradientCheckFloor});
    worst = std::max(worst, std::abs(grad - numeric) / denom);
  };
  for (std::size_t i = 0; i < probe.params().size(); ++i) {
    auto& p = probe.params()[i];
    for (std::size_t j = 0; j < p.weights.size(); ++j) check(p.weights[j], analytic[i].weights[j]);
    for (std::size_t j = 0; j < p.biases.size(); ++j) check(p.biases[j], analytic[i].biases[j]);
  }
  return worst;
}

void validate(const TrainingConfig& config) {
  if (!(config.learning_rate > 0.0) || !std::isfinite(config.learning_rate)) {
    throw Error(ErrorCode::invalid_argument, "learning_rate must be positive");
  }
  if (config.epochs < 1) throw Error(ErrorCode::invalid_argument, "epochs must be >= 1");
  if (config.batch_size < 1) throw Error(ErrorCode::invalid_argument, "batch_size must be >= 1");
}

std::vector<double> train(Network& net, std::span<const Example> examples, const TrainingConfig& config,
                          const EpochCallback& on_epoch) {
  validate(config);
  if (examples.empty()) throw Error(ErrorCode::dataset_too_small, "no training examples");
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(config.seed);
  const auto batch = static_cast<std::size_t>(config.batch_size);
  std::vector<double> curve;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t n = std::min(batch, order.size() - start);
      std::vector<BackwardResult> results(n);
      detail::parallel_for(n, [&](std::size_t i) {
        const auto& ex = examples[order[start + i]];
        results[i] = backward(net, ex.input, ex.target);
      });
      Gradients total = zero_gradients(net);
      for (const auto& r : results) {
        accumulate(total, r.grads, 1.0 / static_cast<double>(n));
        loss_sum += r.loss;
      }
      sgd_step(net, total, config.learning_rate);
    }
    const double epoch_loss = loss_sum / static_cast<double>(order.size());
    curve.push_back(epoch_loss);
    if (!std::isfinite(epoch_loss)) throw Error(ErrorCode::non_finite, "training diverged (non-finite loss)");
    if (on_epoch && !on_epoch(epoch, epoch_loss)) break;
  }
  return curve;
}

}  // namespace pallor::nn
