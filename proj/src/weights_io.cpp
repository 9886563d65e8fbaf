// Weights file layout (binary, all integers and reals little-endian):
//
//   "PALLOR-NN"                      9 bytes magic
//   u32  format version              currently 1
//   u64  n, then n bytes             NetworkSpec as compact JSON text
//   4 x (u64 n, then n x f64)        input_mean, input_std, output_mean, output_std
//   u64  n, then n x f64             parameters in layer order, weights then biases
//
// The JSON twin carries the same fields under "magic", "version", "spec",
// "standardization" and "parameters".

#include <bit>
#include <cmath>
#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>

#include "pallor/error.hpp"
#include "pallor/nn.hpp"
#include "pallor/nn_json.hpp"

namespace pallor::nn {

namespace {

using nlohmann::json;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64s(std::vector<std::uint8_t>& out, const std::vector<double>& values) {
  put_u64(out, values.size());
  for (double v : values) put_u64(out, std::bit_cast<std::uint64_t>(v));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::span<const std::uint8_t> take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw Error(ErrorCode::truncated_data, "weights file is truncated");
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint64_t u64() {
    const auto s = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | s[static_cast<std::size_t>(i)];
    return v;
  }
  std::uint32_t u32() {
    const auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | s[static_cast<std::size_t>(i)];
    return v;
  }
  std::vector<double> f64s() {
    const auto n = u64();
    if (n > remaining() / 8) throw Error(ErrorCode::truncated_data, "weights file is truncated");
    std::vector<double> values(n);
    for (auto& v : values) v = std::bit_cast<double>(u64());
    return values;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void check_standardization(const Standardization& s, const Network& net) {
  auto ok = [](const std::vector<double>& a, const std::vector<double>& b, std::size_t n) {
    return a.size() == b.size() && (a.empty() || a.size() == n);
  };
  if (!ok(s.input_mean, s.input_std, element_count(net.input_shape())) ||
      !ok(s.output_mean, s.output_std, element_count(net.output_shape()))) {
    throw Error(ErrorCode::spec_mismatch, "standardization constants do not match the network shape");
  }
}

Network assemble(NetworkSpec spec, Standardization scaling, const std::vector<double>& params) {
  Network net(std::move(spec));
  if (params.size() != net.parameter_count()) {
    throw Error(ErrorCode::spec_mismatch, "weights file holds " + std::to_string(params.size()) +
                                              " parameters, spec needs " +
                                              std::to_string(net.parameter_count()));
  }
  net.set_flat_parameters(params);
  check_standardization(scaling, net);
  net.set_standardization(std::move(scaling));
  return net;
}

Network parse_json_weights(std::span<const std::uint8_t> bytes) {
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::truncated_data, std::string("weights JSON is malformed: ") + e.what());
  }
  try {
    if (!j.is_object() || j.value("magic", std::string()) != kWeightsMagic) {
      throw Error(ErrorCode::bad_magic, "weights JSON lacks the PALLOR-NN magic");
    }
    if (j.at("version").get<std::uint32_t>() != kWeightsVersion) {
      throw Error(ErrorCode::version_mismatch,
                  "unsupported weights version " + j.at("version").dump());
    }
    return assemble(spec_from_json(j.at("spec")), standardization_from_json(j.at("standardization")),
                    j.at("parameters").get<std::vector<double>>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::corrupt_header, std::string("weights JSON is incomplete: ") + e.what());
  }
}

}  // namespace

json spec_to_json(const NetworkSpec& spec) {
  json layers = json::array();
  for (const auto& layer : spec.layers) {
    layers.push_back(std::visit(
        Overloaded{
            [](const Dense& d) { return json{{"type", "dense"}, {"in", d.in}, {"out", d.out}}; },
            [](const Conv2d& c) {
              return json{{"type", "conv2d"}, {"in_ch", c.in_ch},   {"out_ch", c.out_ch},
                          {"kernel", c.kernel}, {"stride", c.stride}, {"padding", c.padding}};
            },
            [](const ActivationLayer& a) { return json{{"type", "activation"}, {"fn", to_string(a.fn)}}; },
            [](const Upsample2x&) { return json{{"type", "upsample2x"}}; },
            [](const Flatten&) { return json{{"type", "flatten"}}; },
        },
        layer));
  }
  return json{{"input_shape", spec.input_shape}, {"layers", layers}, {"seed", spec.seed}};
}

NetworkSpec spec_from_json(const json& j) {
  NetworkSpec spec;
  try {
    spec.input_shape = j.at("input_shape").get<Shape>();
    spec.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& l : j.at("layers")) {
      const auto type = l.at("type").get<std::string>();
      if (type == "dense") {
        spec.layers.emplace_back(Dense{l.at("in").get<std::size_t>(), l.at("out").get<std::size_t>()});
      } else if (type == "conv2d") {
        spec.layers.emplace_back(Conv2d{l.at("in_ch").get<std::size_t>(), l.at("out_ch").get<std::size_t>(),
                                        l.at("kernel").get<std::size_t>(), l.at("stride").get<std::size_t>(),
                                        l.at("padding").get<std::size_t>()});
      } else if (type == "activation") {
        spec.layers.emplace_back(ActivationLayer{parse_activation(l.at("fn").get<std::string>())});
      } else if (type == "upsample2x") {
        spec.layers.emplace_back(Upsample2x{});
      } else if (type == "flatten") {
        spec.layers.emplace_back(Flatten{});
      } else {
        throw Error(ErrorCode::corrupt_header, "unknown layer type '" + type + "'");
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::corrupt_header, std::string("malformed network spec: ") + e.what());
  }
  return spec;
}

json standardization_to_json(const Standardization& s) {
  return json{{"input_mean", s.input_mean},
              {"input_std", s.input_std},
              {"output_mean", s.output_mean},
              {"output_std", s.output_std}};
}

Standardization standardization_from_json(const json& j) {
  Standardization s;
  s.input_mean = j.at("input_mean").get<std::vector<double>>();
  s.input_std = j.at("input_std").get<std::vector<double>>();
  s.output_mean = j.at("output_mean").get<std::vector<double>>();
  s.output_std = j.at("output_std").get<std::vector<double>>();
  return s;
}

std::vector<std::uint8_t> serialize_weights(const Network& net, WeightsFormat format) {
  if (format == WeightsFormat::json) {
    const json j{{"magic", kWeightsMagic},
                 {"version", kWeightsVersion},
                 {"spec", spec_to_json(net.spec())},
                 {"standardization", standardization_to_json(net.standardization())},
                 {"parameters", net.flat_parameters()}};
    const std::string text = j.dump(1) + "\n";
    return {text.begin(), text.end()};
  }
  std::vector<std::uint8_t> out(kWeightsMagic.begin(), kWeightsMagic.end());
  put_u32(out, kWeightsVersion);
  const std::string spec_text = spec_to_json(net.spec()).dump();
  put_u64(out, spec_text.size());
  out.insert(out.end(), spec_text.begin(), spec_text.end());
  const auto& s = net.standardization();
  put_f64s(out, s.input_mean);
  put_f64s(out, s.input_std);
  put_f64s(out, s.output_mean);
  put_f64s(out, s.output_std);
  put_f64s(out, net.flat_parameters());
  return out;
}

Network deserialize_weights(std::span<const std::uint8_t> bytes) {
  std::size_t first = 0;
  while (first < bytes.size() && std::isspace(bytes[first])) ++first;
  if (first < bytes.size() && bytes[first] == '{') return parse_json_weights(bytes);

  Reader r(bytes);
  if (bytes.size() < kWeightsMagic.size()) {
    throw Error(ErrorCode::bad_magic, "weights file too short for the PALLOR-NN magic");
  }
  const auto magic = r.take(kWeightsMagic.size());
  if (!std::equal(magic.begin(), magic.end(), kWeightsMagic.begin())) {
    throw Error(ErrorCode::bad_magic, "not a PALLOR-NN weights file");
  }
  const auto version = r.u32();
  if (version != kWeightsVersion) {
    throw Error(ErrorCode::version_mismatch, "unsupported weights version " + std::to_string(version));
  }
  const auto spec_len = r.u64();
  if (spec_len > r.remaining()) throw Error(ErrorCode::truncated_data, "weights file is truncated");
  const auto spec_bytes = r.take(spec_len);
  json spec_json;
  try {
    spec_json = json::parse(spec_bytes.begin(), spec_bytes.end());
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::corrupt_header, std::string("malformed network spec: ") + e.what());
  }
  Standardization s;
  s.input_mean = r.f64s();
  s.input_std = r.f64s();
  s.output_mean = r.f64s();
  s.output_std = r.f64s();
  const auto params = r.f64s();
  if (r.remaining() != 0) throw Error(ErrorCode::corrupt_header, "trailing bytes after weights");
  return assemble(spec_from_json(spec_json), std::move(s), params);
}

void save_weights(const Network& net, const std::filesystem::path& path, WeightsFormat format) {
  const auto bytes = serialize_weights(net, format);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::unwritable_path, "cannot write weights: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::unwritable_path, "write failed: " + path.string());
}

Network load_weights(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw Error(ErrorCode::missing_file, "no such weights file: " + path.string());
  }
  std::ifstream in(path, std::ios::binary);
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return deserialize_weights(bytes);
}

Network load_weights(const std::filesystem::path& path, const NetworkSpec& expected) {
  Network net = load_weights(path);
  if (!(net.spec() == expected)) {
    throw Error(ErrorCode::spec_mismatch, "weights file spec differs from the expected network spec");
  }
  return net;
}

}  // namespace pallor::nn
