#include "pallor/service.hpp"

#include <openssl/evp.h>

#include <boost/beast/core/detail/base64.hpp>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iterator>

#include <httplib.h>

#include "pallor/error.hpp"
#include "pallor/nn_json.hpp"
#include "pallor/pipeline.hpp"

namespace pallor {

using nlohmann::json;

namespace {

std::pair<std::string, int> parse_listen(const std::string& listen) {
  const auto colon = listen.rfind(':');
  if (colon == std::string::npos || colon == 0) {
    throw Error(ErrorCode::invalid_argument, "listen address must be host:port, got '" + listen + "'");
  }
  try {
    std::size_t used = 0;
    const std::string port_text = listen.substr(colon + 1);
    const int port = std::stoi(port_text, &used);
    if (used != port_text.size() || port < 0 || port > 65535) throw std::out_of_range("port");
    return {listen.substr(0, colon), port};
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::invalid_argument, "invalid port in listen address '" + listen + "'");
  }
}

std::vector<double> parse_cutoffs(const json& j) {
  if (!j.is_array() || j.empty()) throw Error(ErrorCode::invalid_argument, "cutoffs must be a non-empty array");
  std::vector<double> out;
  for (const auto& c : j) {
    if (!c.is_number()) throw Error(ErrorCode::invalid_argument, "cutoffs must be numbers");
    const double v = c.get<double>();
    if (!(v > 0.0) || !std::isfinite(v)) throw Error(ErrorCode::invalid_argument, "cutoffs must be positive");
    out.push_back(v);
  }
  return out;
}

bool parse_bool(const std::string& s) {
  if (s == "1" || s == "true" || s == "on" || s == "yes") return true;
  if (s == "0" || s == "false" || s == "off" || s == "no" || s.empty()) return false;
  throw Error(ErrorCode::invalid_argument, "expected a boolean, got '" + s + "'");
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::mask_too_small:
    case ErrorCode::under_floor:
      return 422;
    case ErrorCode::model_not_loaded:
      return 503;
    default:
      return 400;
  }
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& message,
                json reason = nullptr) {
  json body{{"error_code", std::string(code)}, {"message", message}};
  if (!reason.is_null()) body["reason"] = std::move(reason);
  send_json(res, status, body);
}

std::string status_code_name(int status) {
  switch (status) {
    case 400: return "bad_request";
    case 404: return "not_found";
    case 405: return "method_not_allowed";
    case 413: return "payload_too_large";
    case 415: return "unsupported_media_type";
    case 503: return "model_not_loaded";
    default: return status >= 500 ? "internal_error" : "request_error";
  }
}

std::string decode_base64(const std::string& text) {
  namespace b64 = boost::beast::detail::base64;
  std::string clean;
  clean.reserve(text.size());
  for (char c : text) {
    if (c != '\n' && c != '\r' && c != ' ') clean.push_back(c);
  }
  if (clean.size() % 4 != 0) throw Error(ErrorCode::invalid_argument, "image is not valid base64");
  std::size_t data_size = clean.size();
  for (int pad = 0; pad < 2 && data_size > 0 && clean[data_size - 1] == '='; ++pad) --data_size;
  std::string out(b64::decoded_size(clean.size()), '\0');
  const auto [written, read] = b64::decode(out.data(), clean.data(), data_size);
  if (read != data_size) throw Error(ErrorCode::invalid_argument, "image is not valid base64");
  out.resize(written);
  return out;
}

struct ParsedRequest {
  std::string image;
  json meta;
};

ParsedRequest parse_request(const httplib::Request& req) {
  ParsedRequest parsed;
  if (req.is_multipart_form_data()) {
    if (req.files.count("image") != 1) {
      throw Error(ErrorCode::invalid_argument, "multipart request needs exactly one 'image' part");
    }
    parsed.image = req.get_file_value("image").content;
    if (req.has_file("meta")) {
      try {
        parsed.meta = json::parse(req.get_file_value("meta").content);
      } catch (const json::exception& e) {
        throw Error(ErrorCode::invalid_argument, std::string("meta part is not valid JSON: ") + e.what());
      }
    } else {
      parsed.meta = json::object();
    }
  } else {
    try {
      parsed.meta = json::parse(req.body);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::invalid_argument, std::string("body is not valid JSON: ") + e.what());
    }
    if (!parsed.meta.is_object() || !parsed.meta.contains("image") || !parsed.meta["image"].is_string()) {
      throw Error(ErrorCode::invalid_argument, "JSON request needs a base64 'image' string");
    }
    parsed.image = decode_base64(parsed.meta["image"].get<std::string>());
  }
  if (!parsed.meta.is_object()) throw Error(ErrorCode::invalid_argument, "meta must be a JSON object");
  return parsed;
}

PipelineOptions options_from_meta(const json& meta, const ServiceConfig& config) {
  PipelineOptions options;
  if (!meta.contains("card_roi")) throw Error(ErrorCode::invalid_argument, "card_roi is required");
  options.card_roi = roi_from_json(meta["card_roi"]);
  if (meta.contains("conjunctiva_roi") && !meta["conjunctiva_roi"].is_null()) {
    options.conjunctiva_roi = roi_from_json(meta["conjunctiva_roi"]);
  }
  if (meta.contains("segmenter") && !meta["segmenter"].is_null()) {
    if (!meta["segmenter"].is_string()) throw Error(ErrorCode::invalid_argument, "segmenter must be a string");
    options.segmenter = parse_segmenter(meta["segmenter"].get<std::string>());
  }
  options.cutoffs = meta.contains("cutoffs") && !meta["cutoffs"].is_null() ? parse_cutoffs(meta["cutoffs"])
                                                                          : config.default_cutoffs;
  return options;
}

json network_info(const nn::Network& net, const std::string& id) {
  return {{"id", id},
          {"spec", nn::spec_to_json(net.spec())},
          {"layers", nn::summarize(net.spec())},
          {"parameter_count", net.parameter_count()},
          {"standardization", nn::standardization_to_json(net.standardization())}};
}

}  // namespace

ServiceConfig load_service_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::missing_file, "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::invalid_argument, "config " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::invalid_argument, "config must be a JSON object");

  ServiceConfig config;
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path fp(p);
    return fp.is_absolute() || p.empty() ? fp : base / fp;
  };
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "listen") {
        std::tie(config.host, config.port) = parse_listen(value.get<std::string>());
      } else if (key == "regressor_weights") {
        config.regressor_weights = resolve(value.get<std::string>());
      } else if (key == "segmenter_weights") {
        config.segmenter_weights = resolve(value.get<std::string>());
      } else if (key == "max_payload_bytes") {
        config.max_payload_bytes = value.get<std::size_t>();
      } else if (key == "default_cutoffs") {
        config.default_cutoffs = parse_cutoffs(value);
      } else if (key == "cors") {
        config.cors = value.get<bool>();
      } else {
        throw Error(ErrorCode::invalid_argument, "unknown config key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::invalid_argument, std::string("bad config value: ") + e.what());
  }
  return config;
}

void apply_environment(ServiceConfig& config) {
  auto env = [](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    if (v == nullptr) return std::nullopt;
    return std::string(v);
  };
  if (auto v = env("PALLOR_LISTEN")) std::tie(config.host, config.port) = parse_listen(*v);
  if (auto v = env("PALLOR_REGRESSOR_WEIGHTS")) config.regressor_weights = *v;
  if (auto v = env("PALLOR_SEGMENTER_WEIGHTS")) config.segmenter_weights = *v;
  if (auto v = env("PALLOR_MAX_PAYLOAD_BYTES")) {
    try {
      config.max_payload_bytes = std::stoull(*v);
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::invalid_argument, "PALLOR_MAX_PAYLOAD_BYTES must be an integer");
    }
  }
  if (auto v = env("PALLOR_CORS")) config.cors = parse_bool(*v);
}

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::missing_file, "cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::invalid_argument, "SHA-256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < length; ++i) {
    hex.push_back(kHex[digest[i] >> 4]);
    hex.push_back(kHex[digest[i] & 0xF]);
  }
  return hex;
}

ServiceModels load_models(const ServiceConfig& config, std::vector<std::string>* errors) {
  ServiceModels models;
  auto note = [&](const std::string& msg) {
    if (errors != nullptr) errors->push_back(msg);
  };
  if (!config.regressor_weights.empty()) {
    try {
      models.regressor = nn::load_weights(config.regressor_weights);
      models.model_id = file_sha256(config.regressor_weights);
    } catch (const Error& e) {
      models.regressor.reset();
      note("regressor: " + std::string(e.what()));
    }
  }
  if (!config.segmenter_weights.empty()) {
    try {
      models.segmenter = nn::load_weights(config.segmenter_weights);
      models.segmenter_id = file_sha256(config.segmenter_weights);
    } catch (const Error& e) {
      models.segmenter.reset();
      note("segmenter: " + std::string(e.what()));
    }
  }
  return models;
}

struct Service::Impl {
  ServiceConfig config;
  ServiceModels models;
  httplib::Server server;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

  void predict(const httplib::Request& req, httplib::Response& res) const {
    if (req.body.size() > config.max_payload_bytes) {
      send_error(res, 413, "payload_too_large",
                 "payload of " + std::to_string(req.body.size()) + " bytes exceeds the limit of " +
                     std::to_string(config.max_payload_bytes));
      return;
    }
    try {
      if (!models.regressor) throw Error(ErrorCode::model_not_loaded, "no regressor weights are loaded");
      const ParsedRequest parsed = parse_request(req);
      const PipelineOptions options = options_from_meta(parsed.meta, config);
      const RgbImage image = decode_image(std::span<const std::uint8_t>(
          reinterpret_cast<const std::uint8_t*>(parsed.image.data()), parsed.image.size()));
      const Models view{models.segmenter ? &*models.segmenter : nullptr, &*models.regressor, models.model_id};
      send_json(res, 200, to_json(run_pipeline(image, options, view)));
    } catch (const Error& e) {
      json reason = nullptr;
      if (e.code() == ErrorCode::mask_too_small) reason = {{"cause", "mask_below_min_area"}};
      send_error(res, http_status(e.code()), to_string(e.code()), e.what(), std::move(reason));
    }
  }
};

Service::Service(ServiceConfig config, ServiceModels models) : impl_(std::make_unique<Impl>()) {
  impl_->config = std::move(config);
  impl_->models = std::move(models);
  auto& server = impl_->server;
  const Impl& self = *impl_;

  server.set_payload_max_length(self.config.max_payload_bytes);
  if (self.config.cors) {
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                {"Access-Control-Allow-Headers", "Content-Type"}});
    server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  }

  server.Post("/v1/predict", [&self](const httplib::Request& req, httplib::Response& res) { self.predict(req, res); });
  server.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
    send_json(res, ready() ? 200 : 503, health());
  });
  server.Get("/v1/model", [this](const httplib::Request&, httplib::Response& res) {
    try {
      send_json(res, 200, model_info());
    } catch (const Error& e) {
      send_error(res, http_status(e.code()), to_string(e.code()), e.what());
    }
  });
  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    send_error(res, res.status, status_code_name(res.status), httplib::status_message(res.status));
  });
  server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string message = "unexpected failure";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      message = e.what();
    } catch (...) {
    }
    send_error(res, 500, "internal_error", message);
  });
}

Service::~Service() = default;

int Service::bind() {
  auto& server = impl_->server;
  const auto& config = impl_->config;
  int port = config.port;
  if (port == 0) {
    port = server.bind_to_any_port(config.host);
  } else if (!server.bind_to_port(config.host, port)) {
    port = -1;
  }
  if (port < 0) {
    throw Error(ErrorCode::invalid_argument, "cannot bind " + config.host + ":" + std::to_string(config.port));
  }
  return port;
}

void Service::run() { impl_->server.listen_after_bind(); }

void Service::stop() { impl_->server.stop(); }

bool Service::ready() const noexcept { return impl_->models.regressor.has_value(); }

json Service::health() const {
  const double uptime =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - impl_->started).count();
  return {{"status", ready() ? "ok" : "unavailable"},
          {"model_id", ready() ? json(impl_->models.model_id) : json(nullptr)},
          {"uptime", uptime}};
}

json Service::model_info() const {
  const auto& m = impl_->models;
  if (!m.regressor) throw Error(ErrorCode::model_not_loaded, "no regressor weights are loaded");
  return {{"model_id", m.model_id},
          {"regressor", network_info(*m.regressor, m.model_id)},
          {"segmenter", m.segmenter ? network_info(*m.segmenter, m.segmenter_id) : json(nullptr)}};
}

}  // namespace pallor
