#pragma once

// HTTP inference service.
//
//   POST /v1/predict   multipart form (`image` file part + `meta` JSON part),
//                      or a JSON body with the image base64-encoded in `image`
//   GET  /v1/health    {status, model_id, uptime}
//   GET  /v1/model     network specs and standardization constants
//
// Every error response carries a JSON body {error_code, message}.

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pallor/nn.hpp"
#include "pallor/screening.hpp"

namespace pallor {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  ///< 0 binds an ephemeral port
  std::filesystem::path regressor_weights;
  std::filesystem::path segmenter_weights;
  std::size_t max_payload_bytes = 16u * 1024u * 1024u;
  std::vector<double> default_cutoffs = kDefaultCutoffs;
  bool cors = false;
};

/// Reads a JSON config file. Recognized keys: listen ("host:port"),
/// regressor_weights, segmenter_weights, max_payload_bytes, default_cutoffs,
/// cors. Relative weight paths resolve against the config file's directory.
ServiceConfig load_service_config(const std::filesystem::path& path);

/// Applies PALLOR_LISTEN, PALLOR_REGRESSOR_WEIGHTS, PALLOR_SEGMENTER_WEIGHTS,
/// PALLOR_MAX_PAYLOAD_BYTES and PALLOR_CORS when set.
void apply_environment(ServiceConfig& config);

/// Lowercase hex SHA-256 of a file's bytes.
std::string file_sha256(const std::filesystem::path& path);

/// Loaded model state, immutable while serving.
struct ServiceModels {
  std::optional<nn::Network> regressor;
  std::optional<nn::Network> segmenter;
  std::string model_id;      ///< SHA-256 of the regressor weights file
  std::string segmenter_id;  ///< SHA-256 of the segmenter weights file
};

/// Loads whatever weights the config names. Missing or unreadable files
/// leave the corresponding model unloaded; the reasons are returned in `errors`.
ServiceModels load_models(const ServiceConfig& config, std::vector<std::string>* errors = nullptr);

class Service {
 public:
  Service(ServiceConfig config, ServiceModels models);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds the socket; returns the bound port.
  int bind();
  /// Serves until stop(). Call bind() first.
  void run();
  void stop();

  bool ready() const noexcept;
  nlohmann::json health() const;
  /// Throws Error(model_not_loaded) when no regressor is loaded.
  nlohmann::json model_info() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace pallor
