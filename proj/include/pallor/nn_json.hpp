#pragma once

#include <json.hpp>

#include "pallor/nn.hpp"

namespace pallor::nn {

nlohmann::json spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const nlohmann::json& j);

nlohmann::json standardization_to_json(const Standardization& s);
Standardization standardization_from_json(const nlohmann::json& j);

}  // namespace pallor::nn
