#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pallor {

enum class ErrorCode {
  missing_file,
  unsupported_format,
  corrupt_header,
  truncated_data,
  unwritable_path,
  empty_region,
  out_of_bounds,
  under_floor,
  dimension_mismatch,
  shape_mismatch,
  invalid_argument,
  mask_too_small,
  bad_magic,
  version_mismatch,
  spec_mismatch,
  dataset_too_small,
  non_finite,
  model_not_loaded,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace pallor
