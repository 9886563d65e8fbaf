#include "pallor/error.hpp"

namespace pallor {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::missing_file: return "missing_file";
    case ErrorCode::unsupported_format: return "unsupported_format";
    case ErrorCode::corrupt_header: return "corrupt_header";
    case ErrorCode::truncated_data: return "truncated_data";
    case ErrorCode::unwritable_path: return "unwritable_path";
    case ErrorCode::empty_region: return "empty_region";
    case ErrorCode::out_of_bounds: return "out_of_bounds";
    case ErrorCode::under_floor: return "under_floor";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::mask_too_small: return "segmentation_failed";
    case ErrorCode::bad_magic: return "bad_magic";
    case ErrorCode::version_mismatch: return "version_mismatch";
    case ErrorCode::spec_mismatch: return "spec_mismatch";
    case ErrorCode::dataset_too_small: return "dataset_too_small";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::model_not_loaded: return "model_not_loaded";
  }
  return "unknown";
}

}  // namespace pallor
