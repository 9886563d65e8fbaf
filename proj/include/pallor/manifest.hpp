#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "pallor/image.hpp"

namespace pallor {

/// One row of a dataset manifest CSV:
///   image_path,card_x,card_y,card_w,card_h,gold_hb[,gold_ei,mask_path]
/// Relative paths are resolved against the manifest's directory.
struct ManifestRow {
  std::filesystem::path image_path;
  Roi card;
  double gold_hb = 0.0;
  std::optional<double> gold_ei;
  std::optional<std::filesystem::path> mask_path;
};

std::vector<ManifestRow> read_manifest(const std::filesystem::path& csv_path);

/// Writes rows with paths relative to the manifest directory when possible.
void write_manifest(const std::filesystem::path& csv_path, const std::vector<ManifestRow>& rows);

/// Shortest decimal text that parses back to the same double.
std::string format_number(double v);

}  // namespace pallor
