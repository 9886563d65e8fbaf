#include "pallor/manifest.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "pallor/error.hpp"

namespace pallor {

namespace {

std::vector<std::string> split_csv_line(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> fields;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

template <typename T>
T parse_field(const std::string& text, const std::string& column, std::size_t line_no) {
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
    throw Error(ErrorCode::invalid_argument, "manifest line " + std::to_string(line_no) + ": bad " + column +
                                                 " value '" + text + "'");
  }
  return value;
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw Error(ErrorCode::missing_file, "no such manifest: " + csv_path.string());
  const auto base = csv_path.parent_path();
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::corrupt_header, "manifest is empty");
  const auto header = split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* required : {"image_path", "card_x", "card_y", "card_w", "card_h", "gold_hb"}) {
    if (!col.contains(required)) {
      throw Error(ErrorCode::corrupt_header, std::string("manifest lacks column ") + required);
    }
  }
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
  };
  std::vector<ManifestRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) {
      throw Error(ErrorCode::invalid_argument, "manifest line " + std::to_string(line_no) + " has " +
                                                   std::to_string(f.size()) + " fields, expected " +
                                                   std::to_string(header.size()));
    }
    ManifestRow row;
    row.image_path = resolve(f[col["image_path"]]);
    row.card = {parse_field<int>(f[col["card_x"]], "card_x", line_no),
                parse_field<int>(f[col["card_y"]], "card_y", line_no),
                parse_field<int>(f[col["card_w"]], "card_w", line_no),
                parse_field<int>(f[col["card_h"]], "card_h", line_no)};
    row.gold_hb = parse_field<double>(f[col["gold_hb"]], "gold_hb", line_no);
    if (col.contains("gold_ei") && !f[col["gold_ei"]].empty()) {
      row.gold_ei = parse_field<double>(f[col["gold_ei"]], "gold_ei", line_no);
    }
    if (col.contains("mask_path") && !f[col["mask_path"]].empty()) row.mask_path = resolve(f[col["mask_path"]]);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_manifest(const std::filesystem::path& csv_path, const std::vector<ManifestRow>& rows) {
  std::ofstream out(csv_path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::unwritable_path, "cannot write manifest: " + csv_path.string());
  const auto base = csv_path.parent_path();
  const bool extended = std::any_of(rows.begin(), rows.end(), [](const ManifestRow& r) {
    return r.gold_ei.has_value() || r.mask_path.has_value();
  });
  auto rel = [&](const std::filesystem::path& p) {
    const auto r = p.lexically_relative(base);
    return (r.empty() ? p : r).generic_string();
  };
  out << "image_path,card_x,card_y,card_w,card_h,gold_hb";
  if (extended) out << ",gold_ei,mask_path";
  out << '\n';
  for (const auto& r : rows) {
    out << rel(r.image_path) << ',' << r.card.x << ',' << r.card.y << ',' << r.card.w << ',' << r.card.h << ','
        << format_number(r.gold_hb);
    if (extended) {
      out << ',' << (r.gold_ei ? format_number(*r.gold_ei) : "") << ','
          << (r.mask_path ? rel(*r.mask_path) : "");
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::unwritable_path, "write failed: " + csv_path.string());
}

}  // namespace pallor
