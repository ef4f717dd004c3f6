#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace heteo::csv {

/// Header plus rows of raw string fields. Handles double-quoted fields with
/// "" escapes; no embedded newlines.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> column(std::string_view name) const;
};

Table parse(std::string_view text);
Table read(const std::filesystem::path& path);

std::string escape(std::string_view field);

double to_double(const std::string& field, std::string_view what);

}  // namespace heteo::csv
