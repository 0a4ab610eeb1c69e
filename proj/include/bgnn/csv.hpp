#pragma once

// Minimal CSV helpers shared by the dataset, report and sweep formats.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace bgnn::csv {

std::vector<std::string_view> split(std::string_view line);

/// Shortest representation that parses back to the same double.
std::string number(double x);
/// number(x), or an empty field when absent.
std::string optional_number(const std::optional<double>& x);

double to_double(std::string_view field, const std::filesystem::path& path, std::size_t line);
std::size_t to_index(std::string_view field, const std::filesystem::path& path, std::size_t line);
/// Empty field -> nullopt.
std::optional<double> to_optional(std::string_view field, const std::filesystem::path& path,
                                  std::size_t line);

struct Row {
  std::size_t line = 0;  ///< 1-based line number in the file
  std::vector<std::string> fields;
};

/// Reads a headered CSV and checks every data row has `expected_fields`
/// fields. Blank lines are skipped.
std::vector<Row> read(const std::filesystem::path& path, std::size_t expected_fields);

}  // namespace bgnn::csv
