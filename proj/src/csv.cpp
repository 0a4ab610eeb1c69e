#include "bgnn/csv.hpp"

#include <charconv>
#include <fstream>

#include "bgnn/errors.hpp"

namespace bgnn::csv {

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string_view::npos ? comma : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  for (auto& f : fields) {
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
  }
  return fields;
}

std::string number(double x) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

std::string optional_number(const std::optional<double>& x) { return x ? number(*x) : std::string(); }

double to_double(std::string_view field, const std::filesystem::path& path, std::size_t line) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (field.empty() || ec != std::errc{} || ptr != field.data() + field.size()) {
    throw ParseError(path.string(), line, "not a number: '" + std::string(field) + "'");
  }
  return value;
}

std::size_t to_index(std::string_view field, const std::filesystem::path& path, std::size_t line) {
  std::size_t value = 0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (field.empty() || ec != std::errc{} || ptr != field.data() + field.size()) {
    throw ParseError(path.string(), line, "not a non-negative integer: '" + std::string(field) + "'");
  }
  return value;
}

std::optional<double> to_optional(std::string_view field, const std::filesystem::path& path,
                                  std::size_t line) {
  if (field.empty()) return std::nullopt;
  return to_double(field, path, line);
}

std::vector<Row> read(const std::filesystem::path& path, std::size_t expected_fields) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string(), 0, "cannot open");
  std::vector<Row> rows;
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError(path.string(), 1, "missing header row");
  ++line_no;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split(line);
    if (fields.size() != expected_fields) {
      throw ParseError(path.string(), line_no,
                       "expected " + std::to_string(expected_fields) + " fields, got " +
                           std::to_string(fields.size()));
    }
    Row row;
    row.line = line_no;
    for (auto f : fields) row.fields.emplace_back(f);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace bgnn::csv
