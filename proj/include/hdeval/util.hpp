#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace hdeval {

// Lower-case hex SHA-256 of the given bytes.
std::string sha256_hex(std::string_view bytes);

// Shortest decimal representation that parses back to the same double.
std::string format_double(double value);

// Strict full-string double parse; throws ParseError.
double parse_double(std::string_view text);

std::string read_file(const std::filesystem::path& path);

// Writes through a temporary sibling then renames, so readers never see a
// half-written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::vector<std::string> split_csv_line(std::string_view line);

// One line-delimited JSON event on stderr: {"event": ..., <fields>}.
void log_event(std::string_view event, nlohmann::json fields = nlohmann::json::object());

}  // namespace hdeval
