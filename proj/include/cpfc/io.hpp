#pragma once

#include <string>
#include <vector>

namespace cpfc {

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

/// Split one CSV line on commas and trim surrounding whitespace. No quoting.
std::vector<std::string> split_csv_line(const std::string& line);

/// Parse a finite double; throws std::invalid_argument on trailing garbage.
double parse_number(const std::string& text);

/// Shortest round-trip representation of a double ("inf"/"-inf"/"nan" for
/// non-finite values).
std::string format_number(double v);

std::string fnv1a_hex(const std::string& data);

}  // namespace cpfc
