#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace psynorm::text {

std::string_view trim(std::string_view s);
std::vector<std::string> split(std::string_view line, char delim);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Number of Unicode scalar values in a UTF-8 string. Invalid bytes count as
/// one each.
std::size_t utf8_length(std::string_view s);

/// ASCII case-fold; non-ASCII bytes pass through.
std::string fold_case(std::string_view s);

/// Removes leading and trailing punctuation (ASCII punctuation plus the
/// typographic quotes and dashes models like to emit).
std::string strip_edge_punct(std::string_view s);

/// fold_case(strip_edge_punct(s)); falls back to fold_case(s) when stripping
/// leaves nothing, so a token like "--" still compares to itself.
std::string normalize_word(std::string_view s);

std::optional<double> parse_double(std::string_view s);
std::optional<long long> parse_int(std::string_view s);

/// Shortest decimal representation that round-trips to the same double.
std::string format_double(double v);

/// Read a whole file; throws DataError when unreadable.
std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

/// Splits into lines, dropping a trailing '\r' on each.
std::vector<std::string> lines(std::string_view content);

}  // namespace psynorm::text
