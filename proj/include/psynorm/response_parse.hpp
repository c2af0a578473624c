#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace psynorm {

enum class ScalarStatus { ok, clamped, no_number };
std::string_view to_string(ScalarStatus s);

struct ParsedScalar {
  std::optional<double> value;  // in [0,1] whenever present
  ScalarStatus status = ScalarStatus::no_number;
  std::string raw;
};

/// First decimal numeral in the text. Out-of-range values are clamped to
/// [0,1] and flagged.
ParsedScalar parse_scalar_rating(std::string_view text);

enum class MapStatus { ok, recovered, unparseable };
std::string_view to_string(MapStatus s);

struct DurationMap {
  std::vector<std::pair<std::string, double>> pairs;  // textual order, duplicates kept
  MapStatus status = MapStatus::unparseable;
};

/// Tolerant reader for word -> milliseconds maps.
///
/// A '{' ... '}' block is read with quotes respected; text around it is
/// ignored. The first block holding any pair wins, so a wrapper such as
/// {"times": {...}} falls through to the inner block (status `recovered`). Keys may be single- or double-quoted (with
/// backslash escapes) or bare; values are integer or decimal, optionally
/// followed by "ms". A block that needed repair (missing close brace, dropped
/// malformed or negative pairs, missing separators) yields `recovered`.
/// Without any brace, lines of the form `word: number` are collected with
/// status `recovered`. Nothing usable yields `unparseable` with no pairs.
DurationMap parse_duration_map(std::string_view text);

}  // namespace psynorm
