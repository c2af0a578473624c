#include "psynorm/response_parse.hpp"

#include <algorithm>
#include <cctype>
#include <regex>

#include "psynorm/text.hpp"

namespace psynorm {

std::string_view to_string(ScalarStatus s) {
  switch (s) {
    case ScalarStatus::ok: return "ok";
    case ScalarStatus::clamped: return "clamped";
    case ScalarStatus::no_number: return "no_number";
  }
  return "?";
}

std::string_view to_string(MapStatus s) {
  switch (s) {
    case MapStatus::ok: return "ok";
    case MapStatus::recovered: return "recovered";
    case MapStatus::unparseable: return "unparseable";
  }
  return "?";
}

namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_key_sep(char c) { return c == ':' || c == '='; }
bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

// Reads [-]digits[.digits] or [-].digits starting at i; returns the length, 0 if none.
std::size_t numeral_length(std::string_view s, std::size_t i) {
  std::size_t j = i;
  if (j < s.size() && s[j] == '-') ++j;
  std::size_t int_digits = 0;
  while (j < s.size() && is_digit(s[j])) ++j, ++int_digits;
  std::size_t frac_digits = 0;
  if (j < s.size() && s[j] == '.' && j + 1 < s.size() && is_digit(s[j + 1])) {
    ++j;
    while (j < s.size() && is_digit(s[j])) ++j, ++frac_digits;
  }
  if (int_digits == 0 && frac_digits == 0) return 0;
  return j - i;
}

}  // namespace

ParsedScalar parse_scalar_rating(std::string_view text) {
  ParsedScalar out;
  out.raw = std::string(text);
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    const bool starts = is_digit(c) || (c == '.' && i + 1 < text.size() && is_digit(text[i + 1])) ||
                        (c == '-' && i + 1 < text.size() && (is_digit(text[i + 1]) || text[i + 1] == '.'));
    if (!starts) continue;
    // A '-' glued to a word ("0-1", "gpt-4") is a hyphen, not a sign.
    if (c == '-' && i > 0 && std::isalnum(static_cast<unsigned char>(text[i - 1]))) continue;
    auto len = numeral_length(text, i);
    if (len == 0) continue;
    auto v = text::parse_double(text.substr(i, len));
    if (!v) continue;
    if (*v < 0.0) {
      out.value = 0.0;
      out.status = ScalarStatus::clamped;
    } else if (*v > 1.0) {
      out.value = 1.0;
      out.status = ScalarStatus::clamped;
    } else {
      out.value = *v;
      out.status = ScalarStatus::ok;
    }
    return out;
  }
  return out;
}

namespace {

struct BlockParser {
  std::string_view s;
  std::size_t p = 0;
  bool repaired = false;
  std::vector<std::pair<std::string, double>> pairs;

  void skip_space() {
    while (p < s.size() && is_space(s[p])) ++p;
  }

  // Advances past the current malformed pair: to just after the next ',' or
  // onto the next '}'.
  void skip_pair() {
    repaired = true;
    while (p < s.size() && s[p] != ',' && s[p] != '}') ++p;
    if (p < s.size() && s[p] == ',') ++p;
  }

  // Drops ASCII and typographic quote marks from both ends.
  static std::string_view strip_quotes(std::string_view raw) {
    static constexpr std::string_view kCurly[] = {"\xE2\x80\x98", "\xE2\x80\x99", "\xE2\x80\x9C", "\xE2\x80\x9D"};
    for (bool changed = true; changed && !raw.empty();) {
      changed = false;
      if (raw.front() == '\'' || raw.front() == '"') raw.remove_prefix(1), changed = true;
      if (!raw.empty() && (raw.back() == '\'' || raw.back() == '"')) raw.remove_suffix(1), changed = true;
      for (auto q : kCurly) {
        if (raw.starts_with(q)) raw.remove_prefix(q.size()), changed = true;
        if (raw.ends_with(q)) raw.remove_suffix(q.size()), changed = true;
      }
    }
    return raw;
  }

  static std::string unescape(std::string_view raw) {
    std::string out;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (raw[i] == '\\' && i + 1 < raw.size()) ++i;
      out += raw[i];
    }
    return out;
  }

  // Quoted key whose closing quote is followed by ':'; falls back to the
  // text up to the next ':' with stray quotes trimmed.
  std::optional<std::string> read_key() {
    const char q = s[p];
    if (q == '\'' || q == '"') {
      for (std::size_t j = p + 1; j < s.size(); ++j) {
        if (s[j] == '\\') {
          ++j;
          continue;
        }
        // A separator followed by a numeral, or a line break, before the
        // closing quote means the quote was never closed. Other punctuation
        // (',' or ':' as in 'said:') is a legitimate key character.
        if (s[j] == '\n' || s[j] == '}') break;
        if (is_key_sep(s[j])) {
          std::size_t k = j + 1;
          while (k < s.size() && is_space(s[k])) ++k;
          if (numeral_length(s, k) > 0) break;
        }
        if (s[j] == q) {
          std::size_t k = j + 1;
          while (k < s.size() && is_space(s[k])) ++k;
          if (k < s.size() && is_key_sep(s[k])) {
            if (s[k] == '=') repaired = true;
            auto key = unescape(s.substr(p + 1, j - p - 1));
            p = k + 1;
            return key;
          }
        }
      }
    }
    // Bare or broken key.
    std::size_t j = p;
    while (j < s.size() && !is_key_sep(s[j]) && s[j] != ',' && s[j] != '}') ++j;
    if (j >= s.size() || !is_key_sep(s[j])) return std::nullopt;
    auto raw = strip_quotes(text::trim(s.substr(p, j - p)));
    p = j + 1;
    if (raw.empty()) return std::nullopt;
    repaired = true;
    return unescape(raw);
  }

  std::optional<double> read_value() {
    skip_space();
    bool quoted = false;
    char q = 0;
    if (p < s.size() && (s[p] == '\'' || s[p] == '"')) {
      q = s[p++];
      quoted = true;
    }
    auto len = numeral_length(s, p);
    if (len == 0) return std::nullopt;
    auto v = text::parse_double(s.substr(p, len));
    p += len;
    if (p + 1 < s.size() && s.substr(p, 2) == "ms") {
      p += 2;
      repaired = true;
    } else if (p + 2 < s.size() && s.substr(p, 3) == " ms") {
      p += 3;
      repaired = true;
    }
    if (quoted) {
      repaired = true;
      if (p < s.size() && s[p] == q) ++p;
    }
    return v;
  }

  // Returns true when the closing brace was found.
  bool run() {
    while (true) {
      skip_space();
      if (p >= s.size()) {
        repaired = true;  // truncated, no closing brace
        return false;
      }
      if (s[p] == '}') return true;
      if (s[p] == ',') {
        ++p;
        continue;
      }
      auto key = read_key();
      if (!key) {
        skip_pair();
        continue;
      }
      skip_space();
      // A map-valued key makes this block a wrapper; the caller moves on to the inner one.
      if (p < s.size() && s[p] == '{') return false;
      auto value = read_value();
      if (!value) {
        skip_pair();
        continue;
      }
      if (*value < 0.0) {
        repaired = true;
      } else {
        pairs.emplace_back(std::move(*key), *value);
      }
      skip_space();
      if (p < s.size() && s[p] != ',' && s[p] != '}') {
        repaired = true;  // missing separator, or trailing junk after the value
        while (p < s.size() && s[p] != ',' && s[p] != '}' && s[p] != '\'' && s[p] != '"') ++p;
      }
    }
  }
};

DurationMap line_recovery(std::string_view text) {
  static const std::regex kLine(R"(^\s*(?:[-*]\s+|\d+[.)]\s+)?["']?([^"':=]+?)["']?\s*[:=]\s*(-?\d+(?:\.\d+)?)\s*(?:ms)?\s*,?\s*$)");
  DurationMap out;
  for (const auto& line : text::lines(text)) {
    std::smatch m;
    if (!std::regex_match(line, m, kLine)) continue;
    auto v = text::parse_double(m[2].str());
    if (!v || *v < 0.0) continue;
    out.pairs.emplace_back(std::string(text::trim(m[1].str())), *v);
  }
  out.status = out.pairs.empty() ? MapStatus::unparseable : MapStatus::recovered;
  return out;
}

}  // namespace

DurationMap parse_duration_map(std::string_view text) {
  auto open = text.find('{');
  if (open == std::string_view::npos) return line_recovery(text);
  DurationMap out;
  // The first block with any pairs wins; a wrapper like {"times": {...}}
  // yields nothing at the outer level and falls through to the inner one.
  for (bool first = true; open != std::string_view::npos; open = text.find('{', open + 1), first = false) {
    BlockParser bp{text, open + 1, false, {}};
    bp.run();
    if (bp.pairs.empty()) continue;
    out.pairs = std::move(bp.pairs);
    out.status = (bp.repaired || !first) ? MapStatus::recovered : MapStatus::ok;
    return out;
  }
  return out;
}

}  // namespace psynorm
