#include "psynorm/corpus.hpp"

#include <algorithm>
#include <set>
#include <unordered_set>

#include "psynorm/errors.hpp"
#include "psynorm/rng.hpp"
#include "psynorm/text.hpp"

namespace psynorm {

std::string_view to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::word_mem: return "word_mem";
    case DatasetKind::sent_mem: return "sent_mem";
    case DatasetKind::rt_spr: return "rt_spr";
    case DatasetKind::rt_et: return "rt_et";
  }
  return "?";
}

DatasetKind parse_dataset_kind(std::string_view s) {
  if (s == "word_mem") return DatasetKind::word_mem;
  if (s == "sent_mem") return DatasetKind::sent_mem;
  if (s == "rt_spr") return DatasetKind::rt_spr;
  if (s == "rt_et") return DatasetKind::rt_et;
  throw ConfigError("unknown dataset kind '" + std::string(s) + "' (expected word_mem, sent_mem, rt_spr, rt_et)");
}

bool is_rt(DatasetKind k) { return k == DatasetKind::rt_spr || k == DatasetKind::rt_et; }

std::vector<std::string> RtSentence::words() const {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(t.surface);
  return out;
}

std::string RtSentence::text() const { return text::join(words(), " "); }

std::string RtSentence::token_id(std::size_t position) const { return id + ":" + std::to_string(position); }

std::vector<std::string> Dataset::ids() const {
  std::vector<std::string> out;
  if (is_rt(kind)) {
    for (const auto& s : rt_sentences) out.push_back(s.id);
  } else {
    for (const auto& r : norm_records) out.push_back(r.id);
  }
  return out;
}

std::size_t Dataset::token_count() const {
  std::size_t n = 0;
  for (const auto& s : rt_sentences) n += s.tokens.size();
  return n;
}

namespace {

std::string row_tag(std::size_t line_no) { return "row " + std::to_string(line_no); }

// Skips blank lines; returns (line number, fields) for every data row.
std::vector<std::pair<std::size_t, std::vector<std::string>>> data_rows(const std::vector<std::string>& ls) {
  std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
  for (std::size_t i = 1; i < ls.size(); ++i) {
    if (text::trim(ls[i]).empty()) continue;
    rows.emplace_back(i + 1, text::split(ls[i], '\t'));
  }
  return rows;
}

std::size_t column_index(const std::vector<std::string>& header, std::string_view name) {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw DataError("missing required column '" + std::string(name) + "'");
  return static_cast<std::size_t>(it - header.begin());
}

bool has_whitespace(std::string_view s) {
  return std::any_of(s.begin(), s.end(), [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; });
}

}  // namespace

Dataset parse_norms(std::string_view content, DatasetKind kind) {
  if (is_rt(kind)) throw DataError("parse_norms: kind " + std::string(to_string(kind)) + " is a reading-time kind");
  auto ls = text::lines(content);
  if (ls.empty() || text::trim(ls[0]).empty()) throw DataError("norm table is empty (header required)");
  auto header = text::split(ls[0], '\t');
  for (auto& h : header) h = std::string(text::trim(h));
  const auto id_col = column_index(header, "id");
  const auto text_col = column_index(header, "text");
  const auto score_col = column_index(header, "score");
  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c != id_col && c != text_col && c != score_col) feature_cols.push_back(c);
  }

  Dataset d;
  d.kind = kind;
  std::vector<std::string> errors;
  std::unordered_set<std::string> seen;
  for (auto& [line_no, f] : data_rows(ls)) {
    if (f.size() != header.size()) {
      errors.push_back(row_tag(line_no) + ": expected " + std::to_string(header.size()) + " fields, got " +
                       std::to_string(f.size()));
      continue;
    }
    NormRecord r;
    r.id = std::string(text::trim(f[id_col]));
    r.text = std::string(text::trim(f[text_col]));
    bool ok = true;
    if (r.id.empty()) {
      errors.push_back(row_tag(line_no) + ": empty id");
      ok = false;
    } else if (!seen.insert(r.id).second) {
      errors.push_back(row_tag(line_no) + ": duplicate id '" + r.id + "'");
      ok = false;
    }
    if (r.text.empty()) {
      errors.push_back(row_tag(line_no) + ": empty text");
      ok = false;
    }
    auto score = text::parse_double(f[score_col]);
    if (!score) {
      errors.push_back(row_tag(line_no) + ": score '" + f[score_col] + "' is not a number");
      ok = false;
    } else if (!(*score >= 0.0 && *score <= 1.0)) {
      errors.push_back(row_tag(line_no) + ": score " + f[score_col] + " outside [0,1]");
      ok = false;
    } else {
      r.score = *score;
    }
    for (auto c : feature_cols) {
      auto cell = text::trim(f[c]);
      if (cell.empty() || cell == "NA" || cell == "nan" || cell == "NaN") continue;
      auto v = text::parse_double(cell);
      if (!v) {
        errors.push_back(row_tag(line_no) + ": feature '" + header[c] + "' value '" + std::string(cell) +
                         "' is not a number");
        ok = false;
        continue;
      }
      r.features[header[c]] = *v;
    }
    if (ok) d.norm_records.push_back(std::move(r));
  }
  if (!errors.empty()) throw DataError("invalid norm table", std::move(errors));
  return d;
}

Dataset load_norms(const std::string& path, DatasetKind kind) {
  try {
    return parse_norms(text::read_file(path), kind);
  } catch (const DataError& e) {
    if (e.diagnostics().empty()) throw DataError(path + ": " + e.what());
    throw DataError(path + ": invalid norm table", e.diagnostics());
  }
}

Dataset parse_rt_corpus(std::string_view content, DatasetKind kind) {
  if (!is_rt(kind)) throw DataError("parse_rt_corpus: kind " + std::string(to_string(kind)) + " is not a reading-time kind");
  auto ls = text::lines(content);
  if (ls.empty() || text::trim(ls[0]).empty()) throw DataError("RT table is empty (header required)");
  auto header = text::split(ls[0], '\t');
  for (auto& h : header) h = std::string(text::trim(h));
  const auto sid_col = column_index(header, "sentence_id");
  const auto pos_col = column_index(header, "position");
  const auto surf_col = column_index(header, "surface");
  const auto rt_col = column_index(header, "rt_ms");

  Dataset d;
  d.kind = kind;
  std::vector<std::string> errors;
  std::set<std::string> finished;
  RtSentence current;
  bool current_bad = false;

  auto flush = [&] {
    if (current.id.empty()) return;
    finished.insert(current.id);
    if (!current_bad && !current.tokens.empty()) d.rt_sentences.push_back(std::move(current));
    current = RtSentence{};
    current_bad = false;
  };

  for (auto& [line_no, f] : data_rows(ls)) {
    if (f.size() != header.size()) {
      errors.push_back(row_tag(line_no) + ": expected " + std::to_string(header.size()) + " fields, got " +
                       std::to_string(f.size()));
      continue;
    }
    std::string sid(text::trim(f[sid_col]));
    if (sid.empty()) {
      errors.push_back(row_tag(line_no) + ": empty sentence_id");
      continue;
    }
    if (sid != current.id) {
      flush();
      if (finished.count(sid)) {
        errors.push_back(row_tag(line_no) + ": rows of sentence '" + sid + "' are not contiguous");
        current_bad = true;
      }
      current.id = sid;
    }
    const std::string where = row_tag(line_no) + " (sentence '" + sid + "', position " + f[pos_col] + ")";
    auto pos = text::parse_int(f[pos_col]);
    std::string surface(text::trim(f[surf_col]));
    auto rt = text::parse_double(f[rt_col]);
    bool ok = true;
    if (!pos) {
      errors.push_back(where + ": position is not an integer");
      ok = false;
    } else if (*pos != static_cast<long long>(current.tokens.size())) {
      errors.push_back(where + ": expected position " + std::to_string(current.tokens.size()) +
                       " (positions must run 0..n-1 without gaps)");
      ok = false;
    }
    if (surface.empty() || has_whitespace(surface)) {
      errors.push_back(where + ": surface must be non-empty without whitespace");
      ok = false;
    }
    if (!rt) {
      errors.push_back(where + ": rt_ms '" + f[rt_col] + "' is not a number");
      ok = false;
    } else if (!(*rt > 0.0)) {
      errors.push_back(where + ": rt_ms must be > 0, got " + f[rt_col]);
      ok = false;
    }
    if (!ok) {
      current_bad = true;
      // Keep positions aligned so one bad row does not cascade into gap errors.
      if (pos && *pos == static_cast<long long>(current.tokens.size())) current.tokens.push_back({});
      continue;
    }
    current.tokens.push_back(RtToken{surface, *rt, static_cast<int>(*pos)});
  }
  flush();
  if (!errors.empty()) throw DataError("invalid RT table", std::move(errors));
  return d;
}

Dataset load_rt_corpus(const std::string& path, DatasetKind kind) {
  try {
    return parse_rt_corpus(text::read_file(path), kind);
  } catch (const DataError& e) {
    if (e.diagnostics().empty()) throw DataError(path + ": " + e.what());
    throw DataError(path + ": invalid RT table", e.diagnostics());
  }
}

EmbeddingTable parse_embeddings(std::string_view content) {
  EmbeddingTable t;
  std::vector<std::string> errors;
  auto ls = text::lines(content);
  bool first = true;
  for (std::size_t i = 0; i < ls.size(); ++i) {
    if (text::trim(ls[i]).empty()) continue;
    auto f = text::split(ls[i], '\t');
    if (first) {
      first = false;
      if (f.size() >= 2 && !text::parse_double(f[1])) continue;  // header
    }
    if (f.size() < 2) {
      errors.push_back(row_tag(i + 1) + ": no vector components");
      continue;
    }
    std::vector<double> v;
    v.reserve(f.size() - 1);
    bool ok = true;
    for (std::size_t c = 1; c < f.size(); ++c) {
      auto x = text::parse_double(f[c]);
      if (!x) {
        errors.push_back(row_tag(i + 1) + ": component " + std::to_string(c) + " is not a number");
        ok = false;
        break;
      }
      v.push_back(*x);
    }
    if (!ok) continue;
    if (t.dim == 0) t.dim = v.size();
    if (v.size() != t.dim) {
      errors.push_back(row_tag(i + 1) + ": inconsistent embedding dimension " + std::to_string(v.size()) +
                       " (expected " + std::to_string(t.dim) + ")");
      continue;
    }
    std::string id(text::trim(f[0]));
    if (!t.vectors.emplace(id, std::move(v)).second) errors.push_back(row_tag(i + 1) + ": duplicate id '" + id + "'");
  }
  if (!errors.empty()) throw DataError("invalid embedding sidecar", std::move(errors));
  return t;
}

EmbeddingTable load_embeddings(const std::string& path) {
  try {
    return parse_embeddings(text::read_file(path));
  } catch (const DataError& e) {
    if (e.diagnostics().empty()) throw DataError(path + ": " + e.what());
    throw DataError(path + ": invalid embedding sidecar", e.diagnostics());
  }
}

void attach_embeddings(Dataset& d, const EmbeddingTable& table) {
  for (auto& r : d.norm_records) {
    auto it = table.vectors.find(r.id);
    if (it != table.vectors.end()) r.embedding = it->second;
  }
}

std::string serialize_norms(const Dataset& d) {
  std::set<std::string> names;
  for (const auto& r : d.norm_records)
    for (const auto& [k, _] : r.features) names.insert(k);
  std::string out = "id\ttext\tscore";
  for (const auto& n : names) out += "\t" + n;
  out += "\n";
  for (const auto& r : d.norm_records) {
    out += r.id + "\t" + r.text + "\t" + text::format_double(r.score);
    for (const auto& n : names) {
      out += "\t";
      auto it = r.features.find(n);
      if (it != r.features.end()) out += text::format_double(it->second);
    }
    out += "\n";
  }
  return out;
}

std::string serialize_rt_corpus(const Dataset& d) {
  std::string out = "sentence_id\tposition\tsurface\trt_ms\n";
  for (const auto& s : d.rt_sentences) {
    for (const auto& t : s.tokens) {
      out += s.id + "\t" + std::to_string(t.position) + "\t" + t.surface + "\t" + text::format_double(t.rt_ms) + "\n";
    }
  }
  return out;
}

std::string serialize_embeddings(const Dataset& d) {
  std::string out;
  for (const auto& r : d.norm_records) {
    if (!r.embedding) continue;
    out += r.id;
    for (double x : *r.embedding) out += "\t" + text::format_double(x);
    out += "\n";
  }
  return out;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& d, double train_fraction, std::uint64_t seed) {
  if (d.empty()) throw DataError("split_dataset: dataset is empty");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw DataError("split_dataset: train fraction must be in (0,1)");
  const auto n = d.size();
  const auto n_train = train_count(n, train_fraction);
  if (n_train == 0 || n_train == n) {
    throw DataError("split_dataset: fraction " + text::format_double(train_fraction) + " of " + std::to_string(n) +
                    " items leaves one side empty");
  }
  auto order = shuffled_keys(d.ids(), seed);
  std::unordered_set<std::string> train_ids(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));

  Dataset train, eval;
  train.kind = eval.kind = d.kind;
  for (const auto& r : d.norm_records) (train_ids.count(r.id) ? train : eval).norm_records.push_back(r);
  for (const auto& s : d.rt_sentences) (train_ids.count(s.id) ? train : eval).rt_sentences.push_back(s);
  return {std::move(train), std::move(eval)};
}

}  // namespace psynorm
