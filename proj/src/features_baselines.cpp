#include "psynorm/features_baselines.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include "psynorm/errors.hpp"
#include "psynorm/rng.hpp"
#include "psynorm/text.hpp"

namespace psynorm {

std::size_t word_length(std::string_view w) { return text::utf8_length(w); }

FrequencyTable parse_frequency_table(std::string_view content, double floor_per_million) {
  FrequencyTable t;
  t.floor_per_million = floor_per_million;
  auto ls = text::lines(content);
  if (ls.empty()) throw DataError("frequency table is empty (header required)");
  auto header = text::split(ls[0], '\t');
  if (header.size() < 2 || text::trim(header[0]) != "word" || text::trim(header[1]) != "per_million") {
    throw DataError("frequency table header must be 'word<TAB>per_million'");
  }
  std::vector<std::string> errors;
  for (std::size_t i = 1; i < ls.size(); ++i) {
    if (text::trim(ls[i]).empty()) continue;
    auto f = text::split(ls[i], '\t');
    auto v = f.size() >= 2 ? text::parse_double(f[1]) : std::nullopt;
    if (!v || *v < 0.0) {
      errors.push_back("row " + std::to_string(i + 1) + ": per_million must be a non-negative number");
      continue;
    }
    t.per_million[text::normalize_word(f[0])] += *v;
  }
  if (!errors.empty()) throw DataError("invalid frequency table", std::move(errors));
  return t;
}

FrequencyTable load_frequency_table(const std::string& path, double floor_per_million) {
  return parse_frequency_table(text::read_file(path), floor_per_million);
}

double log_frequency(std::string_view w, const FrequencyTable& table) {
  auto it = table.per_million.find(text::normalize_word(w));
  double v = it == table.per_million.end() ? table.floor_per_million : it->second;
  if (v <= 0.0) v = table.floor_per_million;
  return std::log10(v);
}

double word_surprisal(const std::vector<double>& subword_surprisals) {
  if (subword_surprisals.empty()) throw std::invalid_argument("word_surprisal: no subword values");
  double sum = 0.0;
  for (double s : subword_surprisals) {
    if (!(s >= 0.0)) throw std::invalid_argument("word_surprisal: negative subword surprisal");
    sum += s;
  }
  return sum;
}

std::vector<std::pair<std::string, double>> words_from_token_logprobs(
    const std::vector<std::pair<std::string, std::optional<double>>>& tokens) {
  std::vector<std::pair<std::string, double>> words;
  std::vector<double> pieces;
  std::string current;
  auto flush = [&] {
    auto w = std::string(text::trim(current));
    if (!w.empty()) words.emplace_back(w, pieces.empty() ? 0.0 : word_surprisal(pieces));
    current.clear();
    pieces.clear();
  };
  for (const auto& [tok, lp] : tokens) {
    const bool boundary = !tok.empty() && (tok.front() == ' ' || tok.front() == '\n' || tok.front() == '\t');
    if (boundary) flush();
    current += tok;
    if (lp) pieces.push_back(-*lp / std::log(2.0));
  }
  flush();
  return words;
}

SurprisalTable parse_surprisal(std::string_view content) {
  auto ls = text::lines(content);
  if (ls.empty()) throw DataError("surprisal file is empty (header required)");
  auto header = text::split(ls[0], '\t');
  for (auto& h : header) h = std::string(text::trim(h));
  if (header.size() != 3 || header[0] != "sentence_id" || header[1] != "position" ||
      (header[2] != "surprisal_bits" && header[2] != "surprisal_nats")) {
    throw DataError("surprisal header must be 'sentence_id<TAB>position<TAB>surprisal_bits|surprisal_nats'");
  }
  SurprisalTable t;
  t.base = header[2] == "surprisal_bits" ? "bits" : "nats";
  std::vector<std::string> errors;
  for (std::size_t i = 1; i < ls.size(); ++i) {
    if (text::trim(ls[i]).empty()) continue;
    auto f = text::split(ls[i], '\t');
    auto pos = f.size() == 3 ? text::parse_int(f[1]) : std::nullopt;
    auto v = f.size() == 3 ? text::parse_double(f[2]) : std::nullopt;
    if (!pos || !v || *v < 0.0) {
      errors.push_back("row " + std::to_string(i + 1) + ": expected sentence_id, integer position, surprisal >= 0");
      continue;
    }
    t.by_token[std::string(text::trim(f[0])) + ":" + std::to_string(*pos)] = *v;
  }
  if (!errors.empty()) throw DataError("invalid surprisal file", std::move(errors));
  return t;
}

SurprisalTable load_surprisal(const std::string& path) { return parse_surprisal(text::read_file(path)); }

std::string serialize_surprisal(const SurprisalTable& t) {
  std::string out = "sentence_id\tposition\tsurprisal_" + t.base + "\n";
  for (const auto& [key, v] : t.by_token) {
    auto colon = key.rfind(':');
    out += key.substr(0, colon) + "\t" + key.substr(colon + 1) + "\t" + text::format_double(v) + "\n";
  }
  return out;
}

RegressionFit fit_ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const OlsOptions& opts) {
  const auto n = X.rows(), p = X.cols();
  if (y.size() != n) throw std::invalid_argument("fit_ols: X and y row counts differ");
  if (n < p + 1) {
    throw std::invalid_argument("fit_ols: need at least columns + 1 rows (" + std::to_string(n) + " rows, " +
                                std::to_string(p) + " columns)");
  }
  const Eigen::RowVectorXd x_mean = X.colwise().mean();
  const double y_mean = y.mean();
  const Eigen::MatrixXd Xc = X.rowwise() - x_mean;
  const Eigen::VectorXd yc = y.array() - y_mean;

  RegressionFit fit;
  if (p == 0) {
    fit.coefficients = Eigen::VectorXd(0);
    fit.intercept = y_mean;
    return fit;
  }
  if (opts.ridge_lambda > 0.0) {
    Eigen::MatrixXd gram = Xc.transpose() * Xc;
    gram.diagonal().array() += opts.ridge_lambda;
    fit.coefficients = gram.ldlt().solve(Xc.transpose() * yc);
    fit.rank = p;
  } else {
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(Xc);
    fit.coefficients = cod.solve(yc);
    fit.rank = cod.rank();
    fit.rank_deficient = fit.rank < p;
  }
  fit.intercept = y_mean - x_mean.dot(fit.coefficients);
  return fit;
}

Eigen::VectorXd predict(const RegressionFit& fit, const Eigen::MatrixXd& X) {
  if (X.cols() != fit.coefficients.size()) throw std::invalid_argument("predict: column count mismatch");
  return (X * fit.coefficients).array() + fit.intercept;
}

double r2_holdout(const RegressionFit& fit, const Eigen::MatrixXd& X_test, const Eigen::VectorXd& y_test) {
  if (X_test.rows() != y_test.size()) throw std::invalid_argument("r2_holdout: X and y row counts differ");
  const Eigen::VectorXd pred = predict(fit, X_test);
  const double ss_res = (y_test - pred).squaredNorm();
  const double ss_tot = (y_test.array() - y_test.mean()).matrix().squaredNorm();
  if (!(ss_tot > 0.0)) throw UndefinedMetric("r2_holdout: test targets are constant");
  return 1.0 - ss_res / ss_tot;
}

namespace {

// Rows ordered by id, and each row's split unit as an index into the sorted
// unit list. Shared by every split of one evaluation.
struct SplitLayout {
  std::vector<Eigen::Index> rows_by_id;
  std::vector<std::size_t> unit_of_row;
  std::size_t n_units = 0;
};

SplitLayout make_layout(const FeatureMatrix& fm) {
  const auto n = static_cast<std::size_t>(fm.X.rows());
  if (fm.row_ids.size() != n || static_cast<std::size_t>(fm.y.size()) != n) {
    throw std::invalid_argument("FeatureMatrix: row_ids, X and y disagree in length");
  }
  if (!fm.groups.empty() && fm.groups.size() != n) throw std::invalid_argument("FeatureMatrix: groups length mismatch");
  const auto& keys = fm.groups.empty() ? fm.row_ids : fm.groups;
  std::vector<std::string> units(keys.begin(), keys.end());
  std::sort(units.begin(), units.end());
  units.erase(std::unique(units.begin(), units.end()), units.end());

  SplitLayout l;
  l.n_units = units.size();
  l.unit_of_row.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    l.unit_of_row[r] = static_cast<std::size_t>(std::lower_bound(units.begin(), units.end(), keys[r]) - units.begin());
  }
  l.rows_by_id.resize(n);
  std::iota(l.rows_by_id.begin(), l.rows_by_id.end(), Eigen::Index{0});
  std::stable_sort(l.rows_by_id.begin(), l.rows_by_id.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return fm.row_ids[a] < fm.row_ids[b]; });
  return l;
}

std::pair<std::vector<Eigen::Index>, std::vector<Eigen::Index>> split_with_layout(const SplitLayout& l,
                                                                                 double train_fraction,
                                                                                 std::uint64_t seed,
                                                                                 std::size_t split_index) {
  std::vector<std::size_t> order(l.n_units);
  std::iota(order.begin(), order.end(), std::size_t{0});
  seeded_shuffle(order, splitmix64(seed + split_index));
  const auto n_train = train_count(l.n_units, train_fraction);
  if (n_train == 0 || n_train == l.n_units) {
    throw std::invalid_argument("evaluate_splits: train fraction leaves one side empty (" +
                                std::to_string(l.n_units) + " split units)");
  }
  std::vector<char> in_train(l.n_units, 0);
  for (std::size_t k = 0; k < n_train; ++k) in_train[order[k]] = 1;
  std::vector<Eigen::Index> train, test;
  for (auto r : l.rows_by_id) (in_train[l.unit_of_row[r]] ? train : test).push_back(r);
  return {std::move(train), std::move(test)};
}

double score_split(const FeatureMatrix& fm, const SplitLayout& l, double train_fraction, std::uint64_t seed,
                   std::size_t split_index, const OlsOptions& opts) {
  auto [train, test] = split_with_layout(l, train_fraction, seed, split_index);
  const Eigen::MatrixXd X_train = fm.X(train, Eigen::all);
  const Eigen::VectorXd y_train = fm.y(train);
  const Eigen::MatrixXd X_test = fm.X(test, Eigen::all);
  const Eigen::VectorXd y_test = fm.y(test);
  return r2_holdout(fit_ols(X_train, y_train, opts), X_test, y_test);
}

SplitEvaluation summarize(std::vector<double> r2, double train_fraction) {
  SplitEvaluation e;
  e.n_splits = r2.size();
  e.train_fraction = train_fraction;
  if (!r2.empty()) {
    e.mean_r2 = std::accumulate(r2.begin(), r2.end(), 0.0) / static_cast<double>(r2.size());
    if (r2.size() > 1) {
      double ss = 0.0;
      for (double v : r2) ss += (v - e.mean_r2) * (v - e.mean_r2);
      e.sd_r2 = std::sqrt(ss / static_cast<double>(r2.size() - 1));
    }
  }
  e.r2_values = std::move(r2);
  return e;
}

}  // namespace

std::pair<std::vector<Eigen::Index>, std::vector<Eigen::Index>> split_rows(const FeatureMatrix& fm,
                                                                          double train_fraction,
                                                                          std::uint64_t seed,
                                                                          std::size_t split_index) {
  return split_with_layout(make_layout(fm), train_fraction, seed, split_index);
}

SplitEvaluation evaluate_splits_serial(const FeatureMatrix& fm, std::size_t n_splits, double train_fraction,
                                       std::uint64_t seed, const OlsOptions& opts) {
  const auto layout = make_layout(fm);
  std::vector<double> r2(n_splits);
  for (std::size_t s = 0; s < n_splits; ++s) r2[s] = score_split(fm, layout, train_fraction, seed, s, opts);
  return summarize(std::move(r2), train_fraction);
}

SplitEvaluation evaluate_splits(const FeatureMatrix& fm, std::size_t n_splits, double train_fraction,
                                std::uint64_t seed, const OlsOptions& opts) {
  const auto layout = make_layout(fm);
  std::vector<double> r2(n_splits);
  std::vector<std::exception_ptr> errors(n_splits);
  const auto n = static_cast<std::ptrdiff_t>(n_splits);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t s = 0; s < n; ++s) {
    try {
      r2[s] = score_split(fm, layout, train_fraction, seed, static_cast<std::size_t>(s), opts);
    } catch (...) {
      errors[s] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return summarize(std::move(r2), train_fraction);
}

std::vector<std::string> default_scalar_features(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::word_mem: return {"num_meanings", "num_synonyms", "frequency"};
    case DatasetKind::sent_mem: return {"distinctiveness", "avg_word_memorability", "avg_word_frequency"};
    default: return {"length", "frequency", "surprisal"};
  }
}

namespace {

bool is_frequency_column(std::string_view name) { return name.find("frequency") != std::string_view::npos; }

double transform_frequency(double v, const BaselineInputs& in) {
  if (in.frequency_transform == FrequencyTransform::raw) return v;
  return std::log10(v > 0.0 ? v : in.frequency_floor);
}

std::size_t embedding_dim(const BaselineInputs& in) {
  const auto& d = *in.dataset;
  if (is_rt(d.kind)) return in.embeddings ? in.embeddings->dim : 0;
  for (const auto& r : d.norm_records)
    if (r.embedding) return r.embedding->size();
  return 0;
}

}  // namespace

FeatureMatrix build_feature_matrix(const BaselineInputs& in, const std::vector<std::string>& columns) {
  if (!in.dataset) throw std::invalid_argument("build_feature_matrix: no dataset");
  const auto& d = *in.dataset;
  const bool wants_embedding = std::find(columns.begin(), columns.end(), "embedding") != columns.end();
  const std::size_t dim = wants_embedding ? embedding_dim(in) : 0;
  if (wants_embedding && dim == 0) throw ConfigError("baseline 'embedding' requested but no embeddings were supplied");

  FeatureMatrix fm;
  for (const auto& c : columns) {
    if (c == "embedding") {
      for (std::size_t k = 0; k < dim; ++k) fm.columns.push_back("embedding_" + std::to_string(k));
    } else {
      fm.columns.push_back(c);
    }
  }
  std::vector<std::vector<double>> rows;
  std::vector<double> ys;

  if (!is_rt(d.kind)) {
    for (const auto& r : d.norm_records) {
      std::vector<double> row;
      bool complete = true;
      for (const auto& c : columns) {
        if (c == "embedding") {
          if (!r.embedding || r.embedding->size() != dim) {
            complete = false;
            break;
          }
          row.insert(row.end(), r.embedding->begin(), r.embedding->end());
          continue;
        }
        auto it = r.features.find(c);
        if (it == r.features.end()) {
          complete = false;
          break;
        }
        row.push_back(is_frequency_column(c) ? transform_frequency(it->second, in) : it->second);
      }
      if (!complete) {
        ++fm.dropped;
        continue;
      }
      fm.row_ids.push_back(r.id);
      rows.push_back(std::move(row));
      ys.push_back(r.score);
    }
  } else {
    for (const auto& c : columns) {
      if (c == "frequency" && !in.frequency) throw ConfigError("RT baseline 'frequency' needs a frequency table");
      if (c == "surprisal" && !in.surprisal) throw ConfigError("RT baseline 'surprisal' needs a surprisal file");
      if (c != "length" && c != "frequency" && c != "surprisal" && c != "embedding") {
        throw ConfigError("unknown RT baseline feature '" + c + "'");
      }
    }
    for (const auto& s : d.rt_sentences) {
      for (std::size_t p = 0; p < s.tokens.size(); ++p) {
        const auto& tok = s.tokens[p];
        const auto tid = s.token_id(p);
        std::vector<double> row;
        bool complete = true;
        for (const auto& c : columns) {
          if (c == "length") {
            row.push_back(static_cast<double>(word_length(tok.surface)));
          } else if (c == "frequency") {
            if (in.frequency_transform == FrequencyTransform::log10) {
              row.push_back(log_frequency(tok.surface, *in.frequency));
            } else {
              auto it = in.frequency->per_million.find(text::normalize_word(tok.surface));
              row.push_back(it == in.frequency->per_million.end() ? in.frequency->floor_per_million : it->second);
            }
          } else if (c == "surprisal") {
            auto it = in.surprisal->by_token.find(tid);
            if (it == in.surprisal->by_token.end()) {
              complete = false;
              break;
            }
            row.push_back(it->second);
          } else {
            auto it = in.embeddings->vectors.find(tid);
            if (it == in.embeddings->vectors.end()) {
              complete = false;
              break;
            }
            row.insert(row.end(), it->second.begin(), it->second.end());
          }
        }
        if (!complete) {
          ++fm.dropped;
          continue;
        }
        fm.row_ids.push_back(tid);
        fm.groups.push_back(s.id);
        rows.push_back(std::move(row));
        ys.push_back(tok.rt_ms);
      }
    }
  }

  fm.X.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(fm.columns.size()));
  fm.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t k = 0; k < rows[i].size(); ++k) fm.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
    fm.y(static_cast<Eigen::Index>(i)) = ys[i];
  }
  return fm;
}

std::vector<BaselineSpec> baseline_suite(const BaselineInputs& in) {
  const auto& d = *in.dataset;
  std::vector<std::string> scalars;
  if (is_rt(d.kind)) {
    scalars.push_back("length");
    if (in.frequency) scalars.push_back("frequency");
    if (in.surprisal) scalars.push_back("surprisal");
  } else {
    auto wanted = in.scalar_features.empty() ? default_scalar_features(d.kind) : in.scalar_features;
    for (const auto& f : wanted) {
      const bool present = std::any_of(d.norm_records.begin(), d.norm_records.end(),
                                       [&](const NormRecord& r) { return r.features.count(f) > 0; });
      if (present) scalars.push_back(f);
    }
  }
  std::vector<BaselineSpec> suite;
  for (const auto& s : scalars) suite.push_back({s, {s}});
  if (scalars.size() > 1) suite.push_back({"combined_scalar", scalars});
  if (embedding_dim(in) > 0) suite.push_back({"embedding", {"embedding"}});
  return suite;
}

}  // namespace psynorm
