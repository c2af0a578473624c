#include "psynorm/metrics_report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <unordered_map>

#include "psynorm/errors.hpp"
#include "psynorm/text.hpp"

namespace psynorm {

namespace {

void check_lengths(const PairedSeries& s) {
  if (s.predicted.size() != s.truth.size()) throw std::invalid_argument("PairedSeries: length mismatch");
}

double mean_of(const std::vector<double>& v) {
  double sum = 0.0;
  for (double x : v) sum += x;
  return sum / static_cast<double>(v.size());
}

}  // namespace

double pearson(const PairedSeries& s) {
  check_lengths(s);
  const auto n = s.predicted.size();
  if (n < 2) throw UndefinedMetric("pearson: fewer than two pairs");
  const double mx = mean_of(s.predicted), my = mean_of(s.truth);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = s.predicted[i] - mx, dy = s.truth[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (!(sxx > 0.0)) throw UndefinedMetric("pearson: predictions are constant");
  if (!(syy > 0.0)) throw UndefinedMetric("pearson: ground truth is constant");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::string_view to_string(R2Mode m) { return m == R2Mode::squared_pearson ? "squared_pearson" : "agreement"; }

R2Mode parse_r2_mode(std::string_view s) {
  if (s == "squared_pearson") return R2Mode::squared_pearson;
  if (s == "agreement") return R2Mode::agreement;
  throw ConfigError("unknown r2 mode '" + std::string(s) + "'");
}

double r2_of_predictions(const PairedSeries& s, R2Mode mode) {
  if (mode == R2Mode::squared_pearson) {
    const double r = pearson(s);
    return r * r;
  }
  check_lengths(s);
  if (s.truth.empty()) throw UndefinedMetric("agreement R2: no pairs");
  const double my = mean_of(s.truth);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < s.truth.size(); ++i) {
    ss_res += (s.truth[i] - s.predicted[i]) * (s.truth[i] - s.predicted[i]);
    ss_tot += (s.truth[i] - my) * (s.truth[i] - my);
  }
  if (!(ss_tot > 0.0)) throw UndefinedMetric("agreement R2: ground truth is constant");
  return 1.0 - ss_res / ss_tot;
}

namespace {

std::unordered_map<std::string, const RtSentence*> index_sentences(const Dataset& corpus) {
  if (!is_rt(corpus.kind)) throw std::invalid_argument("expected a reading-time dataset");
  std::unordered_map<std::string, const RtSentence*> by_id;
  for (const auto& s : corpus.rt_sentences) by_id[s.id] = &s;
  return by_id;
}

}  // namespace

PairedSeries rt_series(const std::vector<AlignedPrediction>& preds, const Dataset& corpus) {
  const auto by_id = index_sentences(corpus);
  PairedSeries out;
  for (const auto& p : preds) {
    auto it = by_id.find(p.sentence_id);
    if (it == by_id.end()) throw std::invalid_argument("prediction for unknown sentence '" + p.sentence_id + "'");
    const auto& sent = *it->second;
    for (std::size_t k = 0; k < sent.tokens.size() && k < p.values.size(); ++k) {
      if (!p.values[k]) {
        ++out.excluded;
        continue;
      }
      out.ids.push_back(sent.token_id(k));
      out.predicted.push_back(*p.values[k]);
      out.truth.push_back(sent.tokens[k].rt_ms);
    }
  }
  return out;
}

PositionCurve position_curve(const std::vector<AlignedPrediction>& preds, const Dataset& corpus, std::size_t min_n,
                             R2Mode mode) {
  const auto by_id = index_sentences(corpus);
  std::map<int, PairedSeries> groups;
  for (const auto& p : preds) {
    auto it = by_id.find(p.sentence_id);
    if (it == by_id.end()) continue;
    const auto& sent = *it->second;
    for (std::size_t k = 0; k < sent.tokens.size() && k < p.values.size(); ++k) {
      if (!p.values[k]) continue;
      auto& g = groups[static_cast<int>(k)];
      g.predicted.push_back(*p.values[k]);
      g.truth.push_back(sent.tokens[k].rt_ms);
    }
  }
  PositionCurve curve;
  for (const auto& [pos, series] : groups) {
    if (series.predicted.size() < min_n) continue;
    PositionEntry e;
    e.position = pos;
    e.n = series.predicted.size();
    try {
      e.r2 = r2_of_predictions(series, mode);
    } catch (const UndefinedMetric&) {
    }
    curve.entries.push_back(e);
  }
  return curve;
}

LlmResult summarize_predictions(const PairedSeries& s, std::string dataset, std::string regime, std::string model,
                                std::size_t n_items, double coverage) {
  LlmResult r;
  r.dataset = std::move(dataset);
  r.regime = std::move(regime);
  r.model = std::move(model);
  r.n_items = n_items;
  r.n_pairs = s.predicted.size();
  r.excluded = s.excluded;
  r.coverage = coverage;
  try {
    r.pearson = pearson(s);
    r.r2_squared_pearson = *r.pearson * *r.pearson;
  } catch (const UndefinedMetric& e) {
    r.undefined_reason = e.what();
  }
  try {
    r.r2_agreement = r2_of_predictions(s, R2Mode::agreement);
  } catch (const UndefinedMetric& e) {
    if (r.undefined_reason.empty()) r.undefined_reason = e.what();
  }
  return r;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt(const std::optional<double>& v, std::string_view missing = "undefined") {
  return v ? fmt(*v) : std::string(missing);
}

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> opt_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

constexpr std::string_view kMetricsHeader =
    "source\tdataset\tregime\tmodel_or_predictor\tn\texcluded\texclusion_rate\tcoverage\tpearson\tr2_squared_pearson\t"
    "r2_agreement\tmean_r2\tsd_r2\tn_splits\tnote\n";

std::string sanitize(std::string s) {
  std::replace(s.begin(), s.end(), '\t', ' ');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

std::string metrics_table(const ReportInput& in) {
  std::string out(kMetricsHeader);
  for (const auto& r : in.llm) {
    const std::size_t total = r.n_pairs + r.excluded;
    const double rate = total ? static_cast<double>(r.excluded) / static_cast<double>(total) : 1.0;
    out += "llm\t" + r.dataset + "\t" + r.regime + "\t" + r.model + "\t" + std::to_string(r.n_pairs) + "\t" +
           std::to_string(r.excluded) + "\t" + fmt(rate) + "\t" + fmt(r.coverage) + "\t" + fmt(r.pearson) + "\t" +
           fmt(r.r2_squared_pearson) + "\t" + fmt(r.r2_agreement) + "\tNA\tNA\tNA\t" + sanitize(r.undefined_reason) +
           "\n";
  }
  for (const auto& b : in.baselines) {
    const std::size_t total = b.n_rows + b.dropped;
    const double rate = total ? static_cast<double>(b.dropped) / static_cast<double>(total) : 0.0;
    const bool ok = b.error.empty();
    out += "baseline\t" + b.dataset + "\tbaseline\t" + b.name + "\t" + std::to_string(b.n_rows) + "\t" +
           std::to_string(b.dropped) + "\t" + fmt(rate) + "\tNA\tNA\tNA\tNA\t" +
           (ok ? fmt(b.evaluation.mean_r2) : "undefined") + "\t" + (ok ? fmt(b.evaluation.sd_r2) : "undefined") +
           "\t" + std::to_string(b.evaluation.n_splits) + "\t" + sanitize(b.error) + "\n";
  }
  return out;
}

std::string position_table(const PositionCurve& c) {
  std::string out = "position\tr2\tn\n";
  for (const auto& e : c.entries) out += std::to_string(e.position) + "\t" + fmt(e.r2, "NA") + "\t" + std::to_string(e.n) + "\n";
  return out;
}

std::string reference_table() {
  // Published figures for comparison; LLM-regime rows span model families.
  struct Row {
    const char* dataset;
    const char* regime;
    const char* source;
    const char* metric;
    double low, high;
  };
  static constexpr Row kRows[] = {
      {"word_mem", "fine_tune", "llm", "r2", 0.53, 0.59},
      {"word_mem", "baseline", "combined_scalar", "mean_r2", 0.28, 0.28},
      {"sent_mem", "fine_tune", "llm", "r2", 0.45, 0.49},
      {"sent_mem", "baseline", "combined_scalar", "mean_r2", 0.32, 0.32},
      {"rt_spr", "zero_shot", "llm", "r2", 0.02, 0.05},
      {"rt_spr", "fine_tune", "llm", "r2", 0.15, 0.21},
      {"rt_spr", "baseline", "combined_scalar", "mean_r2", 0.08, 0.08},
      {"rt_et", "zero_shot", "llm", "r2", 0.27, 0.27},
      {"rt_et", "few_shot", "llm", "r2", 0.35, 0.35},
      {"rt_et", "fine_tune", "llm", "r2", 0.08, 0.57},
  };
  std::string out = "dataset\tregime\tsource\tmetric\tlow\thigh\n";
  for (const auto& r : kRows) {
    out += std::string(r.dataset) + "\t" + r.regime + "\t" + r.source + "\t" + r.metric + "\t" + fmt(r.low) + "\t" +
           fmt(r.high) + "\n";
  }
  return out;
}

nlohmann::json to_json(const LlmResult& r) {
  return {{"dataset", r.dataset},
          {"regime", r.regime},
          {"model", r.model},
          {"n_items", r.n_items},
          {"n_pairs", r.n_pairs},
          {"excluded", r.excluded},
          {"coverage", r.coverage},
          {"pearson", opt(r.pearson)},
          {"r2_squared_pearson", opt(r.r2_squared_pearson)},
          {"r2_agreement", opt(r.r2_agreement)},
          {"undefined_reason", r.undefined_reason}};
}

LlmResult llm_result_from_json(const nlohmann::json& j) {
  LlmResult r;
  r.dataset = j.at("dataset").get<std::string>();
  r.regime = j.at("regime").get<std::string>();
  r.model = j.at("model").get<std::string>();
  r.n_items = j.at("n_items").get<std::size_t>();
  r.n_pairs = j.at("n_pairs").get<std::size_t>();
  r.excluded = j.at("excluded").get<std::size_t>();
  r.coverage = j.at("coverage").get<double>();
  r.pearson = opt_from(j, "pearson");
  r.r2_squared_pearson = opt_from(j, "r2_squared_pearson");
  r.r2_agreement = opt_from(j, "r2_agreement");
  r.undefined_reason = j.value("undefined_reason", "");
  return r;
}

nlohmann::json to_json(const BaselineResult& r) {
  return {{"dataset", r.dataset},
          {"name", r.name},
          {"columns", r.columns},
          {"r2_values", r.evaluation.r2_values},
          {"mean_r2", r.evaluation.mean_r2},
          {"sd_r2", r.evaluation.sd_r2},
          {"n_splits", r.evaluation.n_splits},
          {"train_fraction", r.evaluation.train_fraction},
          {"n_rows", r.n_rows},
          {"dropped", r.dropped},
          {"error", r.error}};
}

BaselineResult baseline_result_from_json(const nlohmann::json& j) {
  BaselineResult r;
  r.dataset = j.at("dataset").get<std::string>();
  r.name = j.at("name").get<std::string>();
  r.columns = j.at("columns").get<std::vector<std::string>>();
  r.evaluation.r2_values = j.at("r2_values").get<std::vector<double>>();
  r.evaluation.mean_r2 = j.at("mean_r2").get<double>();
  r.evaluation.sd_r2 = j.at("sd_r2").get<double>();
  r.evaluation.n_splits = j.at("n_splits").get<std::size_t>();
  r.evaluation.train_fraction = j.at("train_fraction").get<double>();
  r.n_rows = j.at("n_rows").get<std::size_t>();
  r.dropped = j.at("dropped").get<std::size_t>();
  r.error = j.value("error", "");
  return r;
}

nlohmann::json to_json(const PositionCurve& c) {
  auto arr = nlohmann::json::array();
  for (const auto& e : c.entries) arr.push_back({{"position", e.position}, {"r2", opt(e.r2)}, {"n", e.n}});
  return arr;
}

PositionCurve position_curve_from_json(const nlohmann::json& j) {
  PositionCurve c;
  for (const auto& e : j) {
    c.entries.push_back(PositionEntry{e.at("position").get<int>(), opt_from(e, "r2"), e.at("n").get<std::size_t>()});
  }
  return c;
}

void emit_report(const ReportInput& in, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  text::write_file((out_dir / "manifest.json").string(), in.manifest.dump(2) + "\n");
  text::write_file((out_dir / "metrics.tsv").string(), metrics_table(in));
  text::write_file((out_dir / "reference.tsv").string(), reference_table());
  if (in.curve) text::write_file((out_dir / "position_curve.tsv").string(), position_table(*in.curve));

  std::string summary;
  for (const auto& r : in.llm) {
    auto j = to_json(r);
    j["type"] = "llm";
    summary += j.dump() + "\n";
  }
  for (const auto& b : in.baselines) {
    auto j = to_json(b);
    j["type"] = "baseline";
    j.erase("r2_values");
    summary += j.dump() + "\n";
  }
  text::write_file((out_dir / "summary.jsonl").string(), summary);

  nlohmann::json results;
  results["manifest"] = in.manifest;
  results["llm"] = nlohmann::json::array();
  for (const auto& r : in.llm) results["llm"].push_back(to_json(r));
  results["baselines"] = nlohmann::json::array();
  for (const auto& b : in.baselines) results["baselines"].push_back(to_json(b));
  results["curve"] = in.curve ? to_json(*in.curve) : nlohmann::json(nullptr);
  text::write_file((out_dir / "results.json").string(), results.dump(2) + "\n");
}

}  // namespace psynorm
