#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "psynorm/align.hpp"
#include "psynorm/corpus.hpp"
#include "psynorm/features_baselines.hpp"

namespace psynorm {

struct PairedSeries {
  std::vector<std::string> ids;
  std::vector<double> predicted;
  std::vector<double> truth;
  std::size_t excluded = 0;  // pairs dropped for missing predictions
};

/// Sample Pearson r. Throws UndefinedMetric for fewer than two pairs or a
/// zero-variance side.
double pearson(const PairedSeries& s);

enum class R2Mode { squared_pearson, agreement };
std::string_view to_string(R2Mode m);
R2Mode parse_r2_mode(std::string_view s);

double r2_of_predictions(const PairedSeries& s, R2Mode mode = R2Mode::squared_pearson);

struct PositionEntry {
  int position = 0;
  std::optional<double> r2;  // empty when undefined for this group
  std::size_t n = 0;
};

struct PositionCurve {
  std::vector<PositionEntry> entries;
};

PositionCurve position_curve(const std::vector<AlignedPrediction>& preds, const Dataset& corpus, std::size_t min_n = 20,
                             R2Mode mode = R2Mode::squared_pearson);

/// Corpus-level series: every (predicted, truth) token pair, in corpus order.
PairedSeries rt_series(const std::vector<AlignedPrediction>& preds, const Dataset& corpus);

/// Metrics for one (regime, model) prediction set.
struct LlmResult {
  std::string dataset;
  std::string regime;
  std::string model;
  std::size_t n_items = 0;
  std::size_t n_pairs = 0;
  std::size_t excluded = 0;
  double coverage = 0.0;
  std::optional<double> pearson;
  std::optional<double> r2_squared_pearson;
  std::optional<double> r2_agreement;
  std::string undefined_reason;
};

/// Computes every metric the series supports; undefined ones stay empty.
LlmResult summarize_predictions(const PairedSeries& s, std::string dataset, std::string regime, std::string model,
                                std::size_t n_items, double coverage);

struct BaselineResult {
  std::string dataset;
  std::string name;
  std::vector<std::string> columns;
  SplitEvaluation evaluation;
  std::size_t n_rows = 0;
  std::size_t dropped = 0;
  std::string error;  // non-empty when the baseline could not be evaluated
};

struct ReportInput {
  nlohmann::json manifest;  // free-form; "created_at" is the only volatile field
  std::vector<LlmResult> llm;
  std::vector<BaselineResult> baselines;
  std::optional<PositionCurve> curve;
};

/// Writes manifest.json, metrics.tsv, position_curve.tsv (RT runs),
/// reference.tsv and summary.jsonl into out_dir. Column sets are listed in
/// docs/report_format.md.
void emit_report(const ReportInput& in, const std::filesystem::path& out_dir);

std::string metrics_table(const ReportInput& in);
std::string position_table(const PositionCurve& c);
std::string reference_table();

nlohmann::json to_json(const LlmResult& r);
LlmResult llm_result_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BaselineResult& r);
BaselineResult baseline_result_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PositionCurve& c);
PositionCurve position_curve_from_json(const nlohmann::json& j);

}  // namespace psynorm
