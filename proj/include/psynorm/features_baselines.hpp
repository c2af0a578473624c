#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "psynorm/corpus.hpp"

namespace psynorm {

/// Characters (Unicode scalar values) in the token, punctuation included.
std::size_t word_length(std::string_view w);

struct FrequencyTable {
  std::map<std::string, double> per_million;  // keys already normalized
  double floor_per_million = 1e-3;
};

/// TSV `word`, `per_million` with header. Keys are case-folded and
/// edge-stripped on load; duplicate normalized keys are summed.
FrequencyTable load_frequency_table(const std::string& path, double floor_per_million = 1e-3);
FrequencyTable parse_frequency_table(std::string_view content, double floor_per_million = 1e-3);

/// log10 of the per-million value for the normalized word, or of the floor
/// when out of vocabulary.
double log_frequency(std::string_view w, const FrequencyTable& table);

/// Sum of subword surprisals. Throws std::invalid_argument for an empty list
/// or a negative entry.
double word_surprisal(const std::vector<double>& subword_surprisals);

/// Groups tokens into words at whitespace-prefixed token boundaries and sums
/// surprisal in bits. The first token (no logprob) contributes nothing.
std::vector<std::pair<std::string, double>> words_from_token_logprobs(
    const std::vector<std::pair<std::string, std::optional<double>>>& tokens);

/// Per-token surprisal file: sentence_id, position, surprisal_bits|surprisal_nats.
/// Keys are token ids "<sentence_id>:<position>"; values kept in the file's base.
struct SurprisalTable {
  std::string base;  // "bits" or "nats"
  std::map<std::string, double> by_token;
};
SurprisalTable load_surprisal(const std::string& path);
SurprisalTable parse_surprisal(std::string_view content);
std::string serialize_surprisal(const SurprisalTable& t);

struct FeatureMatrix {
  std::vector<std::string> row_ids;
  /// Split unit per row (sentence id for RT tokens); empty means each row is
  /// its own unit.
  std::vector<std::string> groups;
  std::vector<std::string> columns;
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  std::size_t dropped = 0;  // records skipped for missing features
};

struct RegressionFit {
  Eigen::VectorXd coefficients;
  double intercept = 0.0;
  bool rank_deficient = false;
  Eigen::Index rank = 0;
};

struct OlsOptions {
  /// Fixed ridge penalty on the (centered) coefficients; 0 is plain OLS.
  double ridge_lambda = 0.0;
};

/// Least squares with intercept: columns and target are centered, then the
/// centered system is solved by complete orthogonal decomposition, giving the
/// minimum-norm solution when X is rank deficient (flagged in the fit).
/// Throws std::invalid_argument when rows < columns + 1.
RegressionFit fit_ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const OlsOptions& opts = {});

Eigen::VectorXd predict(const RegressionFit& fit, const Eigen::MatrixXd& X);

/// 1 - SS_res / SS_tot on the test set (centered on the test mean); can be
/// negative. Throws UndefinedMetric for a constant y_test.
double r2_holdout(const RegressionFit& fit, const Eigen::MatrixXd& X_test, const Eigen::VectorXd& y_test);

struct SplitEvaluation {
  std::vector<double> r2_values;
  double mean_r2 = 0.0;
  double sd_r2 = 0.0;  // sample standard deviation (n-1)
  std::size_t n_splits = 0;
  double train_fraction = 0.75;
};

/// Row indices of (train, test) for split `split_index`: split units sorted,
/// shuffled with splitmix64(seed + split_index), prefix is train. Each side
/// is ordered by row id so results do not depend on the input row order.
std::pair<std::vector<Eigen::Index>, std::vector<Eigen::Index>> split_rows(const FeatureMatrix& fm,
                                                                          double train_fraction,
                                                                          std::uint64_t seed,
                                                                          std::size_t split_index);

/// Repeated random train/test evaluation, OpenMP-parallel over splits; results
/// merged in split order.
SplitEvaluation evaluate_splits(const FeatureMatrix& fm, std::size_t n_splits = 100, double train_fraction = 0.75,
                                std::uint64_t seed = 0, const OlsOptions& opts = {});
/// Serial reference for evaluate_splits.
SplitEvaluation evaluate_splits_serial(const FeatureMatrix& fm, std::size_t n_splits = 100,
                                       double train_fraction = 0.75, std::uint64_t seed = 0,
                                       const OlsOptions& opts = {});

enum class FrequencyTransform { raw, log10 };

struct BaselineInputs {
  const Dataset* dataset = nullptr;
  const FrequencyTable* frequency = nullptr;   // RT only
  const SurprisalTable* surprisal = nullptr;   // RT only
  const EmbeddingTable* embeddings = nullptr;  // RT token embeddings; mem uses attached vectors
  /// Override the default scalar feature names for memorability datasets.
  std::vector<std::string> scalar_features;
  FrequencyTransform frequency_transform = FrequencyTransform::log10;
  double frequency_floor = 1e-3;
};

/// Default scalar predictors: num_meanings/num_synonyms/frequency for words,
/// distinctiveness/avg_word_memorability/avg_word_frequency for sentences,
/// length/frequency/surprisal for RT.
std::vector<std::string> default_scalar_features(DatasetKind kind);

/// Builds the matrix for the named scalar columns (dropping records that lack
/// any of them). The special name "embedding" expands to all embedding
/// dimensions.
FeatureMatrix build_feature_matrix(const BaselineInputs& in, const std::vector<std::string>& columns);

struct BaselineSpec {
  std::string name;
  std::vector<std::string> columns;
};

/// Each available scalar alone, all scalars combined, and "embedding" when
/// vectors are available.
std::vector<BaselineSpec> baseline_suite(const BaselineInputs& in);

}  // namespace psynorm
