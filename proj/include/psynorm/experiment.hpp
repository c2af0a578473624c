#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "psynorm/align.hpp"
#include "psynorm/corpus.hpp"
#include "psynorm/llm_gateway.hpp"
#include "psynorm/metrics_report.hpp"

namespace psynorm {

enum class Regime { zero_shot, few_shot, fine_tune };
std::string_view to_string(Regime r);
Regime parse_regime(std::string_view s);

struct ExperimentConfig {
  struct DatasetSection {
    DatasetKind kind = DatasetKind::word_mem;
    std::string path;
    std::optional<std::string> embedding_path;
    std::optional<std::string> surprisal_path;
    std::optional<std::string> frequency_path;
    std::vector<std::string> scalar_features;  // empty: defaults for kind
  } dataset;
  Regime regime = Regime::zero_shot;
  struct Backend {
    std::string base_url = "https://api.openai.com/v1";
    std::string model = "gpt-4o-mini-2024-07-18";
    std::string auth_env_var = "OPENAI_API_KEY";
    std::size_t max_in_flight = 8;
    int max_retries = 5;
    std::optional<MockPersonality> mock;
    std::string cache_dir;  // empty: <output_dir>/cache
  } backend;
  struct Seeds {
    std::uint64_t split_seed = 0;
    std::uint64_t fewshot_seed = 0;
    std::uint64_t baseline_seed = 0;
  } seeds;
  struct Splits {
    double finetune_train_fraction = 0.25;
    std::size_t baseline_n = 100;
    double baseline_train_fraction = 0.75;
  } splits;
  std::size_t few_shot_k = 3;
  FineTuneHyperparams hyperparams;
  double poll_interval_s = 30.0;
  double finetune_timeout_s = 86400.0;
  R2Mode r2_mode = R2Mode::squared_pearson;
  bool include_clamped = true;
  bool project_substitutions = true;
  bool repair_retry = false;
  std::size_t min_position_n = 20;
  FrequencyTransform frequency_transform = FrequencyTransform::log10;
  double frequency_floor = 1e-3;
  double ridge_lambda = 0.0;
  std::string output_dir = "run";

  /// Parses and validates; ConfigError messages name the offending key.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);
  nlohmann::json to_json() const;
};

/// One elicited item: raw text, parse outcome and the value(s) used.
struct ItemPrediction {
  std::string id;
  std::string raw;
  std::string status;  // parse status, or "error" for backend failure
  std::optional<double> value;                // scalar kinds
  std::vector<std::optional<double>> values;  // rt kinds, per reference token
  double coverage = 0.0;
};

struct ElicitOutcome {
  std::vector<ItemPrediction> items;
  LlmResult metrics;
  std::optional<PositionCurve> curve;
  nlohmann::json manifest_fragment;
};

/// Holds the pieces a run shares between stages. Tests inject backends.
class Experiment {
 public:
  explicit Experiment(ExperimentConfig cfg);

  /// Use these instead of building HTTP/mock backends from the config.
  void set_chat_backend(std::shared_ptr<ChatBackend> b);
  void set_finetune_backend(std::shared_ptr<FineTuneBackend> b);

  const ExperimentConfig& config() const { return cfg_; }
  const Dataset& dataset();
  /// (train, eval) under finetune_train_fraction and split_seed; asserts disjointness.
  const std::pair<Dataset, Dataset>& split();

  FineTuneJob finetune();
  ElicitOutcome elicit(const std::optional<std::string>& model_override = std::nullopt);
  std::vector<BaselineResult> baselines();

  /// ingest -> [fine-tune] -> elicit -> parse/align -> metrics -> baselines -> report.
  void run();

  ChatBackend& chat_backend();
  FineTuneBackend& finetune_backend();
  std::filesystem::path out_dir() const { return cfg_.output_dir; }

 private:
  ExperimentConfig cfg_;
  std::optional<Dataset> dataset_;
  std::optional<std::pair<Dataset, Dataset>> split_;
  std::shared_ptr<ChatBackend> chat_;
  std::shared_ptr<FineTuneBackend> ft_;
  std::unique_ptr<HttpTransport> transport_;
  std::unique_ptr<ResponseCache> cache_;

  HttpTransport& transport();
  ResponseCache& cache();
  nlohmann::json base_manifest();
};

/// Loads any dataset kind from its canonical file.
Dataset load_dataset(DatasetKind kind, const std::string& path);

/// Re-reads <dir>/results/*.json and rewrites the report tables.
void regenerate_report(const std::filesystem::path& run_dir);

/// Process exit codes.
enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitBackend = 3, kExitData = 4 };

/// Entry point shared by the CLI binary and the tests.
int run_cli(int argc, const char* const* argv);

}  // namespace psynorm
