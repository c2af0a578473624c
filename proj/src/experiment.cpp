#include "psynorm/experiment.hpp"

#include <cstdlib>
#include <ctime>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "psynorm/errors.hpp"
#include "psynorm/response_parse.hpp"
#include "psynorm/text.hpp"

namespace psynorm {

using nlohmann::json;

std::string_view to_string(Regime r) {
  switch (r) {
    case Regime::zero_shot: return "zero_shot";
    case Regime::few_shot: return "few_shot";
    case Regime::fine_tune: return "fine_tune";
  }
  return "?";
}

Regime parse_regime(std::string_view s) {
  if (s == "zero_shot") return Regime::zero_shot;
  if (s == "few_shot") return Regime::few_shot;
  if (s == "fine_tune") return Regime::fine_tune;
  throw ConfigError("regime: unknown value '" + std::string(s) + "' (expected zero_shot, few_shot, fine_tune)");
}

// ---------------------------------------------------------------------------
// Config

namespace {

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, _] : j.items()) {
    if (!allowed.count(k)) throw ConfigError((where.empty() ? "" : where + ".") + k + ": unknown key");
  }
}

template <typename T>
T get(const json& j, const std::string& key, const std::string& where, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError((where.empty() ? "" : where + ".") + key + ": wrong type");
  }
}

std::optional<std::string> get_opt_str(const json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  if (!j.at(key).is_string()) throw ConfigError(where + "." + key + ": expected a string");
  return j.at(key).get<std::string>();
}

void check_fraction(double f, const std::string& key) {
  if (!(f > 0.0 && f < 1.0)) throw ConfigError(key + ": must be in (0,1), got " + text::format_double(f));
}

std::string resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty() || base.empty()) return p;
  std::filesystem::path path(p);
  return path.is_absolute() ? p : (base / path).lexically_normal().string();
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  check_keys(j, "", {"dataset", "regime", "backend", "seeds", "splits", "few_shot", "fine_tune", "metrics", "align",
                     "baselines", "repair_retry", "output_dir"});
  ExperimentConfig c;
  if (!j.contains("dataset")) throw ConfigError("dataset: missing");
  const auto& d = j.at("dataset");
  check_keys(d, "dataset", {"kind", "path", "embedding_path", "surprisal_path", "frequency_path", "scalar_features"});
  if (!d.contains("kind")) throw ConfigError("dataset.kind: missing");
  try {
    c.dataset.kind = parse_dataset_kind(get<std::string>(d, "kind", "dataset", ""));
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("dataset.kind: ") + e.what());
  }
  c.dataset.path = get<std::string>(d, "path", "dataset", "");
  if (c.dataset.path.empty()) throw ConfigError("dataset.path: missing");
  c.dataset.embedding_path = get_opt_str(d, "embedding_path", "dataset");
  c.dataset.surprisal_path = get_opt_str(d, "surprisal_path", "dataset");
  c.dataset.frequency_path = get_opt_str(d, "frequency_path", "dataset");
  c.dataset.scalar_features = get<std::vector<std::string>>(d, "scalar_features", "dataset", {});

  if (j.contains("regime")) c.regime = parse_regime(get<std::string>(j, "regime", "", "zero_shot"));

  if (j.contains("backend")) {
    const auto& b = j.at("backend");
    check_keys(b, "backend", {"base_url", "model", "auth_env_var", "max_in_flight", "max_retries", "mock", "cache_dir"});
    c.backend.base_url = get<std::string>(b, "base_url", "backend", c.backend.base_url);
    c.backend.model = get<std::string>(b, "model", "backend", c.backend.model);
    c.backend.auth_env_var = get<std::string>(b, "auth_env_var", "backend", c.backend.auth_env_var);
    c.backend.max_in_flight = get<std::size_t>(b, "max_in_flight", "backend", c.backend.max_in_flight);
    c.backend.max_retries = get<int>(b, "max_retries", "backend", c.backend.max_retries);
    c.backend.cache_dir = get<std::string>(b, "cache_dir", "backend", "");
    if (auto m = get_opt_str(b, "mock", "backend")) {
      try {
        c.backend.mock = parse_mock_personality(*m);
      } catch (const ConfigError& e) {
        throw ConfigError(std::string("backend.mock: ") + e.what());
      }
    }
    if (c.backend.max_in_flight < 1) throw ConfigError("backend.max_in_flight: must be >= 1");
    if (c.backend.max_retries < 0) throw ConfigError("backend.max_retries: must be >= 0");
    if (c.backend.model.empty()) throw ConfigError("backend.model: must be non-empty");
  }
  if (j.contains("seeds")) {
    const auto& s = j.at("seeds");
    check_keys(s, "seeds", {"split_seed", "fewshot_seed", "baseline_seed"});
    c.seeds.split_seed = get<std::uint64_t>(s, "split_seed", "seeds", 0);
    c.seeds.fewshot_seed = get<std::uint64_t>(s, "fewshot_seed", "seeds", 0);
    c.seeds.baseline_seed = get<std::uint64_t>(s, "baseline_seed", "seeds", 0);
  }
  if (j.contains("splits")) {
    const auto& s = j.at("splits");
    check_keys(s, "splits", {"finetune_train_fraction", "baseline_n", "baseline_train_fraction"});
    c.splits.finetune_train_fraction = get<double>(s, "finetune_train_fraction", "splits", 0.25);
    c.splits.baseline_n = get<std::size_t>(s, "baseline_n", "splits", 100);
    c.splits.baseline_train_fraction = get<double>(s, "baseline_train_fraction", "splits", 0.75);
  }
  check_fraction(c.splits.finetune_train_fraction, "splits.finetune_train_fraction");
  check_fraction(c.splits.baseline_train_fraction, "splits.baseline_train_fraction");
  if (c.splits.baseline_n < 1) throw ConfigError("splits.baseline_n: must be >= 1");

  if (j.contains("few_shot")) {
    check_keys(j.at("few_shot"), "few_shot", {"k"});
    c.few_shot_k = get<std::size_t>(j.at("few_shot"), "k", "few_shot", 3);
  }
  if (j.contains("fine_tune")) {
    const auto& f = j.at("fine_tune");
    check_keys(f, "fine_tune", {"epochs", "batch_size", "learning_rate_multiplier", "poll_interval_s", "timeout_s"});
    c.hyperparams.epochs = get<int>(f, "epochs", "fine_tune", 3);
    c.hyperparams.batch_size = get<int>(f, "batch_size", "fine_tune", 1);
    c.hyperparams.learning_rate_multiplier = get<double>(f, "learning_rate_multiplier", "fine_tune", 1.8);
    c.poll_interval_s = get<double>(f, "poll_interval_s", "fine_tune", 30.0);
    c.finetune_timeout_s = get<double>(f, "timeout_s", "fine_tune", 86400.0);
    if (c.hyperparams.epochs < 1) throw ConfigError("fine_tune.epochs: must be >= 1");
    if (c.hyperparams.batch_size < 1) throw ConfigError("fine_tune.batch_size: must be >= 1");
    if (!(c.hyperparams.learning_rate_multiplier > 0.0)) throw ConfigError("fine_tune.learning_rate_multiplier: must be > 0");
  }
  if (j.contains("metrics")) {
    const auto& m = j.at("metrics");
    check_keys(m, "metrics", {"r2_mode", "include_clamped", "min_position_n"});
    c.r2_mode = parse_r2_mode(get<std::string>(m, "r2_mode", "metrics", "squared_pearson"));
    c.include_clamped = get<bool>(m, "include_clamped", "metrics", true);
    c.min_position_n = get<std::size_t>(m, "min_position_n", "metrics", 20);
  }
  if (j.contains("align")) {
    check_keys(j.at("align"), "align", {"project_substitutions"});
    c.project_substitutions = get<bool>(j.at("align"), "project_substitutions", "align", true);
  }
  if (j.contains("baselines")) {
    const auto& b = j.at("baselines");
    check_keys(b, "baselines", {"frequency_transform", "frequency_floor", "ridge_lambda"});
    auto t = get<std::string>(b, "frequency_transform", "baselines", "log10");
    if (t == "log10") c.frequency_transform = FrequencyTransform::log10;
    else if (t == "raw") c.frequency_transform = FrequencyTransform::raw;
    else throw ConfigError("baselines.frequency_transform: expected raw or log10");
    c.frequency_floor = get<double>(b, "frequency_floor", "baselines", 1e-3);
    c.ridge_lambda = get<double>(b, "ridge_lambda", "baselines", 0.0);
    if (!(c.frequency_floor > 0.0)) throw ConfigError("baselines.frequency_floor: must be > 0");
    if (c.ridge_lambda < 0.0) throw ConfigError("baselines.ridge_lambda: must be >= 0");
  }
  c.repair_retry = get<bool>(j, "repair_retry", "", false);
  c.output_dir = get<std::string>(j, "output_dir", "", "run");
  if (c.regime == Regime::few_shot && c.few_shot_k < 1) throw ConfigError("few_shot.k: few_shot regime needs k >= 1");
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::string content;
  try {
    content = text::read_file(path);
  } catch (const DataError&) {
    throw ConfigError("cannot read config file '" + path + "'");
  }
  json j;
  try {
    j = json::parse(content);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  auto c = from_json(j);
  const auto base = std::filesystem::path(path).parent_path();
  c.dataset.path = resolve(base, c.dataset.path);
  for (auto* p : {&c.dataset.embedding_path, &c.dataset.surprisal_path, &c.dataset.frequency_path}) {
    if (*p) *p = resolve(base, **p);
  }
  return c;
}

json ExperimentConfig::to_json() const {
  json j;
  j["dataset"] = {{"kind", to_string(dataset.kind)}, {"path", dataset.path}};
  if (dataset.embedding_path) j["dataset"]["embedding_path"] = *dataset.embedding_path;
  if (dataset.surprisal_path) j["dataset"]["surprisal_path"] = *dataset.surprisal_path;
  if (dataset.frequency_path) j["dataset"]["frequency_path"] = *dataset.frequency_path;
  if (!dataset.scalar_features.empty()) j["dataset"]["scalar_features"] = dataset.scalar_features;
  j["regime"] = to_string(regime);
  j["backend"] = {{"base_url", backend.base_url},
                  {"model", backend.model},
                  {"auth_env_var", backend.auth_env_var},
                  {"max_in_flight", backend.max_in_flight},
                  {"max_retries", backend.max_retries}};
  if (backend.mock) j["backend"]["mock"] = to_string(*backend.mock);
  if (!backend.cache_dir.empty()) j["backend"]["cache_dir"] = backend.cache_dir;
  j["seeds"] = {{"split_seed", seeds.split_seed}, {"fewshot_seed", seeds.fewshot_seed}, {"baseline_seed", seeds.baseline_seed}};
  j["splits"] = {{"finetune_train_fraction", splits.finetune_train_fraction},
                 {"baseline_n", splits.baseline_n},
                 {"baseline_train_fraction", splits.baseline_train_fraction}};
  j["few_shot"] = {{"k", few_shot_k}};
  j["fine_tune"] = {{"epochs", hyperparams.epochs},
                    {"batch_size", hyperparams.batch_size},
                    {"learning_rate_multiplier", hyperparams.learning_rate_multiplier},
                    {"poll_interval_s", poll_interval_s},
                    {"timeout_s", finetune_timeout_s}};
  j["metrics"] = {{"r2_mode", to_string(r2_mode)}, {"include_clamped", include_clamped}, {"min_position_n", min_position_n}};
  j["align"] = {{"project_substitutions", project_substitutions}};
  j["baselines"] = {{"frequency_transform", frequency_transform == FrequencyTransform::log10 ? "log10" : "raw"},
                    {"frequency_floor", frequency_floor},
                    {"ridge_lambda", ridge_lambda}};
  j["repair_retry"] = repair_retry;
  j["output_dir"] = output_dir;
  return j;
}

// ---------------------------------------------------------------------------
// Experiment

Dataset load_dataset(DatasetKind kind, const std::string& path) {
  return is_rt(kind) ? load_rt_corpus(path, kind) : load_norms(path, kind);
}

Experiment::Experiment(ExperimentConfig cfg) : cfg_(std::move(cfg)) {}

void Experiment::set_chat_backend(std::shared_ptr<ChatBackend> b) { chat_ = std::move(b); }
void Experiment::set_finetune_backend(std::shared_ptr<FineTuneBackend> b) { ft_ = std::move(b); }

const Dataset& Experiment::dataset() {
  if (!dataset_) {
    auto d = load_dataset(cfg_.dataset.kind, cfg_.dataset.path);
    if (d.empty()) throw DataError(cfg_.dataset.path + ": dataset has no items");
    if (!is_rt(d.kind) && cfg_.dataset.embedding_path) attach_embeddings(d, load_embeddings(*cfg_.dataset.embedding_path));
    dataset_ = std::move(d);
  }
  return *dataset_;
}

const std::pair<Dataset, Dataset>& Experiment::split() {
  if (!split_) {
    split_ = split_dataset(dataset(), cfg_.splits.finetune_train_fraction, cfg_.seeds.split_seed);
    std::set<std::string> train_ids;
    for (const auto& id : split_->first.ids()) train_ids.insert(id);
    for (const auto& id : split_->second.ids()) {
      if (train_ids.count(id)) throw std::logic_error("train and eval splits share id '" + id + "'");
    }
  }
  return *split_;
}

namespace {

std::string bearer_token(const ExperimentConfig& cfg) {
  if (cfg.backend.auth_env_var.empty()) return {};
  const char* v = std::getenv(cfg.backend.auth_env_var.c_str());
  if (!v || !*v) {
    throw ConfigError("backend.auth_env_var: environment variable " + cfg.backend.auth_env_var +
                      " is not set (use --mock for offline runs, or set auth_env_var to \"\" for unauthenticated servers)");
  }
  return v;
}

RetryPolicy retry_policy(const ExperimentConfig& cfg) {
  RetryPolicy p;
  p.max_retries = cfg.backend.max_retries;
  return p;
}

}  // namespace

HttpTransport& Experiment::transport() {
  if (!transport_) transport_ = make_http_transport(cfg_.backend.base_url, bearer_token(cfg_));
  return *transport_;
}

ResponseCache& Experiment::cache() {
  if (!cache_) {
    auto dir = cfg_.backend.cache_dir.empty() ? out_dir() / "cache" : std::filesystem::path(cfg_.backend.cache_dir);
    cache_ = std::make_unique<ResponseCache>(dir);
  }
  return *cache_;
}

ChatBackend& Experiment::chat_backend() {
  if (!chat_) {
    if (cfg_.backend.mock) {
      chat_ = std::make_shared<MockBackend>(*cfg_.backend.mock, MockBackend::oracle_fixture(dataset()));
    } else {
      chat_ = std::make_shared<HttpChatBackend>(make_http_transport(cfg_.backend.base_url, bearer_token(cfg_)),
                                                retry_policy(cfg_));
    }
  }
  return *chat_;
}

FineTuneBackend& Experiment::finetune_backend() {
  if (!ft_) {
    if (cfg_.backend.mock) ft_ = std::make_shared<MockFineTuneBackend>();
    else ft_ = std::make_shared<HttpFineTuneBackend>(transport(), retry_policy(cfg_));
  }
  return *ft_;
}

namespace {

std::string now_iso8601() {
  auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return ss.str();
}

json read_results(const std::filesystem::path& dir) {
  auto path = dir / "results.json";
  if (!std::filesystem::exists(path)) return json::object();
  return json::parse(text::read_file(path.string()));
}

ReportInput report_from_results(const json& results) {
  ReportInput in;
  in.manifest = results.value("manifest", json::object());
  for (const auto& r : results.value("llm", json::array())) in.llm.push_back(llm_result_from_json(r));
  for (const auto& b : results.value("baselines", json::array())) in.baselines.push_back(baseline_result_from_json(b));
  if (results.contains("curve") && !results["curve"].is_null()) in.curve = position_curve_from_json(results["curve"]);
  return in;
}

void merge_manifest(json& into, const json& from) {
  for (const auto& [k, v] : from.items()) into[k] = v;
}

std::string tsv_escape(std::string s) {
  std::string out;
  for (char c : s) {
    if (c == '\t') out += "\\t";
    else if (c == '\n') out += "\\n";
    else if (c == '\r') out += "\\r";
    else if (c == '\\') out += "\\\\";
    else out += c;
  }
  return out;
}

constexpr std::string_view kRepairTurn =
    "Your previous answer could not be read. Reply again in exactly the requested format and nothing else.";

}  // namespace

json Experiment::base_manifest() {
  const auto& [train, eval] = split();
  json m;
  m["created_at"] = now_iso8601();
  m["dataset"] = {{"kind", to_string(cfg_.dataset.kind)}, {"path", cfg_.dataset.path}, {"n_items", dataset().size()}};
  if (is_rt(cfg_.dataset.kind)) m["dataset"]["n_tokens"] = dataset().token_count();
  m["regime"] = to_string(cfg_.regime);
  m["model"] = cfg_.backend.model;
  m["backend"] = cfg_.backend.mock ? "mock:" + std::string(to_string(*cfg_.backend.mock)) : cfg_.backend.base_url;
  m["seeds"] = {{"split_seed", cfg_.seeds.split_seed},
                {"fewshot_seed", cfg_.seeds.fewshot_seed},
                {"baseline_seed", cfg_.seeds.baseline_seed}};
  m["splits"] = {{"finetune_train_fraction", cfg_.splits.finetune_train_fraction},
                 {"baseline_n", cfg_.splits.baseline_n},
                 {"baseline_train_fraction", cfg_.splits.baseline_train_fraction}};
  const auto kind = prompt_kind_for(cfg_.dataset.kind);
  m["prompt"] = {{"kind", to_string(kind)}, {"template_sha256", template_fingerprint(kind)}};
  m["train_ids"] = train.ids();
  m["eval_ids"] = eval.ids();
  m["r2_mode"] = to_string(cfg_.r2_mode);
  m["include_clamped"] = cfg_.include_clamped;
  m["project_substitutions"] = cfg_.project_substitutions;
  return m;
}

FineTuneJob Experiment::finetune() {
  const auto& train = split().first;
  const auto kind = prompt_kind_for(train.kind);
  std::vector<FineTuneExample> examples;
  for (const auto& item : items_of(train)) examples.push_back(make_finetune_example(kind, item));
  const auto training = serialize_finetune_file(examples);
  std::filesystem::create_directories(out_dir());
  text::write_file((out_dir() / "finetune_train.jsonl").string(), training);
  std::cerr << "finetune: " << examples.size() << " training examples, base model " << cfg_.backend.model << "\n";

  const auto poll = std::chrono::milliseconds(static_cast<long long>(cfg_.poll_interval_s * 1000.0));
  const auto timeout = std::chrono::milliseconds(static_cast<long long>(cfg_.finetune_timeout_s * 1000.0));
  auto job = run_finetune(training, cfg_.backend.model, cfg_.hyperparams, finetune_backend(), poll, timeout);

  json j = {{"job_id", job.job_id},
            {"base_model", job.base_model},
            {"training_file_ref", job.training_file_ref},
            {"hyperparams",
             {{"epochs", job.hyperparams.epochs},
              {"batch_size", job.hyperparams.batch_size},
              {"learning_rate_multiplier", job.hyperparams.learning_rate_multiplier}}},
            {"status", to_string(job.status)},
            {"result_model", job.result_model ? json(*job.result_model) : json(nullptr)},
            {"message", job.message},
            {"n_examples", examples.size()},
            {"train_ids", train.ids()}};
  text::write_file((out_dir() / "finetune_job.json").string(), j.dump(2) + "\n");
  if (job.status != JobStatus::succeeded) throw BackendError("fine-tuning job " + job.job_id + " failed: " + job.message);
  return job;
}

ElicitOutcome Experiment::elicit(const std::optional<std::string>& model_override) {
  const auto& [train, eval] = split();
  const auto kind = prompt_kind_for(eval.kind);

  std::string model = model_override.value_or(cfg_.backend.model);
  if (cfg_.regime == Regime::fine_tune && !model_override) {
    const auto job_path = out_dir() / "finetune_job.json";
    if (!std::filesystem::exists(job_path)) {
      throw ConfigError("regime: fine_tune needs a tuned model; run the finetune subcommand first");
    }
    auto job = json::parse(text::read_file(job_path.string()));
    if (!job["result_model"].is_string()) throw ConfigError("regime: fine-tuning job in " + job_path.string() + " has no result model");
    model = job["result_model"].get<std::string>();
  }

  std::vector<Item> examples;
  if (cfg_.regime == Regime::few_shot) examples = select_few_shot_examples(train, cfg_.few_shot_k, cfg_.seeds.fewshot_seed);

  const auto items = items_of(eval);
  std::vector<ChatRequest> reqs;
  reqs.reserve(items.size());
  for (const auto& item : items) {
    auto prompt = cfg_.regime == Regime::few_shot ? render_few_shot(kind, item, examples) : render_zero_shot(kind, item);
    const auto* s = std::get_if<RtSentence>(&item);
    reqs.push_back(ChatRequest{model, std::move(prompt.messages), 0.0,
                               default_max_output_tokens(kind, s ? s->tokens.size() : 0)});
  }
  std::cerr << "elicit: " << reqs.size() << " requests to " << model << " (" << to_string(cfg_.regime) << ")\n";
  auto results = complete_batch(reqs, chat_backend(), &cache(), cfg_.backend.max_in_flight);

  auto parses = [&](const std::string& t) {
    return kind == PromptKind::rt ? parse_duration_map(t).status != MapStatus::unparseable
                                  : parse_scalar_rating(t).status != ScalarStatus::no_number;
  };
  std::size_t repaired = 0;
  if (cfg_.repair_retry) {
    std::vector<std::size_t> idx;
    std::vector<ChatRequest> retry;
    for (std::size_t i = 0; i < results.size(); ++i) {
      if (!results[i].ok() || parses(results[i].response->text)) continue;
      auto r = reqs[i];
      r.messages.push_back(Message{Role::assistant, results[i].response->text});
      r.messages.push_back(Message{Role::user, std::string(kRepairTurn)});
      idx.push_back(i);
      retry.push_back(std::move(r));
    }
    auto second = complete_batch(retry, chat_backend(), &cache(), cfg_.backend.max_in_flight);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (second[k].ok() && parses(second[k].response->text)) {
        results[idx[k]] = std::move(second[k]);
        ++repaired;
      }
    }
  }

  std::size_t backend_errors = 0, cache_hits = 0;
  std::string first_error;
  for (const auto& r : results) {
    if (!r.ok()) {
      if (!backend_errors++) first_error = r.error;
    } else if (r.response->from_cache) {
      ++cache_hits;
    }
  }
  if (!results.empty() && backend_errors == results.size()) {
    throw BackendError("every request failed; first error: " + first_error);
  }

  ElicitOutcome out;
  std::map<std::string, std::size_t> status_counts;
  PairedSeries series;
  double coverage = 0.0;

  if (kind != PromptKind::rt) {
    std::size_t with_value = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& rec = std::get<NormRecord>(items[i]);
      ItemPrediction p;
      p.id = rec.id;
      if (!results[i].ok()) {
        p.status = "error";
        p.raw = results[i].error;
      } else {
        auto parsed = parse_scalar_rating(results[i].response->text);
        p.raw = results[i].response->text;
        p.status = std::string(to_string(parsed.status));
        const bool usable = parsed.value && (parsed.status == ScalarStatus::ok || cfg_.include_clamped);
        if (usable) p.value = parsed.value;
      }
      ++status_counts[p.status];
      if (p.value) {
        ++with_value;
        p.coverage = 1.0;
        series.ids.push_back(rec.id);
        series.predicted.push_back(*p.value);
        series.truth.push_back(rec.score);
      } else {
        ++series.excluded;
      }
      out.items.push_back(std::move(p));
    }
    coverage = items.empty() ? 0.0 : static_cast<double>(with_value) / static_cast<double>(items.size());
  } else {
    std::vector<DurationMap> maps(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (results[i].ok()) maps[i] = parse_duration_map(results[i].response->text);
    }
    ProjectionOptions opts;
    opts.project_substitutions = cfg_.project_substitutions;
    auto aligned = project_batch(eval.rt_sentences, maps, opts);
    std::size_t covered = 0, total = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
      ItemPrediction p;
      p.id = eval.rt_sentences[i].id;
      p.raw = results[i].ok() ? results[i].response->text : results[i].error;
      p.status = results[i].ok() ? std::string(to_string(maps[i].status)) : "error";
      p.values = aligned[i].values;
      p.coverage = aligned[i].coverage;
      ++status_counts[p.status];
      for (const auto& v : p.values) covered += v.has_value();
      total += p.values.size();
      out.items.push_back(std::move(p));
    }
    coverage = total ? static_cast<double>(covered) / static_cast<double>(total) : 0.0;
    series = rt_series(aligned, eval);
    out.curve = position_curve(aligned, eval, cfg_.min_position_n, cfg_.r2_mode);
  }

  out.metrics = summarize_predictions(series, std::string(to_string(cfg_.dataset.kind)), std::string(to_string(cfg_.regime)),
                                      model, items.size(), coverage);
  if (!out.metrics.undefined_reason.empty()) {
    std::cerr << "elicit: metric undefined (" << out.metrics.undefined_reason << "); reported as undefined\n";
  }

  json frag;
  frag["model"] = model;
  frag["elicitation"] = {{"requests", reqs.size()},
                         {"backend_errors", backend_errors},
                         {"cache_hits", cache_hits},
                         {"repaired", repaired},
                         {"parse_status", status_counts},
                         {"coverage", coverage},
                         {"excluded_pairs", series.excluded},
                         {"max_output_tokens_scalar", default_max_output_tokens(PromptKind::word_mem)}};
  std::vector<std::string> example_ids;
  for (const auto& e : examples) example_ids.push_back(item_id(e));
  frag["few_shot_ids"] = example_ids;
  out.manifest_fragment = std::move(frag);

  // Per-item predictions, in eval order.
  std::filesystem::create_directories(out_dir());
  std::string tsv = "id\tstatus\tcoverage\tvalues\traw\n";
  for (const auto& p : out.items) {
    std::string vals;
    if (kind != PromptKind::rt) {
      vals = p.value ? text::format_double(*p.value) : "NA";
    } else {
      for (std::size_t k = 0; k < p.values.size(); ++k) {
        if (k) vals += ",";
        vals += p.values[k] ? text::format_double(*p.values[k]) : "NA";
      }
    }
    tsv += p.id + "\t" + p.status + "\t" + text::format_double(p.coverage) + "\t" + vals + "\t" + tsv_escape(p.raw) + "\n";
  }
  text::write_file((out_dir() / "predictions.tsv").string(), tsv);

  auto stored = read_results(out_dir());
  auto report = report_from_results(stored);
  auto manifest = base_manifest();
  if (stored.contains("manifest")) {
    manifest = stored["manifest"];
    merge_manifest(manifest, base_manifest());
  }
  merge_manifest(manifest, out.manifest_fragment);
  report.manifest = manifest;
  report.llm = {out.metrics};
  report.curve = out.curve;
  emit_report(report, out_dir());
  return out;
}

std::vector<BaselineResult> Experiment::baselines() {
  BaselineInputs in;
  in.dataset = &dataset();
  in.scalar_features = cfg_.dataset.scalar_features;
  in.frequency_transform = cfg_.frequency_transform;
  in.frequency_floor = cfg_.frequency_floor;
  std::optional<FrequencyTable> freq;
  std::optional<SurprisalTable> surp;
  std::optional<EmbeddingTable> emb;
  if (is_rt(dataset().kind)) {
    if (cfg_.dataset.frequency_path) freq = load_frequency_table(*cfg_.dataset.frequency_path, cfg_.frequency_floor);
    if (cfg_.dataset.surprisal_path) surp = load_surprisal(*cfg_.dataset.surprisal_path);
    if (cfg_.dataset.embedding_path) emb = load_embeddings(*cfg_.dataset.embedding_path);
    if (freq) in.frequency = &*freq;
    if (surp) in.surprisal = &*surp;
    if (emb) in.embeddings = &*emb;
  }
  OlsOptions ols;
  ols.ridge_lambda = cfg_.ridge_lambda;

  std::vector<BaselineResult> out;
  for (const auto& spec : baseline_suite(in)) {
    BaselineResult r;
    r.dataset = std::string(to_string(dataset().kind));
    r.name = spec.name;
    r.columns = spec.columns;
    r.evaluation.train_fraction = cfg_.splits.baseline_train_fraction;
    try {
      auto fm = build_feature_matrix(in, spec.columns);
      r.n_rows = fm.row_ids.size();
      r.dropped = fm.dropped;
      if (fm.dropped) std::cerr << "baselines: " << spec.name << " dropped " << fm.dropped << " records with missing features\n";
      r.evaluation = evaluate_splits(fm, cfg_.splits.baseline_n, cfg_.splits.baseline_train_fraction,
                                     cfg_.seeds.baseline_seed, ols);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      r.error = e.what();
      std::cerr << "baselines: " << spec.name << " could not be evaluated: " << e.what() << "\n";
    }
    out.push_back(std::move(r));
  }

  auto stored = read_results(out_dir());
  auto report = report_from_results(stored);
  auto manifest = stored.contains("manifest") ? stored["manifest"] : base_manifest();
  manifest["baselines"] = {{"n_suites", out.size()},
                           {"frequency_transform", cfg_.frequency_transform == FrequencyTransform::log10 ? "log10" : "raw"},
                           {"ridge_lambda", cfg_.ridge_lambda}};
  report.manifest = manifest;
  report.baselines = out;
  emit_report(report, out_dir());
  return out;
}

namespace {

// Runs one pipeline stage, prefixing failures with the stage name while
// keeping the error category (and so the exit code).
template <typename Fn>
auto stage(const char* name, Fn&& fn) {
  const std::string prefix = std::string("stage ") + name + ": ";
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const BackendError& e) {
    throw BackendError(prefix + e.what(), e.http_status());
  } catch (const DataError& e) {
    throw DataError(prefix + e.what());
  }
}

}  // namespace

void Experiment::run() {
  stage("ingest", [&] { (void)split(); });
  std::optional<std::string> tuned;
  if (cfg_.regime == Regime::fine_tune) tuned = stage("finetune", [&] { return *finetune().result_model; });
  stage("elicit", [&] { (void)elicit(tuned); });
  stage("baselines", [&] { (void)baselines(); });
}

void regenerate_report(const std::filesystem::path& run_dir) {
  if (!std::filesystem::exists(run_dir / "results.json")) {
    throw DataError("no results.json in " + run_dir.string() + "; nothing to report");
  }
  emit_report(report_from_results(read_results(run_dir)), run_dir);
}

// ---------------------------------------------------------------------------
// CLI

namespace {

int ingest(const ExperimentConfig& cfg) {
  auto d = load_dataset(cfg.dataset.kind, cfg.dataset.path);
  const std::filesystem::path dir = std::filesystem::path(cfg.output_dir) / "canonical";
  std::filesystem::create_directories(dir);
  if (is_rt(d.kind)) {
    text::write_file((dir / "rt.tsv").string(), serialize_rt_corpus(d));
    std::cout << to_string(d.kind) << ": " << d.size() << " sentences, " << d.token_count() << " tokens\n";
  } else {
    if (cfg.dataset.embedding_path) {
      auto emb = load_embeddings(*cfg.dataset.embedding_path);
      attach_embeddings(d, emb);
      text::write_file((dir / "embeddings.tsv").string(), serialize_embeddings(d));
    }
    text::write_file((dir / "norms.tsv").string(), serialize_norms(d));
    std::cout << to_string(d.kind) << ": " << d.size() << " records\n";
  }
  if (is_rt(d.kind)) {
    if (cfg.dataset.frequency_path) (void)load_frequency_table(*cfg.dataset.frequency_path);
    if (cfg.dataset.surprisal_path) (void)load_surprisal(*cfg.dataset.surprisal_path);
    if (cfg.dataset.embedding_path) (void)load_embeddings(*cfg.dataset.embedding_path);
  }
  std::cout << "canonical files written to " << dir.string() << "\n";
  return kExitOk;
}

void print_metrics(const std::filesystem::path& dir) {
  auto path = dir / "metrics.tsv";
  if (std::filesystem::exists(path)) std::cout << text::read_file(path.string());
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Elicit and evaluate psycholinguistic norm predictions from chat-completion models"};
  app.require_subcommand(1);
  std::string config_path, regime, mock, out;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Experiment config (JSON)")->required();
    sub->add_option("--regime", regime, "Override regime: zero_shot | few_shot | fine_tune");
    sub->add_option("--mock", mock, "Offline mock backend: oracle | constant | garbage");
    sub->add_option("--out", out, "Override output directory");
  };
  auto* ingest_cmd = app.add_subcommand("ingest", "Validate the dataset and write canonical files");
  auto* elicit_cmd = app.add_subcommand("elicit", "Query the model for the evaluation split and score it");
  auto* finetune_cmd = app.add_subcommand("finetune", "Fine-tune on the training split");
  auto* baselines_cmd = app.add_subcommand("baselines", "Evaluate regression baselines over repeated splits");
  auto* run_cmd = app.add_subcommand("run", "Full pipeline");
  for (auto* s : {ingest_cmd, elicit_cmd, finetune_cmd, baselines_cmd, run_cmd}) add_common(s);
  auto* report_cmd = app.add_subcommand("report", "Regenerate report tables of a run directory (no network)");
  std::string report_dir;
  report_cmd->add_option("--config", config_path, "Experiment config; its output_dir is used");
  report_cmd->add_option("--out", report_dir, "Run directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (report_cmd->parsed()) {
      if (report_dir.empty()) {
        if (config_path.empty()) throw ConfigError("report: pass --out <run dir> or --config");
        report_dir = ExperimentConfig::load(config_path).output_dir;
      }
      regenerate_report(report_dir);
      print_metrics(report_dir);
      return kExitOk;
    }
    auto cfg = ExperimentConfig::load(config_path);
    if (!regime.empty()) cfg.regime = parse_regime(regime);
    if (!mock.empty()) cfg.backend.mock = parse_mock_personality(mock);
    if (!out.empty()) cfg.output_dir = out;
    if (cfg.regime == Regime::few_shot && cfg.few_shot_k < 1) throw ConfigError("few_shot.k: few_shot regime needs k >= 1");

    if (ingest_cmd->parsed()) return ingest(cfg);
    Experiment exp(cfg);
    if (finetune_cmd->parsed()) {
      auto job = exp.finetune();
      std::cout << "fine-tuned model: " << *job.result_model << "\n";
      return kExitOk;
    }
    if (elicit_cmd->parsed()) (void)exp.elicit();
    if (baselines_cmd->parsed()) (void)exp.baselines();
    if (run_cmd->parsed()) exp.run();
    print_metrics(exp.out_dir());
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const BackendError& e) {
    std::cerr << "backend error: " << e.what() << "\n";
    return kExitBackend;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace psynorm
