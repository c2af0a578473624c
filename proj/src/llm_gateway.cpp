#include "psynorm/llm_gateway.hpp"

#include <httplib.h>

#include <algorithm>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "psynorm/errors.hpp"
#include "psynorm/hashing.hpp"
#include "psynorm/text.hpp"

namespace psynorm {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

ordered_json messages_json(const std::vector<Message>& msgs) {
  ordered_json arr = ordered_json::array();
  for (const auto& m : msgs) {
    ordered_json o;
    o["role"] = to_string(m.role);
    o["content"] = m.content;
    arr.push_back(std::move(o));
  }
  return arr;
}

ordered_json request_json(const ChatRequest& req) {
  ordered_json j;
  j["model"] = req.model;
  j["messages"] = messages_json(req.messages);
  j["temperature"] = req.temperature;
  j["max_output_tokens"] = req.max_output_tokens;
  return j;
}

std::string excerpt(const std::string& body) { return body.size() > 300 ? body.substr(0, 300) + "..." : body; }

json parse_body(const HttpResult& r, std::string_view what) {
  try {
    return json::parse(r.body);
  } catch (const json::exception&) {
    throw BackendError(std::string(what) + ": response is not JSON: " + excerpt(r.body), r.status);
  }
}

}  // namespace

std::string request_hash(const ChatRequest& req) { return sha256_hex(request_json(req).dump()); }

int default_max_output_tokens(PromptKind kind, std::size_t sentence_words) {
  if (kind != PromptKind::rt) return 16;
  return static_cast<int>(std::max<std::size_t>(8, 8 * sentence_words));
}

std::string_view to_string(FinishReason f) {
  switch (f) {
    case FinishReason::stop: return "stop";
    case FinishReason::length: return "length";
    case FinishReason::content_filter: return "content_filter";
    case FinishReason::other: return "other";
  }
  return "other";
}

FinishReason parse_finish_reason(std::string_view s) {
  if (s == "stop") return FinishReason::stop;
  if (s == "length") return FinishReason::length;
  if (s == "content_filter") return FinishReason::content_filter;
  return FinishReason::other;
}

// ---------------------------------------------------------------------------
// HTTP transport

namespace {

class HttplibTransport : public HttpTransport {
 public:
  HttplibTransport(const std::string& base_url, std::string token, std::chrono::seconds timeout)
      : token_(std::move(token)) {
    auto scheme_end = base_url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("backend.base_url must start with http:// or https://");
    auto path_start = base_url.find('/', scheme_end + 3);
    origin_ = base_url.substr(0, path_start);
    prefix_ = path_start == std::string::npos ? "" : base_url.substr(path_start);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
    client_ = std::make_unique<httplib::Client>(origin_);
    client_->set_connection_timeout(std::chrono::seconds(30));
    client_->set_read_timeout(timeout);
    client_->set_write_timeout(timeout);
  }

  HttpResult post_json(const std::string& path, const std::string& body) override {
    std::lock_guard lock(mutex_);
    return convert(client_->Post(prefix_ + path, headers(), body, "application/json"));
  }

  HttpResult post_file(const std::string& path, const std::string& filename, const std::string& content,
                       const std::string& purpose) override {
    std::lock_guard lock(mutex_);
    httplib::MultipartFormDataItems items = {
        {"purpose", purpose, "", ""},
        {"file", content, filename, "application/jsonl"},
    };
    return convert(client_->Post(prefix_ + path, headers(), items));
  }

  HttpResult get(const std::string& path) override {
    std::lock_guard lock(mutex_);
    return convert(client_->Get(prefix_ + path, headers()));
  }

 private:
  httplib::Headers headers() const {
    httplib::Headers h;
    if (!token_.empty()) h.emplace("Authorization", "Bearer " + token_);
    return h;
  }

  static HttpResult convert(const httplib::Result& res) {
    HttpResult out;
    if (!res) {
      out.error = httplib::to_string(res.error());
      return out;
    }
    out.status = res->status;
    out.body = res->body;
    return out;
  }

  // httplib::Client is not safe for concurrent requests; one connection at a time.
  std::mutex mutex_;
  std::string token_, origin_, prefix_;
  std::unique_ptr<httplib::Client> client_;
};

// One client per calling thread so batched requests really run concurrently.
class PooledTransport : public HttpTransport {
 public:
  PooledTransport(std::string base_url, std::string token, std::chrono::seconds timeout)
      : base_url_(std::move(base_url)), token_(std::move(token)), timeout_(timeout) {
    HttplibTransport probe(base_url_, token_, timeout_);  // validates the URL eagerly
  }

  HttpResult post_json(const std::string& path, const std::string& body) override {
    return local().post_json(path, body);
  }
  HttpResult post_file(const std::string& path, const std::string& filename, const std::string& content,
                       const std::string& purpose) override {
    return local().post_file(path, filename, content, purpose);
  }
  HttpResult get(const std::string& path) override { return local().get(path); }

 private:
  HttplibTransport& local() {
    std::lock_guard lock(mutex_);
    auto& slot = clients_[std::this_thread::get_id()];
    if (!slot) slot = std::make_unique<HttplibTransport>(base_url_, token_, timeout_);
    return *slot;
  }

  std::string base_url_, token_;
  std::chrono::seconds timeout_;
  std::mutex mutex_;
  std::map<std::thread::id, std::unique_ptr<HttplibTransport>> clients_;
};

}  // namespace

std::unique_ptr<HttpTransport> make_http_transport(const std::string& base_url, std::string bearer_token,
                                                   std::chrono::seconds timeout) {
  return std::make_unique<PooledTransport>(base_url, std::move(bearer_token), timeout);
}

bool is_transient(int http_status) {
  return http_status == 0 || http_status == 408 || http_status == 409 || http_status == 429 || http_status >= 500;
}

HttpResult with_retries(const std::function<HttpResult()>& fn, const RetryPolicy& policy, int& retries) {
  retries = 0;
  auto backoff = policy.initial_backoff;
  while (true) {
    HttpResult r = fn();
    if (r.status >= 200 && r.status < 300) return r;
    if (r.status == 401 || r.status == 403) {
      throw BackendError("authentication failed (HTTP " + std::to_string(r.status) + "): " + excerpt(r.body), r.status);
    }
    const std::string detail =
        r.status == 0 ? "transport error: " + r.error : "HTTP " + std::to_string(r.status) + ": " + excerpt(r.body);
    if (!is_transient(r.status)) throw BackendError("endpoint error, " + detail, r.status);
    if (retries >= policy.max_retries) {
      throw BackendError("retry budget exhausted after " + std::to_string(retries) + " retries, last " + detail,
                         r.status);
    }
    ++retries;
    std::this_thread::sleep_for(backoff);
    backoff = std::min(policy.max_backoff,
                       std::chrono::milliseconds(static_cast<long long>(static_cast<double>(backoff.count()) * policy.multiplier)));
  }
}

HttpChatBackend::HttpChatBackend(std::unique_ptr<HttpTransport> transport, RetryPolicy policy)
    : transport_(std::move(transport)), policy_(policy) {}

std::pair<std::string, FinishReason> HttpChatBackend::chat(const ChatRequest& req, int& retries) {
  ordered_json body;
  body["model"] = req.model;
  body["messages"] = messages_json(req.messages);
  body["temperature"] = req.temperature;
  body["max_tokens"] = req.max_output_tokens;
  const auto payload = body.dump();
  auto r = with_retries([&] { return transport_->post_json("/chat/completions", payload); }, policy_, retries);
  auto j = parse_body(r, "chat completion");
  try {
    const auto& choice = j.at("choices").at(0);
    const auto& content = choice.at("message").at("content");
    std::string text = content.is_null() ? "" : content.get<std::string>();
    auto reason = choice.contains("finish_reason") && choice["finish_reason"].is_string()
                      ? parse_finish_reason(choice["finish_reason"].get<std::string>())
                      : FinishReason::other;
    return {std::move(text), reason};
  } catch (const json::exception&) {
    throw BackendError("chat completion: unexpected response shape: " + excerpt(r.body), r.status);
  }
}

// ---------------------------------------------------------------------------
// Mock backend

std::string_view to_string(MockPersonality p) {
  switch (p) {
    case MockPersonality::oracle: return "oracle";
    case MockPersonality::constant: return "constant";
    case MockPersonality::garbage: return "garbage";
  }
  return "?";
}

MockPersonality parse_mock_personality(std::string_view s) {
  if (s == "oracle") return MockPersonality::oracle;
  if (s == "constant") return MockPersonality::constant;
  if (s == "garbage") return MockPersonality::garbage;
  throw ConfigError("unknown mock personality '" + std::string(s) + "' (expected oracle, constant, garbage)");
}

MockBackend::MockBackend(MockPersonality personality, std::map<std::string, std::string> oracle)
    : personality_(personality), oracle_(std::move(oracle)) {}

std::map<std::string, std::string> MockBackend::oracle_fixture(const Dataset& d) {
  std::map<std::string, std::string> out;
  const auto kind = prompt_kind_for(d.kind);
  for (const auto& item : items_of(d)) out[render_zero_shot(kind, item).messages.back().content] = format_target(item);
  return out;
}

std::string MockBackend::reply(MockPersonality p, const std::string& prompt) const {
  static constexpr std::string_view kGarbage = "I'm sorry, but I can't provide estimates like that for this request.";
  switch (p) {
    case MockPersonality::oracle: {
      auto it = oracle_.find(prompt);
      return it == oracle_.end() ? std::string(kGarbage) : it->second;
    }
    case MockPersonality::constant: {
      static constexpr std::string_view kRtMarker = "The sentence is: ";
      auto pos = prompt.rfind(kRtMarker);
      if (pos == std::string::npos || prompt.find("milliseconds") == std::string::npos) return "0.50";
      std::vector<std::pair<std::string, double>> pairs;
      for (const auto& w : text::split(prompt.substr(pos + kRtMarker.size()), ' ')) {
        if (!w.empty()) pairs.emplace_back(w, 200.0);
      }
      return format_duration_map(pairs);
    }
    case MockPersonality::garbage: return std::string(kGarbage);
  }
  return std::string(kGarbage);
}

std::pair<std::string, FinishReason> MockBackend::chat(const ChatRequest& req, int& retries) {
  retries = 0;
  {
    std::lock_guard lock(log_mutex_);
    log_.push_back(req);
  }
  const std::string prompt = req.messages.empty() ? "" : req.messages.back().content;
  const auto p = std::string_view(req.model).starts_with(kMockTunedPrefix) ? MockPersonality::oracle : personality_;
  return {reply(p, prompt), FinishReason::stop};
}

std::vector<ChatRequest> MockBackend::request_log() const {
  std::lock_guard lock(log_mutex_);
  return log_;
}

std::size_t MockBackend::call_count() const {
  std::lock_guard lock(log_mutex_);
  return log_.size();
}

// ---------------------------------------------------------------------------
// Cache

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

std::filesystem::path ResponseCache::path_for(const std::string& hash) const {
  return dir_ / hash.substr(0, 2) / (hash + ".json");
}

std::optional<ChatResponse> ResponseCache::get(const std::string& hash) const {
  const auto path = path_for(hash);
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  try {
    auto j = json::parse(in);
    const auto& r = j.at("response");
    ChatResponse out;
    out.request_hash = hash;
    out.text = r.at("text").get<std::string>();
    out.finish_reason = parse_finish_reason(r.at("finish_reason").get<std::string>());
    out.latency_ms = r.value("latency_ms", 0.0);
    out.retries = r.value("retries", 0);
    out.from_cache = true;
    return out;
  } catch (const json::exception&) {
    return std::nullopt;  // unreadable entry: treat as a miss, it will be rewritten
  }
}

void ResponseCache::put(const ChatRequest& req, const ChatResponse& resp) {
  ordered_json j;
  j["request_hash"] = resp.request_hash;
  j["request"] = request_json(req);
  ordered_json r;
  r["text"] = resp.text;
  r["finish_reason"] = to_string(resp.finish_reason);
  r["latency_ms"] = resp.latency_ms;
  r["retries"] = resp.retries;
  j["response"] = std::move(r);
  const auto path = path_for(resp.request_hash);

  std::lock_guard lock(write_mutex_);
  std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  text::write_file(tmp.string(), j.dump(2) + "\n");
  std::filesystem::rename(tmp, path);
}

ChatResponse complete(const ChatRequest& req, ChatBackend& backend, ResponseCache* cache) {
  const auto hash = request_hash(req);
  if (cache) {
    if (auto hit = cache->get(hash)) return *hit;
  }
  const auto start = std::chrono::steady_clock::now();
  int retries = 0;
  auto [text, reason] = backend.chat(req, retries);
  ChatResponse resp;
  resp.request_hash = hash;
  resp.text = std::move(text);
  resp.finish_reason = reason;
  resp.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  resp.retries = retries;
  if (cache) cache->put(req, resp);
  return resp;
}

std::vector<BatchResult> complete_batch(const std::vector<ChatRequest>& reqs, ChatBackend& backend,
                                        ResponseCache* cache, std::size_t max_in_flight) {
  if (max_in_flight < 1) throw std::invalid_argument("complete_batch: max_in_flight must be >= 1");
  std::vector<BatchResult> results(reqs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < reqs.size(); i = next++) {
      auto& out = results[i];
      out.request_hash = request_hash(reqs[i]);
      try {
        out.response = complete(reqs[i], backend, cache);
      } catch (const std::exception& e) {
        out.error = e.what();
      }
    }
  };
  const auto n_workers = std::min(max_in_flight, reqs.size());
  std::vector<std::thread> pool;
  pool.reserve(n_workers);
  for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return results;
}

// ---------------------------------------------------------------------------
// Fine-tuning

std::string_view to_string(JobStatus s) {
  switch (s) {
    case JobStatus::queued: return "queued";
    case JobStatus::running: return "running";
    case JobStatus::succeeded: return "succeeded";
    case JobStatus::failed: return "failed";
  }
  return "?";
}

namespace {

JobStatus provider_status(const std::string& s) {
  if (s == "succeeded") return JobStatus::succeeded;
  if (s == "failed" || s == "cancelled") return JobStatus::failed;
  if (s == "running") return JobStatus::running;
  return JobStatus::queued;  // validating_files, queued, pending
}

FineTuneJob job_from_json(const json& j, FineTuneJob base) {
  base.job_id = j.at("id").get<std::string>();
  base.status = provider_status(j.value("status", "queued"));
  if (base.status == JobStatus::succeeded) {
    if (!j.contains("fine_tuned_model") || !j["fine_tuned_model"].is_string()) {
      base.status = JobStatus::failed;
      base.message = "provider reported success without a fine_tuned_model";
    } else {
      base.result_model = j["fine_tuned_model"].get<std::string>();
    }
  }
  if (base.status == JobStatus::failed && j.contains("error") && j["error"].is_object()) {
    base.message = j["error"].value("message", base.message);
  }
  return base;
}

}  // namespace

HttpFineTuneBackend::HttpFineTuneBackend(HttpTransport& transport, RetryPolicy policy)
    : transport_(transport), policy_(policy) {}

std::string HttpFineTuneBackend::upload(const std::string& training) {
  int retries = 0;
  HttpResult r;
  try {
    r = with_retries([&] { return transport_.post_file("/files", "training.jsonl", training, "fine-tune"); }, policy_,
                     retries);
  } catch (const BackendError& e) {
    throw BackendError(std::string("training file upload rejected: ") + e.what(), e.http_status());
  }
  auto j = parse_body(r, "file upload");
  if (!j.contains("id") || !j["id"].is_string()) throw BackendError("file upload: response has no id", r.status);
  return j["id"].get<std::string>();
}

FineTuneJob HttpFineTuneBackend::create_job(const std::string& file_ref, const std::string& base_model,
                                            const FineTuneHyperparams& hp) {
  ordered_json body;
  body["training_file"] = file_ref;
  body["model"] = base_model;
  body["hyperparameters"] = {{"n_epochs", hp.epochs},
                             {"batch_size", hp.batch_size},
                             {"learning_rate_multiplier", hp.learning_rate_multiplier}};
  int retries = 0;
  auto r = with_retries([&] { return transport_.post_json("/fine_tuning/jobs", body.dump()); }, policy_, retries);
  FineTuneJob job;
  job.base_model = base_model;
  job.training_file_ref = file_ref;
  job.hyperparams = hp;
  return job_from_json(parse_body(r, "fine-tuning job"), job);
}

FineTuneJob HttpFineTuneBackend::poll(const FineTuneJob& job) {
  int retries = 0;
  auto r = with_retries([&] { return transport_.get("/fine_tuning/jobs/" + job.job_id); }, policy_, retries);
  return job_from_json(parse_body(r, "fine-tuning job"), job);
}

std::string MockFineTuneBackend::upload(const std::string& training) {
  auto id = "file-mock-" + sha256_hex(training).substr(0, 12);
  files_[id] = training;
  return id;
}

FineTuneJob MockFineTuneBackend::create_job(const std::string& file_ref, const std::string& base_model,
                                            const FineTuneHyperparams& hp) {
  auto it = files_.find(file_ref);
  if (it == files_.end()) throw BackendError("mock: unknown training file '" + file_ref + "'", 404);
  created_.push_back(hp);
  FineTuneJob job;
  job.job_id = "ftjob-mock-" + std::to_string(created_.size());
  job.base_model = base_model;
  job.training_file_ref = file_ref;
  job.hyperparams = hp;
  job.status = JobStatus::succeeded;
  job.result_model = std::string(kMockTunedPrefix) + base_model + ":" + sha256_hex(it->second).substr(0, 8);
  return job;
}

FineTuneJob MockFineTuneBackend::poll(const FineTuneJob& job) { return job; }

FineTuneJob run_finetune(const std::string& training, const std::string& base_model, const FineTuneHyperparams& hp,
                         FineTuneBackend& backend, std::chrono::milliseconds poll_interval,
                         std::chrono::milliseconds timeout) {
  if (training.empty()) throw DataError("fine-tuning file is empty");
  try {
    (void)parse_finetune_file(training);
  } catch (const std::exception& e) {
    throw DataError(std::string("fine-tuning file is not valid JSON Lines: ") + e.what());
  }
  const auto file_ref = backend.upload(training);
  auto job = backend.create_job(file_ref, base_model, hp);
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (job.status == JobStatus::queued || job.status == JobStatus::running) {
    if (std::chrono::steady_clock::now() >= deadline) {
      throw BackendError("fine-tuning job " + job.job_id + " did not finish before the polling timeout");
    }
    std::this_thread::sleep_for(poll_interval);
    job = backend.poll(job);
  }
  if (job.status != JobStatus::succeeded) job.result_model.reset();
  return job;
}

std::vector<TokenLogprob> fetch_prompt_logprobs(HttpTransport& transport, const std::string& model,
                                                const std::string& text, const RetryPolicy& policy) {
  ordered_json body;
  body["model"] = model;
  body["prompt"] = text;
  body["max_tokens"] = 0;
  body["echo"] = true;
  body["logprobs"] = 0;
  body["temperature"] = 0.0;
  int retries = 0;
  auto r = with_retries([&] { return transport.post_json("/completions", body.dump()); }, policy, retries);
  auto j = parse_body(r, "completion logprobs");
  std::vector<TokenLogprob> out;
  try {
    const auto& lp = j.at("choices").at(0).at("logprobs");
    const auto& tokens = lp.at("tokens");
    const auto& values = lp.at("token_logprobs");
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      TokenLogprob t;
      t.token = tokens[i].get<std::string>();
      if (i < values.size() && values[i].is_number()) t.logprob = values[i].get<double>();
      out.push_back(std::move(t));
    }
  } catch (const json::exception&) {
    throw BackendError("completion logprobs: unexpected response shape: " + excerpt(r.body), r.status);
  }
  return out;
}

}  // namespace psynorm
