#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "psynorm/prompting.hpp"

namespace psynorm {

struct ChatRequest {
  std::string model;
  std::vector<Message> messages;
  double temperature = 0.0;
  int max_output_tokens = 16;
};

/// Content hash over (model, messages, temperature, max_output_tokens) only.
std::string request_hash(const ChatRequest& req);

/// 16 for scalar answers, 8 tokens per word for duration maps.
int default_max_output_tokens(PromptKind kind, std::size_t sentence_words = 0);

enum class FinishReason { stop, length, content_filter, other };
std::string_view to_string(FinishReason f);
FinishReason parse_finish_reason(std::string_view s);

struct ChatResponse {
  std::string request_hash;
  std::string text;
  FinishReason finish_reason = FinishReason::stop;
  double latency_ms = 0.0;
  bool from_cache = false;
  int retries = 0;
};

/// Raw outcome of a single HTTP exchange.
struct HttpResult {
  int status = 0;  // 0 == transport failure (connection refused, timeout)
  std::string body;
  std::string error;
};

/// Minimal HTTP surface the gateway needs; swapped out in tests.
class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResult post_json(const std::string& path, const std::string& body) = 0;
  virtual HttpResult post_file(const std::string& path, const std::string& filename,
                               const std::string& content, const std::string& purpose) = 0;
  virtual HttpResult get(const std::string& path) = 0;
};

/// cpp-httplib client. `base_url` like "https://api.openai.com/v1"; the
/// bearer token is sent when non-empty.
std::unique_ptr<HttpTransport> make_http_transport(const std::string& base_url, std::string bearer_token,
                                                   std::chrono::seconds timeout = std::chrono::seconds(120));

struct RetryPolicy {
  int max_retries = 5;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{30000};
};

/// 408, 409, 429, 5xx and transport failures are retried.
bool is_transient(int http_status);

/// A source of completions. Implementations must be safe to call from
/// several threads at once.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  /// `retries` receives the number of retried attempts.
  virtual std::pair<std::string, FinishReason> chat(const ChatRequest& req, int& retries) = 0;
};

/// OpenAI-compatible /chat/completions client with retry and backoff.
class HttpChatBackend : public ChatBackend {
 public:
  HttpChatBackend(std::unique_ptr<HttpTransport> transport, RetryPolicy policy = {});
  std::pair<std::string, FinishReason> chat(const ChatRequest& req, int& retries) override;

  HttpTransport& transport() { return *transport_; }
  const RetryPolicy& policy() const { return policy_; }

 private:
  std::unique_ptr<HttpTransport> transport_;
  RetryPolicy policy_;
};

/// Sends `fn` through the retry loop; throws BackendError on auth failure,
/// non-transient status, or an exhausted budget.
HttpResult with_retries(const std::function<HttpResult()>& fn, const RetryPolicy& policy, int& retries);

enum class MockPersonality { oracle, constant, garbage };
std::string_view to_string(MockPersonality p);
MockPersonality parse_mock_personality(std::string_view s);

inline constexpr std::string_view kMockTunedPrefix = "ft:mock:";

/// Offline backend whose reply is a pure function of the final user message.
///  - oracle: looks the message up in a fixture of item prompts -> formatted
///    ground-truth targets; unknown prompts get the garbage reply.
///  - constant: "0.50" for scalar prompts, every word at 200 ms for RT prompts.
///  - garbage: a refusal with no numbers or braces.
/// Models starting with kMockTunedPrefix are always answered as oracle.
/// Every request is logged for inspection.
class MockBackend : public ChatBackend {
 public:
  explicit MockBackend(MockPersonality personality, std::map<std::string, std::string> oracle = {});

  /// Fixture entries for every item of `d`: rendered zero-shot prompt -> target.
  static std::map<std::string, std::string> oracle_fixture(const Dataset& d);

  std::pair<std::string, FinishReason> chat(const ChatRequest& req, int& retries) override;

  std::vector<ChatRequest> request_log() const;
  std::size_t call_count() const;

 private:
  std::string reply(MockPersonality p, const std::string& prompt) const;

  MockPersonality personality_;
  std::map<std::string, std::string> oracle_;
  mutable std::mutex log_mutex_;
  std::vector<ChatRequest> log_;
};

/// Content-addressed response store: <dir>/<hash[0:2]>/<hash>.json holding the
/// request and the response. Readers need no lock; writes are serialized and
/// land through rename so readers never see a partial file.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);

  std::optional<ChatResponse> get(const std::string& hash) const;
  void put(const ChatRequest& req, const ChatResponse& resp);
  std::filesystem::path path_for(const std::string& hash) const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::mutex write_mutex_;
};

/// Serves from the cache when possible, otherwise calls the backend and
/// stores the response. A null cache disables caching.
ChatResponse complete(const ChatRequest& req, ChatBackend& backend, ResponseCache* cache);

struct BatchResult {
  std::string request_hash;
  std::optional<ChatResponse> response;
  std::string error;  // set iff response is empty
  bool ok() const { return response.has_value(); }
};

/// Results in request order; at most `max_in_flight` backend calls at a time.
/// A failing request yields an error record instead of aborting the batch.
std::vector<BatchResult> complete_batch(const std::vector<ChatRequest>& reqs, ChatBackend& backend,
                                        ResponseCache* cache, std::size_t max_in_flight);

struct FineTuneHyperparams {
  int epochs = 3;
  int batch_size = 1;
  double learning_rate_multiplier = 1.8;
  bool operator==(const FineTuneHyperparams&) const = default;
};

enum class JobStatus { queued, running, succeeded, failed };
std::string_view to_string(JobStatus s);

struct FineTuneJob {
  std::string job_id;
  std::string base_model;
  std::string training_file_ref;
  FineTuneHyperparams hyperparams;
  JobStatus status = JobStatus::queued;
  std::optional<std::string> result_model;  // present iff succeeded
  std::string message;  // provider error text on failure
};

class FineTuneBackend {
 public:
  virtual ~FineTuneBackend() = default;
  virtual std::string upload(const std::string& training) = 0;
  virtual FineTuneJob create_job(const std::string& file_ref, const std::string& base_model,
                                 const FineTuneHyperparams& hp) = 0;
  virtual FineTuneJob poll(const FineTuneJob& job) = 0;
};

/// /files + /fine_tuning/jobs of the OpenAI-compatible scheme.
class HttpFineTuneBackend : public FineTuneBackend {
 public:
  explicit HttpFineTuneBackend(HttpTransport& transport, RetryPolicy policy = {});
  std::string upload(const std::string& training) override;
  FineTuneJob create_job(const std::string& file_ref, const std::string& base_model,
                         const FineTuneHyperparams& hp) override;
  FineTuneJob poll(const FineTuneJob& job) override;

 private:
  HttpTransport& transport_;
  RetryPolicy policy_;
};

/// Succeeds immediately with a kMockTunedPrefix model id.
class MockFineTuneBackend : public FineTuneBackend {
 public:
  std::string upload(const std::string& training) override;
  FineTuneJob create_job(const std::string& file_ref, const std::string& base_model,
                         const FineTuneHyperparams& hp) override;
  FineTuneJob poll(const FineTuneJob& job) override;

  std::vector<FineTuneHyperparams> created_with() const { return created_; }

 private:
  std::map<std::string, std::string> files_;
  std::vector<FineTuneHyperparams> created_;
};

/// Upload, create, poll until terminal. A failed job is returned (not thrown)
/// with status failed; upload rejection and polling timeout throw BackendError.
FineTuneJob run_finetune(const std::string& training, const std::string& base_model,
                         const FineTuneHyperparams& hp, FineTuneBackend& backend,
                         std::chrono::milliseconds poll_interval,
                         std::chrono::milliseconds timeout = std::chrono::hours(24));

/// One token of an echoed prompt with its log-probability (natural log).
struct TokenLogprob {
  std::string token;
  std::optional<double> logprob;  // absent for the first token
};

/// Echo `text` through /completions (max_tokens 0, logprobs) and return the
/// per-token log-probabilities. Requires an endpoint that supports echo.
std::vector<TokenLogprob> fetch_prompt_logprobs(HttpTransport& transport, const std::string& model,
                                                const std::string& text, const RetryPolicy& policy = {});

}  // namespace psynorm
