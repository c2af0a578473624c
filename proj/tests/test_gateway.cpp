#include <doctest.h>

#include <atomic>
#include <deque>
#include <filesystem>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "psynorm/errors.hpp"
#include "psynorm/llm_gateway.hpp"

using namespace psynorm;
using nlohmann::json;

namespace {

RetryPolicy fast_policy(int retries = 3) {
  RetryPolicy p;
  p.max_retries = retries;
  p.initial_backoff = std::chrono::milliseconds(0);
  return p;
}

std::string chat_body(const std::string& text) {
  return json{{"choices", json::array({{{"message", {{"role", "assistant"}, {"content", text}}}, {"finish_reason", "stop"}}})}}
      .dump();
}

// Replays canned results in order and records every call.
class ScriptedTransport : public HttpTransport {
 public:
  explicit ScriptedTransport(std::deque<HttpResult> script) : script_(std::move(script)) {}
  HttpResult post_json(const std::string& path, const std::string& body) override { return next("POST " + path, body); }
  HttpResult post_file(const std::string& path, const std::string&, const std::string& content,
                       const std::string& purpose) override {
    return next("FILE " + path + " " + purpose, content);
  }
  HttpResult get(const std::string& path) override { return next("GET " + path, ""); }
  std::vector<std::pair<std::string, std::string>> calls;

 private:
  HttpResult next(std::string what, std::string body) {
    calls.emplace_back(std::move(what), std::move(body));
    REQUIRE_FALSE(script_.empty());
    auto r = script_.front();
    script_.pop_front();
    return r;
  }
  std::deque<HttpResult> script_;
};

ChatRequest req(const std::string& content, std::string model = "m") {
  return ChatRequest{std::move(model), {Message{Role::user, content}}, 0.0, 16};
}

std::filesystem::path fresh_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("psynorm_" + name);
  std::filesystem::remove_all(d);
  return d;
}

// Counts calls and peak concurrency; fails requests whose content is "fail".
class CountingBackend : public ChatBackend {
 public:
  std::pair<std::string, FinishReason> chat(const ChatRequest& r, int& retries) override {
    retries = 0;
    const int now = ++in_flight_;
    int seen = peak_.load();
    while (now > seen && !peak_.compare_exchange_weak(seen, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
    --in_flight_;
    ++calls_;
    if (r.messages.back().content == "fail") throw BackendError("permanent failure", 400);
    return {"echo:" + r.messages.back().content, FinishReason::stop};
  }
  int peak() const { return peak_; }
  int calls() const { return calls_; }

 private:
  std::atomic<int> in_flight_{0}, peak_{0}, calls_{0};
};

}  // namespace

TEST_CASE("request hash covers exactly the request content") {
  const auto a = req("hello");
  CHECK(request_hash(a) == request_hash(req("hello")));
  CHECK(request_hash(a).size() == 64);
  CHECK(request_hash(a) != request_hash(req("hellO")));
  CHECK(request_hash(a) != request_hash(req("hello", "other")));
  auto b = a;
  b.max_output_tokens = 17;
  CHECK(request_hash(a) != request_hash(b));
  auto c = a;
  c.messages.insert(c.messages.begin(), Message{Role::system, ""});
  CHECK(request_hash(a) != request_hash(c));
  CHECK(default_max_output_tokens(PromptKind::word_mem) == 16);
  CHECK(default_max_output_tokens(PromptKind::rt, 12) == 96);
}

TEST_CASE("retry contract") {
  CHECK(is_transient(429));
  CHECK(is_transient(503));
  CHECK(is_transient(0));
  CHECK_FALSE(is_transient(400));

  auto t = std::make_unique<ScriptedTransport>(std::deque<HttpResult>{{429, "slow down", ""}, {200, chat_body("0.42"), ""}});
  auto* raw = t.get();
  HttpChatBackend backend(std::move(t), fast_policy());
  auto resp = complete(req("x"), backend, nullptr);
  CHECK(resp.text == "0.42");
  CHECK(resp.retries == 1);
  REQUIRE(raw->calls.size() == 2);
  CHECK(raw->calls[0].first == "POST /chat/completions");
  auto sent = json::parse(raw->calls[0].second);
  CHECK(sent["temperature"] == 0.0);
  CHECK(sent["max_tokens"] == 16);

  HttpChatBackend auth(std::make_unique<ScriptedTransport>(std::deque<HttpResult>{{401, "bad key", ""}}), fast_policy());
  try {
    complete(req("x"), auth, nullptr);
    FAIL("expected BackendError");
  } catch (const BackendError& e) {
    CHECK(e.http_status() == 401);
  }
  HttpChatBackend hard(std::make_unique<ScriptedTransport>(std::deque<HttpResult>{{400, "bad", ""}}), fast_policy());
  CHECK_THROWS_AS(complete(req("x"), hard, nullptr), BackendError);
  HttpChatBackend busy(std::make_unique<ScriptedTransport>(
                           std::deque<HttpResult>{{503, "", ""}, {503, "", ""}, {503, "", ""}}),
                       fast_policy(2));
  CHECK_THROWS_AS(complete(req("x"), busy, nullptr), BackendError);
}

TEST_CASE("cache serves identical requests") {
  ResponseCache cache(fresh_dir("cache"));
  CountingBackend backend;
  auto first = complete(req("same"), backend, &cache);
  auto second = complete(req("same"), backend, &cache);
  CHECK_FALSE(first.from_cache);
  CHECK(second.from_cache);
  CHECK(second.text == first.text);
  CHECK(backend.calls() == 1);
  const auto path = cache.path_for(first.request_hash);
  CHECK(std::filesystem::exists(path));
  CHECK(path.parent_path().filename() == first.request_hash.substr(0, 2));
  std::filesystem::remove_all(cache.dir());
}

TEST_CASE("batches keep order, bound concurrency and isolate failures") {
  ResponseCache cache(fresh_dir("batch"));
  CountingBackend backend;
  std::vector<ChatRequest> reqs;
  for (int i = 0; i < 100; ++i) reqs.push_back(req(i == 5 ? "fail" : "r" + std::to_string(i)));
  auto out = complete_batch(reqs, backend, &cache, 8);
  REQUIRE(out.size() == 100);
  CHECK(backend.peak() <= 8);
  CHECK(backend.peak() > 1);
  for (int i = 0; i < 100; ++i) {
    CHECK(out[i].request_hash == request_hash(reqs[i]));
    if (i == 5) {
      CHECK_FALSE(out[i].ok());
      CHECK(out[i].error.find("permanent") != std::string::npos);
    } else {
      REQUIRE(out[i].ok());
      CHECK(out[i].response->text == "echo:r" + std::to_string(i));
    }
  }
  reqs.erase(reqs.begin() + 5);
  const int before = backend.calls();
  auto again = complete_batch(reqs, backend, &cache, 8);
  CHECK(backend.calls() == before);
  for (const auto& r : again) CHECK(r.response->from_cache);
  std::filesystem::remove_all(cache.dir());
}

TEST_CASE("mock personalities") {
  const std::string prompt = "... The word is dog";
  MockBackend oracle(MockPersonality::oracle, {{prompt, "0.77"}});
  int retries = 0;
  CHECK(oracle.chat(req(prompt), retries).first == "0.77");
  MockBackend constant(MockPersonality::constant);
  CHECK(constant.chat(req(prompt), retries).first == "0.50");
  CHECK(constant.chat(req("... in milliseconds ... The sentence is: I like cats"), retries).first == "{'I':200, 'like': 200, 'cats': 200}");
  MockBackend garbage(MockPersonality::garbage, {{prompt, "0.77"}});
  const auto g = garbage.chat(req(prompt), retries).first;
  CHECK(g.find_first_of("0123456789{") == std::string::npos);
  CHECK(garbage.chat(req(prompt, std::string(kMockTunedPrefix) + "base:1"), retries).first == "0.77");
  CHECK(garbage.call_count() == 2);
  CHECK(garbage.request_log()[1].model.starts_with("ft:mock:"));
  CHECK_THROWS_AS(parse_mock_personality("chatty"), ConfigError);
}

TEST_CASE("fine-tuning with the mock backend") {
  MockFineTuneBackend backend;
  const std::string training = "{\"messages\":[{\"role\":\"user\",\"content\":\"q\"},{\"role\":\"assistant\",\"content\":\"0.50\"}]}\n";
  auto job = run_finetune(training, "base", FineTuneHyperparams{}, backend, std::chrono::milliseconds(0));
  CHECK(job.status == JobStatus::succeeded);
  REQUIRE(job.result_model);
  CHECK(job.result_model->starts_with(kMockTunedPrefix));
  REQUIRE(backend.created_with().size() == 1);
  CHECK(backend.created_with()[0] == FineTuneHyperparams{3, 1, 1.8});
  // A bad training file is the caller's data problem, not a backend failure.
  CHECK_THROWS_AS(run_finetune("", "base", {}, backend, std::chrono::milliseconds(0)), DataError);
  CHECK_THROWS_AS(run_finetune("not json\n", "base", {}, backend, std::chrono::milliseconds(0)), DataError);
}

TEST_CASE("fine-tuning over HTTP: upload, create, poll, failure surfaced") {
  ScriptedTransport t({{200, R"({"id":"file-1"})", ""},
                       {200, R"({"id":"job-1","status":"queued"})", ""},
                       {200, R"({"id":"job-1","status":"running"})", ""},
                       {200, R"({"id":"job-1","status":"failed","error":{"message":"bad data"}})", ""}});
  HttpFineTuneBackend backend(t, fast_policy());
  const std::string training = "{\"messages\":[{\"role\":\"user\",\"content\":\"q\"},{\"role\":\"assistant\",\"content\":\"0.50\"}]}\n";
  auto job = run_finetune(training, "gpt-x", {}, backend, std::chrono::milliseconds(0));
  CHECK(job.status == JobStatus::failed);
  CHECK_FALSE(job.result_model);
  CHECK(job.message == "bad data");
  REQUIRE(t.calls.size() == 4);
  CHECK(t.calls[0].first == "FILE /files fine-tune");
  CHECK(t.calls[1].first == "POST /fine_tuning/jobs");
  auto body = json::parse(t.calls[1].second);
  CHECK(body["training_file"] == "file-1");
  CHECK(body["hyperparameters"]["n_epochs"] == 3);
  CHECK(body["hyperparameters"]["batch_size"] == 1);
  CHECK(body["hyperparameters"]["learning_rate_multiplier"] == 1.8);
  CHECK(t.calls[2].first == "GET /fine_tuning/jobs/job-1");

  ScriptedTransport ok({{200, R"({"id":"file-2"})", ""},
                        {200, R"({"id":"job-2","status":"succeeded","fine_tuned_model":"ft:gpt-x:abc"})", ""}});
  HttpFineTuneBackend okb(ok, fast_policy());
  auto done = run_finetune(training, "gpt-x", {}, okb, std::chrono::milliseconds(0));
  CHECK(done.status == JobStatus::succeeded);
  CHECK(*done.result_model == "ft:gpt-x:abc");
}

TEST_CASE("HTTP transport against a local server") {
  httplib::Server server;
  std::atomic<int> hits{0};
  std::string seen_auth, seen_body;
  server.Post("/v1/chat/completions", [&](const httplib::Request& r, httplib::Response& res) {
    if (hits++ == 0) {
      res.status = 503;
      return;
    }
    seen_auth = r.get_header_value("Authorization");
    seen_body = r.body;
    res.set_content(chat_body("{'a': 90}"), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  HttpChatBackend backend(make_http_transport("http://127.0.0.1:" + std::to_string(port) + "/v1", "secret"),
                          fast_policy());
  auto resp = complete(req("hello"), backend, nullptr);
  server.stop();
  th.join();
  CHECK(resp.text == "{'a': 90}");
  CHECK(resp.retries == 1);
  CHECK(seen_auth == "Bearer secret");
  CHECK(json::parse(seen_body)["messages"][0]["content"] == "hello");
}
