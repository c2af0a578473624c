#include "psynorm/prompting.hpp"

#include <cmath>
#include <iostream>
#include <regex>
#include <unordered_set>

#include <json.hpp>

#include "psynorm/errors.hpp"
#include "psynorm/hashing.hpp"
#include "psynorm/response_parse.hpp"
#include "psynorm/rng.hpp"
#include "psynorm/text.hpp"

namespace psynorm {

namespace {

constexpr std::string_view kWordTemplate =
    "You are an expert in psycholinguistics. Your task is to estimate the memorability of English words. You will "
    "give each word a rating from 0 to 1 with two decimal digits. A rating of 1 indicates that the word is maximally "
    "memorable, meaning that people who see the word always remember having seen it later, and never confuse it with "
    "a different word (even a similar one). A rating of 0 indicates that the word is not memorable, meaning that "
    "people who see it forget it or may confuse it with another word. Please limit your answer to a number with two "
    "decimal digits. The word is {word}";

constexpr std::string_view kSentenceTemplate =
    "You are an expert in psycholinguistics. Your task is to estimate the memorability of English sentences. You will "
    "give each sentence a rating from 0 to 1 with two decimal digits. A rating of 1 indicates that the sentence is "
    "maximally memorable, meaning that people who see the sentence always remember having seen it later, and never "
    "confuse it with a different sentence (even a similar one). A rating of 0 indicates that the sentence is not "
    "memorable, meaning that people who see it forget it or may confuse it with another sentence. Please limit your "
    "answer to a number with two decimal digits. The sentence is {sentence}";

// Reproduced as published, including "accounts" and the 100ms/200ms mismatch.
constexpr std::string_view kRtTemplate =
    "You are an expert in psycholinguistics. Your task is to estimate how long, in milliseconds, an average reader "
    "will take to read each word of an English sentence. Take into accounts factors such as the difficulty of reading "
    "the word and the context of the word within the sentence. Output a JSON-like data structure containing "
    "word-duration pairs. For example, for the sentence ''I like cats'' and the reading time estimates 100ms, 200ms, "
    "200ms, the output must be {'I':200, 'like': 200, 'cats': 200}. Include duplicate keys if there are duplicate "
    "words even if the result is not strictly valid JSON. The order of keys should be identical to the order of "
    "words in the sentence. Do not add any other information. The sentence is: {sentence}";

const PromptTemplate kTemplates[] = {
    {PromptKind::word_mem, kWordTemplate, "{word}"},
    {PromptKind::sent_mem, kSentenceTemplate, "{sentence}"},
    {PromptKind::rt, kRtTemplate, "{sentence}"},
};

std::string quote_key(std::string_view w) {
  const bool has_single = w.find('\'') != std::string_view::npos;
  const bool has_double = w.find('"') != std::string_view::npos;
  const char q = (has_single && !has_double) ? '"' : '\'';
  std::string out(1, q);
  for (char c : w) {
    if (c == '\\' || c == q) out += '\\';
    out += c;
  }
  out += q;
  return out;
}

}  // namespace

PromptKind prompt_kind_for(DatasetKind k) {
  switch (k) {
    case DatasetKind::word_mem: return PromptKind::word_mem;
    case DatasetKind::sent_mem: return PromptKind::sent_mem;
    default: return PromptKind::rt;
  }
}

std::string_view to_string(PromptKind k) {
  switch (k) {
    case PromptKind::word_mem: return "word_mem";
    case PromptKind::sent_mem: return "sent_mem";
    case PromptKind::rt: return "rt";
  }
  return "?";
}

std::string_view to_string(Role r) {
  switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "?";
}

Role parse_role(std::string_view s) {
  if (s == "system") return Role::system;
  if (s == "user") return Role::user;
  if (s == "assistant") return Role::assistant;
  throw DataError("unknown message role '" + std::string(s) + "'");
}

std::string PromptTemplate::render(std::string_view item_text) const {
  auto pos = body.find(placeholder);
  std::string out(body.substr(0, pos));
  out += item_text;
  out += body.substr(pos + placeholder.size());
  return out;
}

const PromptTemplate& prompt_template(PromptKind kind) {
  for (const auto& t : kTemplates)
    if (t.kind == kind) return t;
  throw std::logic_error("no template for kind");
}

std::string template_fingerprint(PromptKind kind) { return sha256_hex(prompt_template(kind).body); }

std::vector<Item> items_of(const Dataset& d) {
  std::vector<Item> out;
  if (is_rt(d.kind)) {
    for (const auto& s : d.rt_sentences) out.emplace_back(s);
  } else {
    for (const auto& r : d.norm_records) out.emplace_back(r);
  }
  return out;
}

const std::string& item_id(const Item& item) {
  return std::visit([](const auto& x) -> const std::string& { return x.id; }, item);
}

std::string item_text(const Item& item) {
  if (const auto* r = std::get_if<NormRecord>(&item)) return r->text;
  return std::get<RtSentence>(item).text();
}

std::string format_score(double score) {
  // Half-up at the second decimal; the epsilon absorbs representation error
  // (0.785 is stored as 0.78499999...).
  auto hundredths = static_cast<long long>(std::floor(score * 100.0 + 0.5 + 1e-9));
  const bool neg = hundredths < 0;
  if (neg) hundredths = -hundredths;
  std::string frac = std::to_string(hundredths % 100);
  if (frac.size() < 2) frac.insert(0, "0");
  return (neg ? "-" : "") + std::to_string(hundredths / 100) + "." + frac;
}

long long round_ms(double ms) { return static_cast<long long>(std::floor(ms + 0.5 + 1e-9)); }

std::string format_duration_map(const std::vector<std::pair<std::string, double>>& pairs) {
  std::string out = "{";
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (i) out += ", ";
    out += quote_key(pairs[i].first);
    out += i == 0 ? ":" : ": ";
    out += std::to_string(round_ms(pairs[i].second));
  }
  out += "}";
  return out;
}

std::string format_target(const Item& item) {
  if (const auto* r = std::get_if<NormRecord>(&item)) return format_score(r->score);
  const auto& s = std::get<RtSentence>(item);
  std::vector<std::pair<std::string, double>> pairs;
  for (const auto& t : s.tokens) pairs.emplace_back(t.surface, t.rt_ms);
  return format_duration_map(pairs);
}

RenderedPrompt render_zero_shot(PromptKind kind, const Item& item) {
  auto body = item_text(item);
  if (text::trim(body).empty()) throw DataError("cannot render a prompt for empty item '" + item_id(item) + "'");
  return RenderedPrompt{item_id(item), {Message{Role::user, prompt_template(kind).render(body)}}};
}

std::vector<Item> select_few_shot_examples(const Dataset& train, std::size_t k, std::uint64_t seed) {
  if (train.size() < k) {
    throw DataError("few-shot selection needs " + std::to_string(k) + " training items, have " +
                    std::to_string(train.size()));
  }
  auto order = shuffled_keys(train.ids(), seed);
  order.resize(k);
  auto all = items_of(train);
  std::vector<Item> out;
  out.reserve(k);
  for (const auto& id : order) {
    for (const auto& it : all) {
      if (item_id(it) == id) {
        out.push_back(it);
        break;
      }
    }
  }
  return out;
}

RenderedPrompt render_few_shot(PromptKind kind, const Item& item, const std::vector<Item>& examples) {
  RenderedPrompt out;
  out.item_id = item_id(item);
  for (const auto& ex : examples) {
    if (item_id(ex) == out.item_id) throw DataError("few-shot example '" + out.item_id + "' is the query item itself");
    out.messages.push_back(render_zero_shot(kind, ex).messages.front());
    out.messages.push_back(Message{Role::assistant, format_target(ex)});
  }
  out.messages.push_back(render_zero_shot(kind, item).messages.front());
  return out;
}

bool target_matches_grammar(PromptKind kind, std::string_view target) {
  if (kind != PromptKind::rt) {
    static const std::regex kScalar(R"(^(0\.\d{2}|1\.00)$)");
    return std::regex_match(target.begin(), target.end(), kScalar);
  }
  return parse_duration_map(target).status == MapStatus::ok;
}

FineTuneExample make_finetune_example(PromptKind kind, const Item& item) {
  auto target = format_target(item);
  if (!target_matches_grammar(kind, target)) {
    throw DataError("target '" + target + "' for item '" + item_id(item) + "' violates the answer grammar");
  }
  if (const auto* s = std::get_if<RtSentence>(&item)) {
    if (parse_duration_map(target).pairs.size() != s->tokens.size()) {
      throw DataError("target for sentence '" + s->id + "' does not cover every word");
    }
  }
  FineTuneExample ex;
  ex.messages = render_zero_shot(kind, item).messages;
  ex.messages.push_back(Message{Role::assistant, std::move(target)});
  return ex;
}

std::string serialize_finetune_file(const std::vector<FineTuneExample>& examples) {
  std::string out;
  if (examples.empty()) std::clog << "warning: fine-tuning file has no examples\n";
  for (const auto& ex : examples) {
    nlohmann::ordered_json msgs = nlohmann::ordered_json::array();
    for (const auto& m : ex.messages) {
      nlohmann::ordered_json o;
      o["role"] = to_string(m.role);
      o["content"] = m.content;
      msgs.push_back(std::move(o));
    }
    nlohmann::ordered_json rec;
    rec["messages"] = std::move(msgs);
    out += rec.dump();
    out += '\n';
  }
  return out;
}

std::vector<FineTuneExample> parse_finetune_file(std::string_view content) {
  std::vector<FineTuneExample> out;
  for (const auto& line : text::lines(content)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    FineTuneExample ex;
    for (const auto& m : j.at("messages")) {
      ex.messages.push_back(Message{parse_role(m.at("role").get<std::string>()), m.at("content").get<std::string>()});
    }
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace psynorm
