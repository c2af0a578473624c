#include <doctest.h>

#include <set>

#include "psynorm/errors.hpp"
#include "psynorm/prompting.hpp"
#include "psynorm/response_parse.hpp"
#include "psynorm/align.hpp"
#include "psynorm/text.hpp"

using namespace psynorm;

namespace {

std::string fixture(const std::string& name) {
  return text::read_file(std::string(PSYNORM_FIXTURES) + "/templates/" + name);
}

NormRecord word(std::string id, std::string w, double score) { return NormRecord{std::move(id), std::move(w), score, {}, {}}; }

RtSentence sentence(std::string id, const std::vector<std::pair<std::string, double>>& toks) {
  RtSentence s{std::move(id), {}};
  for (std::size_t i = 0; i < toks.size(); ++i) s.tokens.push_back(RtToken{toks[i].first, toks[i].second, static_cast<int>(i)});
  return s;
}

Dataset word_train(std::size_t n) {
  Dataset d;
  d.kind = DatasetKind::word_mem;
  for (std::size_t i = 0; i < n; ++i) d.norm_records.push_back(word("t" + std::to_string(i), "w" + std::to_string(i), 0.5));
  return d;
}

}  // namespace

TEST_CASE("template bodies match the checked-in fixtures byte for byte") {
  CHECK(prompt_template(PromptKind::word_mem).body == fixture("word_mem.txt"));
  CHECK(prompt_template(PromptKind::sent_mem).body == fixture("sent_mem.txt"));
  CHECK(prompt_template(PromptKind::rt).body == fixture("rt.txt"));
  for (auto k : {PromptKind::word_mem, PromptKind::sent_mem, PromptKind::rt}) {
    const auto& t = prompt_template(k);
    const auto first = t.body.find(t.placeholder);
    REQUIRE(first != std::string_view::npos);
    CHECK(t.body.find(t.placeholder, first + 1) == std::string_view::npos);
    CHECK(template_fingerprint(k).size() == 64);
  }
}

TEST_CASE("zero-shot renders") {
  auto p = render_zero_shot(PromptKind::word_mem, word("w1", "dog", 0.5));
  REQUIRE(p.messages.size() == 1);
  CHECK(p.messages[0].role == Role::user);
  CHECK(p.item_id == "w1");
  const auto& c = p.messages[0].content;
  CHECK(c.ends_with("The word is dog"));

  auto rt = render_zero_shot(PromptKind::rt, sentence("s1", {{"I", 1}, {"like", 1}, {"cats", 1}}));
  CHECK(rt.messages[0].content.find("Include duplicate keys if there are duplicate words") != std::string::npos);
  CHECK(rt.messages[0].content.ends_with("The sentence is: I like cats"));

  auto sent = render_zero_shot(PromptKind::sent_mem, word("s9", "We want to make it better.", 0.5));
  const auto& sc = sent.messages[0].content;
  CHECK(sc.find("memorability of English sentences") != std::string::npos);
  CHECK(sc.find(" word") == std::string::npos);
  CHECK(sc.ends_with("The sentence is We want to make it better."));
}

TEST_CASE("score and duration formatting") {
  CHECK(format_score(0.785) == "0.79");
  CHECK(format_score(0.145) == "0.15");
  CHECK(format_score(0.53) == "0.53");
  CHECK(format_score(1.0) == "1.00");
  CHECK(format_score(0.0) == "0.00");
  CHECK(round_ms(210.4) == 210);
  CHECK(round_ms(99.6) == 100);
  CHECK(round_ms(99.5) == 100);
  CHECK(format_duration_map({{"I", 200}, {"like", 200}, {"cats", 200}}) == "{'I':200, 'like': 200, 'cats': 200}");
  CHECK(format_duration_map({{"don't", 90}}) == "{\"don't\":90}");
}

TEST_CASE("few-shot examples are seeded, distinct and drawn from train") {
  auto train = word_train(10);
  auto a = select_few_shot_examples(train, 3, 7);
  auto b = select_few_shot_examples(train, 3, 7);
  REQUIRE(a.size() == 3);
  std::set<std::string> ids;
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(item_id(a[i]) == item_id(b[i]));
    ids.insert(item_id(a[i]));
    CHECK(item_id(a[i]).starts_with("t"));
  }
  CHECK(ids.size() == 3);
  CHECK(select_few_shot_examples(train, 0, 7).empty());
  CHECK_THROWS_AS(select_few_shot_examples(word_train(2), 3, 7), DataError);
}

TEST_CASE("few-shot message layout") {
  std::vector<Item> ex = {word("a", "sun", 0.785), word("b", "moon", 0.1), word("c", "star", 0.333)};
  const Item query = word("q", "dog", 0.5);
  auto p = render_few_shot(PromptKind::word_mem, query, ex);
  REQUIRE(p.messages.size() == 7);
  for (int i = 0; i < 3; ++i) {
    CHECK(p.messages[2 * i].role == Role::user);
    CHECK(p.messages[2 * i + 1].role == Role::assistant);
  }
  CHECK(p.messages[1].content == "0.79");
  CHECK(p.messages[0].content == render_zero_shot(PromptKind::word_mem, ex[0]).messages[0].content);
  CHECK(p.messages[6] == render_zero_shot(PromptKind::word_mem, query).messages[0]);

  CHECK(render_few_shot(PromptKind::word_mem, query, {}) == render_zero_shot(PromptKind::word_mem, query));
  CHECK_THROWS_AS(render_few_shot(PromptKind::word_mem, query, {word("q", "dog", 0.5)}), DataError);

  std::vector<Item> rt_ex = {sentence("e", {{"Hello", 210.4}, {"there", 99.6}})};
  auto rp = render_few_shot(PromptKind::rt, sentence("s", {{"x", 1}}), rt_ex);
  CHECK(rp.messages[1].content == "{'Hello':210, 'there': 100}");
}

TEST_CASE("fine-tuning targets") {
  auto ex = make_finetune_example(PromptKind::word_mem, word("w", "dog", 0.53));
  REQUIRE(ex.messages.size() == 2);
  CHECK(ex.messages[0] == render_zero_shot(PromptKind::word_mem, word("w", "dog", 0.53)).messages[0]);
  CHECK(ex.messages[1].content == "0.53");

  auto cats = make_finetune_example(PromptKind::rt, sentence("s", {{"I", 200}, {"like", 200}, {"cats", 200}}));
  CHECK(cats.messages[1].content == "{'I':200, 'like': 200, 'cats': 200}");

  const auto dup = sentence("d", {{"the", 180}, {"cat", 240}, {"saw", 210}, {"the", 170}, {"dog", 260}});
  auto target = make_finetune_example(PromptKind::rt, dup).messages[1].content;
  const auto first = target.find("'the'");
  REQUIRE(first != std::string::npos);
  CHECK(target.find("'the'", first + 1) != std::string::npos);
  CHECK(target.find("'cat'") > first);
}

TEST_CASE("every target matches its grammar and rt targets re-align fully") {
  for (int k = 0; k <= 100; ++k) {
    const auto t = format_target(word("w", "x", k / 100.0));
    CHECK(target_matches_grammar(PromptKind::word_mem, t));
  }
  CHECK_FALSE(target_matches_grammar(PromptKind::word_mem, "1.01"));
  CHECK_FALSE(target_matches_grammar(PromptKind::word_mem, "0.5"));

  const std::vector<RtSentence> sents = {
      sentence("a", {{"The", 210.2}, {"cat,", 180}, {"don't", 300}, {"\"quoted\"", 120}, {"the", 250.5}}),
      sentence("b", {{"It's", 190}, {"Mr.", 150}, {"O'Brien's", 330}, {"café.", 280}})};
  for (const auto& s : sents) {
    const auto t = format_target(s);
    CHECK(target_matches_grammar(PromptKind::rt, t));
    auto dm = parse_duration_map(t);
    CHECK(dm.status == MapStatus::ok);
    auto aligned = project_predictions(s, dm);
    CHECK(aligned.coverage == 1.0);
    for (std::size_t i = 0; i < s.tokens.size(); ++i) CHECK(*aligned.values[i] == static_cast<double>(round_ms(s.tokens[i].rt_ms)));
  }
}

TEST_CASE("fine-tuning file format") {
  std::vector<FineTuneExample> exs;
  for (int i = 0; i < 527; ++i) exs.push_back(make_finetune_example(PromptKind::word_mem, word("w", "w" + std::to_string(i), 0.25)));
  const auto file = serialize_finetune_file(exs);
  CHECK(std::count(file.begin(), file.end(), '\n') == 527);
  CHECK(parse_finetune_file(file) == exs);
  CHECK(serialize_finetune_file({}).empty());

  FineTuneExample tricky{{{Role::user, "quote \" backslash \\ tab \t newline \n café"}, {Role::assistant, "0.50"}}};
  const auto line = serialize_finetune_file({tricky});
  CHECK(line ==
        "{\"messages\":[{\"role\":\"user\",\"content\":\"quote \\\" backslash \\\\ tab \\t newline \\n café\"},"
        "{\"role\":\"assistant\",\"content\":\"0.50\"}]}\n");
  CHECK(parse_finetune_file(line)[0] == tricky);
}
