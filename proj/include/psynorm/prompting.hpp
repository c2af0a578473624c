#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "psynorm/corpus.hpp"

namespace psynorm {

enum class PromptKind { word_mem, sent_mem, rt };
PromptKind prompt_kind_for(DatasetKind k);
std::string_view to_string(PromptKind k);

enum class Role { system, user, assistant };
std::string_view to_string(Role r);
Role parse_role(std::string_view s);

struct Message {
  Role role = Role::user;
  std::string content;
  bool operator==(const Message&) const = default;
};

struct PromptTemplate {
  PromptKind kind;
  std::string_view body;
  std::string_view placeholder;

  std::string render(std::string_view text) const;
};

/// The fixed elicitation templates, one per kind.
const PromptTemplate& prompt_template(PromptKind kind);
/// SHA-256 hex of the template body, recorded in run manifests.
std::string template_fingerprint(PromptKind kind);

struct RenderedPrompt {
  std::string item_id;
  std::vector<Message> messages;
  bool operator==(const RenderedPrompt&) const = default;
};

struct FineTuneExample {
  std::vector<Message> messages;
  bool operator==(const FineTuneExample&) const = default;
};

using Item = std::variant<NormRecord, RtSentence>;
std::vector<Item> items_of(const Dataset& d);
const std::string& item_id(const Item& item);
/// The text substituted into the template (a word, a sentence, or the
/// space-joined token surfaces).
std::string item_text(const Item& item);

/// "0.79"-style two-decimal string, half-up.
std::string format_score(double score);
/// Whole milliseconds, half-up.
long long round_ms(double ms);
/// Map text in the single-quoted style taught by the RT prompt:
/// {'I':200, 'like': 200, 'cats': 200}. Duplicate words repeat in order.
std::string format_duration_map(const std::vector<std::pair<std::string, double>>& pairs);
/// The ground-truth answer an ideal model would give for this item.
std::string format_target(const Item& item);

RenderedPrompt render_zero_shot(PromptKind kind, const Item& item);

/// k distinct items from `train`, chosen by a seeded shuffle of its sorted ids.
/// Throws DataError when train has fewer than k items.
std::vector<Item> select_few_shot_examples(const Dataset& train, std::size_t k, std::uint64_t seed);

/// One user/assistant pair per example, then the zero-shot user message.
/// Throws DataError when an example shares the query's id.
RenderedPrompt render_few_shot(PromptKind kind, const Item& item, const std::vector<Item>& examples);

FineTuneExample make_finetune_example(PromptKind kind, const Item& item);

/// True when `target` matches the answer grammar for `kind`.
bool target_matches_grammar(PromptKind kind, std::string_view target);

/// JSON Lines: {"messages":[{"role":"user","content":"..."},...]}\n per example.
/// Key order and escaping are fixed (see docs/finetune_format.md).
std::string serialize_finetune_file(const std::vector<FineTuneExample>& examples);
std::vector<FineTuneExample> parse_finetune_file(std::string_view content);

}  // namespace psynorm
