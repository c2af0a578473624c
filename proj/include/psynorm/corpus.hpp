#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace psynorm {

enum class DatasetKind { word_mem, sent_mem, rt_spr, rt_et };

std::string_view to_string(DatasetKind k);
/// Accepts the canonical names above; throws ConfigError otherwise.
DatasetKind parse_dataset_kind(std::string_view s);
bool is_rt(DatasetKind k);

/// One stimulus (a word or a sentence) with its human memorability score.
struct NormRecord {
  std::string id;
  std::string text;
  double score = 0.0;  // in [0,1]
  std::map<std::string, double> features;  // absent feature == missing cell
  std::optional<std::vector<double>> embedding;

  bool operator==(const NormRecord&) const = default;
};

struct RtToken {
  std::string surface;
  double rt_ms = 0.0;
  int position = 0;

  bool operator==(const RtToken&) const = default;
};

struct RtSentence {
  std::string id;
  std::vector<RtToken> tokens;

  std::vector<std::string> words() const;
  /// Surfaces joined by single spaces.
  std::string text() const;
  /// "<sentence_id>:<position>", the key used by token-level sidecars.
  std::string token_id(std::size_t position) const;

  bool operator==(const RtSentence&) const = default;
};

struct Dataset {
  DatasetKind kind = DatasetKind::word_mem;
  std::vector<NormRecord> norm_records;
  std::vector<RtSentence> rt_sentences;

  std::size_t size() const { return is_rt(kind) ? rt_sentences.size() : norm_records.size(); }
  bool empty() const { return size() == 0; }
  std::vector<std::string> ids() const;
  std::size_t token_count() const;

  bool operator==(const Dataset&) const = default;
};

/// Tab-separated norm table: id, text, score, then optional feature columns.
/// Collects every bad row before throwing DataError.
Dataset load_norms(const std::string& path, DatasetKind kind);
Dataset parse_norms(std::string_view content, DatasetKind kind);

/// Tab-separated per-token table: sentence_id, position, surface, rt_ms.
Dataset load_rt_corpus(const std::string& path, DatasetKind kind);
Dataset parse_rt_corpus(std::string_view content, DatasetKind kind);

/// Embedding sidecar: `id` then d numeric columns per row. A first row whose
/// second field is not numeric is treated as a header.
struct EmbeddingTable {
  std::size_t dim = 0;
  std::map<std::string, std::vector<double>> vectors;
};
EmbeddingTable load_embeddings(const std::string& path);
EmbeddingTable parse_embeddings(std::string_view content);
/// Attaches vectors to norm records by id. Records without a vector keep
/// `embedding` empty.
void attach_embeddings(Dataset& d, const EmbeddingTable& table);

std::string serialize_norms(const Dataset& d);
std::string serialize_rt_corpus(const Dataset& d);
std::string serialize_embeddings(const Dataset& d);

/// Deterministic partition: ids sorted, seeded shuffle, prefix of
/// floor(train_fraction * n) goes to train. RT data splits by sentence.
/// Both sides keep the input's relative order.
std::pair<Dataset, Dataset> split_dataset(const Dataset& d, double train_fraction, std::uint64_t seed);

}  // namespace psynorm
