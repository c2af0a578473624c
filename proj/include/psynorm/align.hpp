#pragma once

#include <optional>
#include <string>
#include <vector>

#include "psynorm/corpus.hpp"
#include "psynorm/response_parse.hpp"

namespace psynorm {

enum class EditOp { match, substitute, remove, insert };
std::string_view to_string(EditOp op);

struct AlignStep {
  EditOp op;
  std::optional<std::size_t> ref_index;
  std::optional<std::size_t> hyp_index;
  bool operator==(const AlignStep&) const = default;
};

struct Alignment {
  std::vector<AlignStep> ops;
  int cost = 0;
};

/// Unit-cost word-level edit alignment. Words are compared after
/// text::normalize_word. Among minimal alignments the backtrace from the end
/// prefers match, then substitute, then delete (`remove`), then insert.
Alignment align_sequences(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);

struct AlignedPrediction {
  std::string sentence_id;
  std::vector<std::optional<double>> values;  // one per reference token
  double coverage = 0.0;
  int substitutions = 0;
};

struct ProjectionOptions {
  /// A substituted slot takes the hypothesis value; off drops it.
  bool project_substitutions = true;
};

/// Maps a parsed duration map onto reference token positions. An unparseable
/// map gives all-absent values and coverage 0.
AlignedPrediction project_predictions(const RtSentence& ref, const DurationMap& dmap,
                                      const ProjectionOptions& opts = {});

/// project_predictions over many sentences, OpenMP-parallel over sentences.
std::vector<AlignedPrediction> project_batch(const std::vector<RtSentence>& refs, const std::vector<DurationMap>& maps,
                                             const ProjectionOptions& opts = {});
/// Serial reference for project_batch.
std::vector<AlignedPrediction> project_batch_serial(const std::vector<RtSentence>& refs,
                                                    const std::vector<DurationMap>& maps,
                                                    const ProjectionOptions& opts = {});

}  // namespace psynorm
