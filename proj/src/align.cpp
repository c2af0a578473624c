#include "psynorm/align.hpp"

#include <algorithm>
#include <stdexcept>

#include "psynorm/text.hpp"

namespace psynorm {

std::string_view to_string(EditOp op) {
  switch (op) {
    case EditOp::match: return "match";
    case EditOp::substitute: return "substitute";
    case EditOp::remove: return "delete";
    case EditOp::insert: return "insert";
  }
  return "?";
}

Alignment align_sequences(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::string> r(n), h(m);
  std::transform(ref.begin(), ref.end(), r.begin(), [](const auto& w) { return text::normalize_word(w); });
  std::transform(hyp.begin(), hyp.end(), h.begin(), [](const auto& w) { return text::normalize_word(w); });

  // dist[i][j]: edit cost between r[0..i) and h[0..j).
  const std::size_t stride = m + 1;
  std::vector<int> dist((n + 1) * stride);
  auto at = [&](std::size_t i, std::size_t j) -> int& { return dist[i * stride + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = static_cast<int>(i);
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const int diag = at(i - 1, j - 1) + (r[i - 1] == h[j - 1] ? 0 : 1);
      at(i, j) = std::min({diag, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }

  Alignment out;
  out.cost = at(n, m);
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool same = r[i - 1] == h[j - 1];
      if (at(i, j) == at(i - 1, j - 1) + (same ? 0 : 1)) {
        out.ops.push_back({same ? EditOp::match : EditOp::substitute, i - 1, j - 1});
        --i, --j;
        continue;
      }
    }
    if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      out.ops.push_back({EditOp::remove, i - 1, std::nullopt});
      --i;
      continue;
    }
    out.ops.push_back({EditOp::insert, std::nullopt, j - 1});
    --j;
  }
  std::reverse(out.ops.begin(), out.ops.end());
  return out;
}

AlignedPrediction project_predictions(const RtSentence& ref, const DurationMap& dmap, const ProjectionOptions& opts) {
  AlignedPrediction out;
  out.sentence_id = ref.id;
  out.values.assign(ref.tokens.size(), std::nullopt);
  if (dmap.status == MapStatus::unparseable || ref.tokens.empty()) return out;

  std::vector<std::string> hyp;
  hyp.reserve(dmap.pairs.size());
  for (const auto& [w, _] : dmap.pairs) hyp.push_back(w);
  const auto alignment = align_sequences(ref.words(), hyp);

  std::size_t covered = 0;
  for (const auto& step : alignment.ops) {
    if (step.op == EditOp::substitute) ++out.substitutions;
    const bool take = step.op == EditOp::match || (step.op == EditOp::substitute && opts.project_substitutions);
    if (!take) continue;
    out.values[*step.ref_index] = dmap.pairs[*step.hyp_index].second;
    ++covered;
  }
  out.coverage = static_cast<double>(covered) / static_cast<double>(ref.tokens.size());
  return out;
}

std::vector<AlignedPrediction> project_batch_serial(const std::vector<RtSentence>& refs,
                                                    const std::vector<DurationMap>& maps,
                                                    const ProjectionOptions& opts) {
  if (refs.size() != maps.size()) throw std::invalid_argument("project_batch: refs and maps differ in length");
  std::vector<AlignedPrediction> out;
  out.reserve(refs.size());
  for (std::size_t i = 0; i < refs.size(); ++i) out.push_back(project_predictions(refs[i], maps[i], opts));
  return out;
}

std::vector<AlignedPrediction> project_batch(const std::vector<RtSentence>& refs, const std::vector<DurationMap>& maps,
                                             const ProjectionOptions& opts) {
  if (refs.size() != maps.size()) throw std::invalid_argument("project_batch: refs and maps differ in length");
  std::vector<AlignedPrediction> out(refs.size());
  const auto n = static_cast<std::ptrdiff_t>(refs.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = project_predictions(refs[i], maps[i], opts);
  return out;
}

}  // namespace psynorm
