#include <doctest.h>

#include <filesystem>
#include <random>

#include "psynorm/errors.hpp"
#include "psynorm/metrics_report.hpp"
#include "psynorm/text.hpp"
#include "support/oracles.hpp"

using namespace psynorm;

namespace {

PairedSeries series(std::vector<double> x, std::vector<double> y) {
  PairedSeries s;
  for (std::size_t i = 0; i < x.size(); ++i) s.ids.push_back(std::to_string(i));
  s.predicted = std::move(x);
  s.truth = std::move(y);
  return s;
}

// n sentences of `len` tokens; truth rt = 100 + 7*(sentence) + 13*(position) with jitter.
Dataset rt_corpus(std::size_t n, std::size_t len, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  Dataset d;
  d.kind = DatasetKind::rt_spr;
  for (std::size_t s = 0; s < n; ++s) {
    RtSentence sent{"s" + std::to_string(s), {}};
    for (std::size_t k = 0; k < len; ++k) sent.tokens.push_back(RtToken{"w", 100.0 + static_cast<double>(gen() % 400), static_cast<int>(k)});
    d.rt_sentences.push_back(sent);
  }
  return d;
}

}  // namespace

TEST_CASE("pearson hand cases") {
  // x=[1,2,3,4], y=[2,1,4,3]: deviations (-1.5,-0.5,0.5,1.5) and (-0.5,-1.5,1.5,0.5);
  // sum of products 0.75+0.75+0.75+0.75 = 3, both sums of squares 5, so r = 3/5.
  const auto s = series({1, 2, 3, 4}, {2, 1, 4, 3});
  CHECK(pearson(s) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(r2_of_predictions(s) == doctest::Approx(0.36).epsilon(1e-15));
  CHECK(pearson(series({1, 2, 3}, {1, 2, 3})) == doctest::Approx(1.0));
  CHECK(pearson(series({1, 2, 3}, {-1, -2, -3})) == doctest::Approx(-1.0));
  CHECK_THROWS_AS(pearson(series({1, 1, 1}, {1, 2, 3})), UndefinedMetric);
  CHECK_THROWS_AS(pearson(series({1, 2, 3}, {5, 5, 5})), UndefinedMetric);
  CHECK_THROWS_AS(pearson(series({1}, {1})), UndefinedMetric);
}

TEST_CASE("R2 modes") {
  const std::vector<double> t = {0.2, 0.5, 0.9, 0.4};
  CHECK(r2_of_predictions(series(t, t), R2Mode::squared_pearson) == doctest::Approx(1.0));
  CHECK(r2_of_predictions(series(t, t), R2Mode::agreement) == doctest::Approx(1.0));
  std::vector<double> twice;
  for (double v : t) twice.push_back(2 * v);
  CHECK(r2_of_predictions(series(twice, t), R2Mode::squared_pearson) == doctest::Approx(1.0));
  CHECK(r2_of_predictions(series(twice, t), R2Mode::agreement) < 1.0);
  CHECK(parse_r2_mode("agreement") == R2Mode::agreement);
  CHECK_THROWS_AS(parse_r2_mode("adjusted"), ConfigError);
}

TEST_CASE("pearson matches the definition and is affine invariant") {
  std::mt19937_64 gen(12);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> scale(0.1, 10.0), shift(-50.0, 50.0);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 3 + gen() % 60;
    std::vector<double> x(n), y(n);
    for (std::size_t k = 0; k < n; ++k) x[k] = g(gen), y[k] = 0.5 * x[k] + g(gen);
    const double r = pearson(series(x, y));
    REQUIRE(r == doctest::Approx(oracle::pearson(x, y)).epsilon(1e-12));
    const double a = scale(gen), b = shift(gen);
    auto xa = x, neg = x;
    for (std::size_t k = 0; k < n; ++k) xa[k] = a * x[k] + b, neg[k] = -x[k];
    REQUIRE(std::abs(pearson(series(xa, y)) - r) <= 1e-10);
    REQUIRE(std::abs(pearson(series(neg, y)) + r) <= 1e-10);
    REQUIRE(std::abs(r2_of_predictions(series(xa, y)) - r * r) <= 1e-10);
  }
}

TEST_CASE("position curves") {
  auto corpus = rt_corpus(60, 8, 3);
  std::vector<AlignedPrediction> perfect, half;
  std::mt19937_64 gen(4);
  for (const auto& s : corpus.rt_sentences) {
    AlignedPrediction p{s.id, {}, 1.0, 0}, q{s.id, {}, 1.0, 0};
    for (const auto& t : s.tokens) {
      p.values.push_back(t.rt_ms);
      q.values.push_back(t.position < 5 ? t.rt_ms * 1.5 + 3 : 100.0 + static_cast<double>(gen() % 400));
    }
    perfect.push_back(p);
    half.push_back(q);
  }
  auto c = position_curve(perfect, corpus, 20);
  REQUIRE(c.entries.size() == 8);
  for (std::size_t k = 0; k < 8; ++k) {
    CHECK(c.entries[k].position == static_cast<int>(k));
    CHECK(c.entries[k].n == 60);
    CHECK(*c.entries[k].r2 == doctest::Approx(1.0));
  }

  auto h = position_curve(half, corpus, 20);
  REQUIRE(h.entries.size() == 8);
  for (std::size_t k = 0; k < 8; ++k) {
    std::vector<double> x, y;
    for (std::size_t s = 0; s < corpus.rt_sentences.size(); ++s) {
      x.push_back(*half[s].values[k]);
      y.push_back(corpus.rt_sentences[s].tokens[k].rt_ms);
    }
    const double r = oracle::pearson(x, y);
    CHECK(*h.entries[k].r2 == doctest::Approx(r * r).epsilon(1e-12));
    if (k < 5) CHECK(*h.entries[k].r2 > 0.99);
    else CHECK(*h.entries[k].r2 < 0.2);
  }
  CHECK(position_curve(perfect, corpus, 61).entries.empty());
}

TEST_CASE("corpus-level series concatenates sentence pairs") {
  auto corpus = rt_corpus(10, 5, 9);
  std::vector<AlignedPrediction> preds;
  std::vector<double> x, y;
  for (const auto& s : corpus.rt_sentences) {
    AlignedPrediction p{s.id, {}, 0.8, 0};
    for (const auto& t : s.tokens) {
      if (t.position == 2) {
        p.values.push_back(std::nullopt);
        continue;
      }
      const double v = t.rt_ms * 0.5 + static_cast<double>(t.position * 17 % 23);
      p.values.push_back(v);
      x.push_back(v);
      y.push_back(t.rt_ms);
    }
    preds.push_back(p);
  }
  auto s = rt_series(preds, corpus);
  CHECK(s.excluded == 10);
  CHECK(s.predicted == x);
  CHECK(s.truth == y);
  CHECK(pearson(s) == doctest::Approx(oracle::pearson(x, y)).epsilon(1e-12));
}

TEST_CASE("report tables") {
  ReportInput in;
  in.manifest = {{"created_at", "2024-01-01T00:00:00Z"}, {"seed", 1}};
  auto ok = summarize_predictions(series({1, 2, 3, 4}, {2, 1, 4, 3}), "word_mem", "zero_shot", "m", 4, 1.0);
  CHECK(*ok.pearson == doctest::Approx(0.6));
  PairedSeries empty;
  empty.excluded = 4;
  auto undefined = summarize_predictions(empty, "word_mem", "few_shot", "m", 4, 0.0);
  CHECK_FALSE(undefined.pearson);
  CHECK_FALSE(undefined.undefined_reason.empty());
  in.llm = {ok, undefined};
  for (const char* name : {"num_meanings", "num_synonyms", "frequency", "combined_scalar"}) {
    BaselineResult b;
    b.dataset = "word_mem";
    b.name = name;
    b.evaluation.r2_values = {0.1, 0.3};
    b.evaluation.mean_r2 = 0.2;
    b.evaluation.n_splits = 2;
    b.n_rows = 10;
    in.baselines.push_back(b);
  }
  const auto table = metrics_table(in);
  const auto rows = text::lines(table);
  REQUIRE(rows.size() == 7);  // header + 2 regimes + 4 baselines
  CHECK(rows[0].starts_with("source\tdataset\tregime"));
  CHECK(rows[2].find("undefined") != std::string::npos);
  CHECK(rows[2].find("0.000000\tundefined") != std::string::npos);  // coverage 0, then the undefined pearson

  const auto dir = std::filesystem::temp_directory_path() / "psynorm_report_test";
  std::filesystem::remove_all(dir);
  emit_report(in, dir / "a");
  emit_report(in, dir / "b");
  for (const char* f : {"manifest.json", "metrics.tsv", "reference.tsv", "summary.jsonl"}) {
    CHECK(text::read_file((dir / "a" / f).string()) == text::read_file((dir / "b" / f).string()));
  }
  const auto ref = text::read_file((dir / "a" / "reference.tsv").string());
  CHECK(ref.find("0.53") != std::string::npos);
  CHECK(ref.find("0.27") != std::string::npos);

  // Results survive a JSON round trip, which is what report regeneration relies on.
  auto back = llm_result_from_json(to_json(ok));
  CHECK(*back.pearson == *ok.pearson);
  CHECK(baseline_result_from_json(to_json(in.baselines[0])).evaluation.r2_values == in.baselines[0].evaluation.r2_values);
  std::filesystem::remove_all(dir);
}
