#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "psynorm/errors.hpp"
#include "psynorm/features_baselines.hpp"
#include "support/oracles.hpp"

using namespace psynorm;

namespace {

FeatureMatrix linear_fm(std::size_t n, std::size_t p, double noise, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  FeatureMatrix fm;
  fm.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  fm.y.resize(static_cast<Eigen::Index>(n));
  for (std::size_t c = 0; c < p; ++c) fm.columns.push_back("x" + std::to_string(c));
  for (std::size_t r = 0; r < n; ++r) {
    fm.row_ids.push_back("r" + std::to_string(100000 + r));
    double y = 0.5;
    for (std::size_t c = 0; c < p; ++c) {
      fm.X(r, c) = g(gen);
      y += (static_cast<double>(c) + 1.0) * fm.X(r, c);
    }
    fm.y(r) = y + noise * g(gen);
  }
  return fm;
}

FeatureMatrix permuted(const FeatureMatrix& fm, std::uint64_t seed) {
  std::vector<Eigen::Index> order(fm.row_ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), std::mt19937_64(seed));
  FeatureMatrix out = fm;
  for (std::size_t i = 0; i < order.size(); ++i) {
    out.row_ids[i] = fm.row_ids[order[i]];
    out.X.row(i) = fm.X.row(order[i]);
    out.y(i) = fm.y(order[i]);
  }
  return out;
}

}  // namespace

TEST_CASE("word length counts characters including punctuation") {
  CHECK(word_length("cats") == 4);
  CHECK(word_length("I") == 1);
  CHECK(word_length("don't") == 5);
  CHECK(word_length("café") == 4);
}

TEST_CASE("log frequency") {
  auto t = parse_frequency_table("word\tper_million\nthe\t100\nCat\t10\ncat,\t10\n", 1e-3);
  CHECK(log_frequency("the", t) == doctest::Approx(2.0));
  CHECK(log_frequency("The", t) == log_frequency("the", t));
  CHECK(log_frequency("\"the.\"", t) == log_frequency("the", t));
  CHECK(log_frequency("cat", t) == doctest::Approx(std::log10(20.0)));
  CHECK(log_frequency("zyzzyva", t) == doctest::Approx(-3.0));
  CHECK_THROWS_AS(parse_frequency_table("a\tb\nthe\t1\n"), DataError);
}

TEST_CASE("surprisal aggregation") {
  CHECK(word_surprisal({3.2}) == doctest::Approx(3.2));
  CHECK(word_surprisal({2.0, 1.5}) == doctest::Approx(3.5));
  CHECK(word_surprisal({0.0, 0.0}) == 0.0);
  CHECK_THROWS_AS(word_surprisal({}), std::invalid_argument);
  CHECK_THROWS_AS(word_surprisal({1.0, -0.1}), std::invalid_argument);

  const double ln2 = std::log(2.0);
  auto w = words_from_token_logprobs({{"The", std::nullopt}, {" cat", -ln2}, {" sat", -2 * ln2}, {"s", -ln2}});
  REQUIRE(w.size() == 3);
  CHECK(w[0].first == "The");
  CHECK(w[0].second == 0.0);
  CHECK(w[1].second == doctest::Approx(1.0));
  CHECK(w[2].first == "sats");
  CHECK(w[2].second == doctest::Approx(3.0));
}

TEST_CASE("surprisal file round trip") {
  auto t = parse_surprisal("sentence_id\tposition\tsurprisal_bits\ns1\t0\t3.5\ns1\t1\t0.25\n");
  CHECK(t.base == "bits");
  CHECK(t.by_token.at("s1:1") == 0.25);
  auto again = parse_surprisal(serialize_surprisal(t));
  CHECK(again.base == t.base);
  CHECK(again.by_token == t.by_token);
  CHECK(parse_surprisal("sentence_id\tposition\tsurprisal_nats\ns\t0\t1\n").base == "nats");
  CHECK_THROWS_AS(parse_surprisal("sentence_id\tposition\tsurprisal\ns\t0\t1\n"), DataError);
}

TEST_CASE("fit_ols exact recovery") {
  Eigen::MatrixXd X(10, 1);
  Eigen::VectorXd y(10);
  for (int i = 0; i < 10; ++i) X(i, 0) = i, y(i) = 2.0 * i + 1.0;
  auto fit = fit_ols(X, y);
  CHECK(fit.coefficients(0) == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(fit.intercept == doctest::Approx(1.0).epsilon(1e-10));
  CHECK_FALSE(fit.rank_deficient);
  CHECK(fit.coefficients.size() == 1);
  CHECK_THROWS_AS(fit_ols(Eigen::MatrixXd::Ones(2, 2), Eigen::VectorXd::Ones(2)), std::invalid_argument);
}

TEST_CASE("fit_ols matches the normal-equations oracle") {
  std::mt19937_64 gen(2024);
  std::normal_distribution<double> g(0.0, 1.0);
  const std::vector<double> w = {1.0, -2.0, 0.5};
  for (double noise : {0.0, 0.3}) {
    Eigen::MatrixXd X(50, 3);
    Eigen::VectorXd y(50);
    std::vector<std::vector<double>> rows(50, std::vector<double>(3));
    std::vector<double> ys(50);
    for (int r = 0; r < 50; ++r) {
      double v = 0.3;
      for (int c = 0; c < 3; ++c) {
        X(r, c) = rows[r][c] = g(gen);
        v += w[c] * X(r, c);
      }
      y(r) = ys[r] = v + noise * g(gen);
    }
    auto fit = fit_ols(X, y);
    auto beta = oracle::normal_equations(rows, ys);
    CHECK(fit.intercept == doctest::Approx(beta[0]).epsilon(1e-8));
    for (int c = 0; c < 3; ++c) CHECK(fit.coefficients(c) == doctest::Approx(beta[c + 1]).epsilon(1e-8));
    if (noise == 0.0) {
      for (int c = 0; c < 3; ++c) CHECK(fit.coefficients(c) == doctest::Approx(w[c]).epsilon(1e-8));
      CHECK(fit.intercept == doctest::Approx(0.3).epsilon(1e-8));
    }
    // Residuals are orthogonal to the intercept and every column.
    Eigen::VectorXd resid = y - predict(fit, X);
    CHECK(std::abs(resid.sum()) <= 1e-8 * y.norm() * std::sqrt(50.0));
    for (int c = 0; c < 3; ++c) CHECK(std::abs(X.col(c).dot(resid)) <= 1e-8 * X.col(c).norm() * y.norm());
  }
}

TEST_CASE("rank deficiency: duplicated columns keep the fitted values") {
  std::mt19937_64 gen(8);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd X(30, 2);
  Eigen::VectorXd y(30);
  for (int r = 0; r < 30; ++r) {
    X(r, 0) = g(gen);
    X(r, 1) = g(gen);
    y(r) = 1.0 + 3.0 * X(r, 0) - X(r, 1) + 0.1 * g(gen);
  }
  auto base = fit_ols(X, y);
  Eigen::MatrixXd Xd(30, 3);
  Xd << X, X.col(0);
  auto dup = fit_ols(Xd, y);
  CHECK(dup.rank_deficient);
  CHECK(dup.rank == 2);
  CHECK((predict(dup, Xd) - predict(base, X)).norm() <= 1e-9 * y.norm());
  CHECK(dup.coefficients(0) == doctest::Approx(dup.coefficients(2)));

  Eigen::MatrixXd twin(10, 2);
  Eigen::VectorXd yt(10);
  for (int r = 0; r < 10; ++r) twin(r, 0) = twin(r, 1) = r, yt(r) = 4.0 * r - 1.0;
  auto tf = fit_ols(twin, yt);
  CHECK(tf.rank_deficient);
  CHECK((predict(tf, twin) - yt).norm() <= 1e-9 * yt.norm());

  OlsOptions ridge;
  ridge.ridge_lambda = 1e-3;
  auto rf = fit_ols(twin, yt, ridge);
  CHECK(rf.coefficients(0) == doctest::Approx(rf.coefficients(1)));
}

TEST_CASE("held-out R2") {
  Eigen::MatrixXd X(4, 1);
  X << 1, 2, 3, 4;
  Eigen::VectorXd y(4);
  y << 3, 5, 7, 9;
  RegressionFit perfect{Eigen::VectorXd::Constant(1, 2.0), 1.0, false, 1};
  CHECK(r2_holdout(perfect, X, y) == doctest::Approx(1.0));
  RegressionFit mean{Eigen::VectorXd::Zero(1), 6.0, false, 1};
  CHECK(r2_holdout(mean, X, y) == doctest::Approx(0.0));
  RegressionFit worse{Eigen::VectorXd::Constant(1, -2.0), 11.0, false, 1};
  CHECK(r2_holdout(worse, X, y) < 0.0);
  CHECK_THROWS_AS(r2_holdout(perfect, X, Eigen::VectorXd::Constant(4, 2.0)), UndefinedMetric);
}

TEST_CASE("repeated splits") {
  auto clean = linear_fm(120, 2, 0.0, 1);
  auto ev = evaluate_splits(clean);
  CHECK(ev.n_splits == 100);
  CHECK(ev.r2_values.size() == 100);
  CHECK(ev.train_fraction == 0.75);
  for (double r : ev.r2_values) CHECK(r == doctest::Approx(1.0).epsilon(1e-10));

  auto noisy = linear_fm(300, 3, 2.0, 2);
  auto a = evaluate_splits(noisy, 40, 0.75, 99);
  auto b = evaluate_splits(noisy, 40, 0.75, 99);
  CHECK(a.r2_values == b.r2_values);
  CHECK(a.mean_r2 == doctest::Approx(std::accumulate(a.r2_values.begin(), a.r2_values.end(), 0.0) / 40.0));
  auto c = evaluate_splits(noisy, 40, 0.75, 100);
  CHECK(a.r2_values != c.r2_values);

  auto shuffled = evaluate_splits(permuted(noisy, 3), 40, 0.75, 99);
  CHECK(shuffled.mean_r2 == doctest::Approx(a.mean_r2).epsilon(1e-12));

  auto serial = evaluate_splits_serial(noisy, 40, 0.75, 99);
  CHECK(serial.r2_values == a.r2_values);
  CHECK(serial.sd_r2 == a.sd_r2);
}

TEST_CASE("independent target gives mean R2 near zero") {
  std::mt19937_64 gen(31);
  std::normal_distribution<double> g(0.0, 1.0);
  FeatureMatrix fm;
  fm.columns = {"x"};
  fm.X.resize(2000, 1);
  fm.y.resize(2000);
  for (int r = 0; r < 2000; ++r) {
    fm.row_ids.push_back("r" + std::to_string(r));
    fm.X(r, 0) = g(gen);
    fm.y(r) = g(gen);
  }
  auto ev = evaluate_splits(fm, 100, 0.75, 0);
  CHECK(std::abs(ev.mean_r2) < 0.05);
}

TEST_CASE("grouped rows split by unit") {
  auto fm = linear_fm(60, 1, 0.5, 4);
  for (std::size_t i = 0; i < 60; ++i) fm.groups.push_back("s" + std::to_string(i / 6));
  for (std::size_t k = 0; k < 10; ++k) {
    auto [train, test] = split_rows(fm, 0.75, 1, k);
    CHECK(train.size() == 42);  // floor(0.75 * 10) = 7 sentences of 6 tokens
    CHECK(test.size() == 18);
    std::set<std::string> tg;
    for (auto i : train) tg.insert(fm.groups[i]);
    for (auto i : test) CHECK(tg.count(fm.groups[i]) == 0);
  }
}

TEST_CASE("feature matrices and the baseline suite") {
  Dataset d;
  d.kind = DatasetKind::word_mem;
  std::mt19937_64 gen(6);
  for (int i = 0; i < 40; ++i) {
    NormRecord r{"w" + std::to_string(i), "x", 0.01 * (gen() % 100), {}, {}};
    r.features["num_meanings"] = static_cast<double>(gen() % 5);
    r.features["num_synonyms"] = static_cast<double>(gen() % 7);
    if (i != 3) r.features["frequency"] = static_cast<double>(1 + gen() % 100);
    r.embedding = std::vector<double>{static_cast<double>(gen() % 10), static_cast<double>(gen() % 10)};
    d.norm_records.push_back(r);
  }
  BaselineInputs in;
  in.dataset = &d;
  auto suite = baseline_suite(in);
  std::vector<std::string> names;
  for (const auto& s : suite) names.push_back(s.name);
  CHECK(names == std::vector<std::string>{"num_meanings", "num_synonyms", "frequency", "combined_scalar", "embedding"});
  CHECK(suite[3].columns == default_scalar_features(DatasetKind::word_mem));

  auto fm = build_feature_matrix(in, {"num_meanings", "frequency"});
  CHECK(fm.dropped == 1);
  CHECK(fm.X.rows() == 39);
  CHECK(fm.X(0, 1) == doctest::Approx(std::log10(d.norm_records[0].features["frequency"])));

  in.frequency_transform = FrequencyTransform::raw;
  auto raw = build_feature_matrix(in, {"frequency"});
  CHECK(raw.X(0, 0) == d.norm_records[0].features["frequency"]);

  auto emb = build_feature_matrix(in, {"embedding"});
  CHECK(emb.columns.size() == 2);
  CHECK(emb.X(5, 1) == (*d.norm_records[5].embedding)[1]);
  // The embedding design goes through the same evaluation path.
  auto ev = evaluate_splits(emb, 5, 0.75, 0);
  CHECK(ev.n_splits == 5);
}
