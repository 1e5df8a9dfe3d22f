#include <cmath>

#include "doctest.h"
#include "embeval/metrics.hpp"
#include "oracles.hpp"

using namespace embeval;

namespace {

LabelSet single(std::vector<std::uint32_t> classes) {
  LabelSet y;
  y.classes = std::move(classes);
  return y;
}

// Scores drawn from a few levels so ties are frequent.
Eigen::VectorXd tied_scores(std::size_t n, int levels, Rng& rng) {
  Eigen::VectorXd s(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < s.size(); ++i) s(i) = static_cast<double>(rng.below(static_cast<std::uint64_t>(levels))) - 2.0;
  return s;
}

}  // namespace

TEST_CASE("accuracy counts argmax-correct rows") {
  Eigen::MatrixXd l(4, 3);
  l << 3, 1, 0, 0, 2, 1, 0, 0, 9, 1, 1, 0;
  CHECK(compute_metric(MetricKind::Accuracy, l, single({0, 1, 2, 0})).value == 1.0);
  auto r = compute_metric(MetricKind::Accuracy, l, single({0, 1, 1, 1}));
  CHECK(r.value == 0.5);
  CHECK(r.n == 4);
}

TEST_CASE("mean per class averages per-class recall") {
  // Class 0: 1 of 1 correct; class 1: 1 of 3 correct.
  Eigen::MatrixXd l(4, 2);
  l << 1, 0, 0, 1, 1, 0, 1, 0;
  CHECK(compute_metric(MetricKind::MeanPerClass, l, single({0, 1, 1, 1})).value == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  // Absent classes do not count.
  Eigen::MatrixXd l3(2, 3);
  l3 << 1, 0, 0, 1, 0, 0;
  CHECK(compute_metric(MetricKind::MeanPerClass, l3, single({0, 0})).value == 1.0);
}

TEST_CASE("accuracy and mean per class agree on balanced labels") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t K = 2 + rng.below(5), per = 1 + rng.below(6);
    Eigen::MatrixXd l(static_cast<Eigen::Index>(K * per), static_cast<Eigen::Index>(K));
    for (Eigen::Index i = 0; i < l.size(); ++i) l.data()[i] = rng.normal();
    std::vector<std::uint32_t> y;
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t j = 0; j < per; ++j) y.push_back(static_cast<std::uint32_t>(k));
    CHECK(compute_metric(MetricKind::Accuracy, l, single(y)).value ==
          doctest::Approx(compute_metric(MetricKind::MeanPerClass, l, single(y)).value).epsilon(1e-12));
  }
}

TEST_CASE("roc-auc extremes") {
  Eigen::MatrixXd l(4, 2);
  l << 0, 0.1, 0, 0.2, 0, 0.8, 0, 0.9;
  CHECK(compute_metric(MetricKind::RocAuc, l, single({0, 0, 1, 1})).value == 1.0);
  CHECK(compute_metric(MetricKind::RocAuc, l, single({1, 1, 0, 0})).value == 0.0);
  Eigen::MatrixXd flat = Eigen::MatrixXd::Zero(4, 2);
  CHECK(compute_metric(MetricKind::RocAuc, flat, single({1, 0, 0, 1})).value == 0.5);
}

TEST_CASE("roc-auc matches pair counting with heavy ties") {
  Rng rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng.below(60);
    const auto s = tied_scores(n, 1 + static_cast<int>(rng.below(6)), rng);
    std::vector<bool> pos(n);
    for (std::size_t i = 0; i < n; ++i) pos[i] = rng.below(2) == 1;
    pos[0] = true;
    pos[1] = false;
    CHECK(roc_auc(s, pos) == oracle::auc_pair_count(s, pos));
  }
}

TEST_CASE("roc-auc errors") {
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(3, 2);
  CHECK_THROWS_AS(compute_metric(MetricKind::RocAuc, l, single({1, 1, 1})), MetricError);
  CHECK_THROWS_AS(compute_metric(MetricKind::RocAuc, Eigen::MatrixXd::Zero(3, 3), single({0, 1, 2})), MetricError);
}

TEST_CASE("worked AP example is 28/33") {
  Eigen::VectorXd s(3);
  s << 0.9, 0.8, 0.1;
  CHECK(std::abs(average_precision_11pt(s, {true, false, true}) - 28.0 / 33.0) <= 1e-12);
  CHECK(std::abs(oracle::ap11_threshold_sweep(s, {true, false, true}) - 28.0 / 33.0) <= 1e-12);
}

TEST_CASE("map-11pt matches the threshold sweep on small instances") {
  Rng rng(55);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.below(30);
    const std::size_t K = 1 + rng.below(5);
    Eigen::MatrixXd l(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(K));
    LabelSet y;
    y.multilabel = true;
    y.membership.resize(l.rows(), l.cols());
    for (Eigen::Index k = 0; k < l.cols(); ++k) l.col(k) = tied_scores(n, 2 + static_cast<int>(rng.below(8)), rng);
    for (Eigen::Index i = 0; i < y.membership.size(); ++i) y.membership.data()[i] = rng.below(3) == 0 ? 1 : 0;
    y.membership(0, 0) = 1;

    double sum = 0.0;
    std::size_t used = 0;
    for (Eigen::Index k = 0; k < l.cols(); ++k) {
      std::vector<bool> pos(n);
      bool any = false;
      for (std::size_t i = 0; i < n; ++i) any |= (pos[i] = y.membership(static_cast<Eigen::Index>(i), k) != 0);
      if (!any) continue;
      sum += oracle::ap11_threshold_sweep(l.col(k), pos);
      ++used;
    }
    const auto r = compute_metric(MetricKind::Map11pt, l, y);
    CHECK(std::abs(r.value - sum / static_cast<double>(used)) <= 1e-12);
    CHECK(r.skipped_classes.size() == K - used);
  }
}

TEST_CASE("map-11pt records skipped classes and fails when nothing is positive") {
  Eigen::MatrixXd l(3, 2);
  l << 0.9, 0.1, 0.8, 0.2, 0.1, 0.3;
  LabelSet y;
  y.multilabel = true;
  y.membership.resize(3, 2);
  y.membership << 1, 0, 0, 0, 1, 0;
  const auto r = compute_metric(MetricKind::Map11pt, l, y);
  CHECK(r.skipped_classes == std::vector<std::size_t>{1});
  CHECK(r.value == doctest::Approx(28.0 / 33.0).epsilon(1e-12));
  y.membership.setZero();
  CHECK_THROWS_AS(compute_metric(MetricKind::Map11pt, l, y), MetricError);
}

TEST_CASE("metrics are invariant under strictly increasing transforms") {
  Rng rng(12);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 4 + rng.below(20);
    Eigen::MatrixXd l(static_cast<Eigen::Index>(n), 2);
    for (Eigen::Index k = 0; k < 2; ++k) l.col(k) = tied_scores(n, 5, rng);
    const Eigen::MatrixXd t = l.unaryExpr([](double x) { return std::exp(x) * 3.0 - 1.0; });
    std::vector<std::uint32_t> cls(n);
    for (auto& c : cls) c = static_cast<std::uint32_t>(rng.below(2));
    cls[0] = 0;
    cls[1] = 1;
    for (auto kind : {MetricKind::Accuracy, MetricKind::MeanPerClass, MetricKind::RocAuc}) {
      CHECK(compute_metric(kind, l, single(cls)).value == compute_metric(kind, t, single(cls)).value);
    }
    LabelSet ml;
    ml.multilabel = true;
    ml.membership.resize(static_cast<Eigen::Index>(n), 2);
    for (std::size_t i = 0; i < n; ++i) {
      ml.membership(static_cast<Eigen::Index>(i), 0) = cls[i] == 0;
      ml.membership(static_cast<Eigen::Index>(i), 1) = cls[i] == 1;
    }
    CHECK(compute_metric(MetricKind::Map11pt, l, ml).value == compute_metric(MetricKind::Map11pt, t, ml).value);
  }
}

TEST_CASE("metric values stay in the unit interval") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::MatrixXd l(10, 2);
    for (Eigen::Index i = 0; i < l.size(); ++i) l.data()[i] = rng.normal();
    std::vector<std::uint32_t> cls(10);
    for (auto& c : cls) c = static_cast<std::uint32_t>(rng.below(2));
    cls[0] = 0;
    cls[1] = 1;
    for (auto kind : {MetricKind::Accuracy, MetricKind::MeanPerClass, MetricKind::RocAuc}) {
      const double v = compute_metric(kind, l, single(cls)).value;
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("seed summaries") {
  const auto s = summarize({1.0, 2.0, 3.0});
  CHECK(s.mean == 2.0);
  CHECK(s.stddev == 1.0);
  CHECK_FALSE(s.single);

  const auto one = summarize({0.42});
  CHECK(one.stddev == 0.0);
  CHECK(one.single);
  CHECK_THROWS_AS(summarize({}), MetricError);

  Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> v(1 + rng.below(6));
    for (auto& x : v) x = rng.uniform();
    const auto r = summarize(v);
    CHECK(r.mean >= *std::min_element(v.begin(), v.end()) - 1e-15);
    CHECK(r.mean <= *std::max_element(v.begin(), v.end()) + 1e-15);
    CHECK(r.stddev >= 0.0);
  }
}

TEST_CASE("cross-dataset mean is unweighted over datasets") {
  const std::vector<MetricSample> samples{
      {"a", "lp", 0.2}, {"b", "lp", 0.4}, {"c", "lp", 0.8}, {"c", "lp", 1.0}, {"a", "zs", 0.5},
  };
  const auto agg = aggregate(samples);
  CHECK(agg.cross_dataset_mean.at("lp") == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(agg.table.at("lp").at("c").mean == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(agg.table.at("zs").size() == 1);
  CHECK(agg.cross_dataset_mean.at("zs") == 0.5);
}
