#include <cmath>
#include <limits>

#include "doctest.h"
#include "embeval/optim.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace embeval;

namespace {

Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

}  // namespace

TEST_CASE("uniform logits give ln K") {
  const auto a = synthesize_archive(testing::tiny_spec());
  auto head = init_head(a, {InitKind::Random, 0, {}});
  head.weight.setZero();
  head.temperature = 1.0;
  const auto labels = a.train_labels.subset({0, 1, 2, 3, 4});
  const auto h = to_double(a.train_features).topRows(5);
  CHECK(loss_value(head, h, labels, LossKind::SoftmaxCe) == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  CHECK(loss_and_grad(head, h, labels, LossKind::SoftmaxCe).loss == doctest::Approx(std::log(4.0)).epsilon(1e-15));
}

TEST_CASE("analytic gradients match central differences") {
  Rng rng(2024);
  const FeaturePath paths[] = {FeaturePath::Frozen, FeaturePath::TrainProjection, FeaturePath::TrainAdaptor};
  for (int trial = 0; trial < 50; ++trial) {
    auto c = testing::random_grad_case(paths[trial % 3], rng);
    const auto analytic = loss_and_grad(c.head, c.features, c.labels, c.loss);
    const auto blocks = gradient_blocks(analytic.grads);
    auto params = trainable_parameters(c.head);
    REQUIRE(blocks.size() == params.size());

    std::vector<double*> entries;
    std::vector<double> expected;
    for (std::size_t b = 0; b < params.size(); ++b) {
      REQUIRE(blocks[b].size() == params[b].size());
      for (std::size_t i = 0; i < params[b].size(); ++i) {
        entries.push_back(&params[b][i]);
        expected.push_back(blocks[b][i]);
      }
    }
    const auto numeric = oracle::central_differences(
        entries, [&] { return loss_value(c.head, c.features, c.labels, c.loss); }, 1e-5);
    double worst = 0.0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      const double scale = std::max({std::abs(numeric[i]), std::abs(expected[i]), 1e-6});
      worst = std::max(worst, std::abs(numeric[i] - expected[i]) / scale);
    }
    CAPTURE(trial);
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("saturated correct logits have near-zero loss") {
  HeadAssembly h;
  h.space = HeadSpace::Backbone;
  h.projection = Eigen::MatrixXd::Identity(3, 3);
  h.weight = Eigen::MatrixXd::Identity(3, 3);
  h.bias = Eigen::VectorXd::Zero(3);
  h.temperature = 1000.0;
  LabelSet y;
  y.classes = {0, 1, 2};
  CHECK(loss_value(h, Eigen::MatrixXd::Identity(3, 3), y, LossKind::SoftmaxCe) < 1e-3);
}

TEST_CASE("softmax loss ignores a constant added to a row's logits") {
  Rng rng(5);
  HeadAssembly h;
  h.space = HeadSpace::Backbone;
  h.projection = gaussian(3, 6, rng);
  h.weight = gaussian(6, 4, rng);
  h.bias = Eigen::VectorXd::Zero(4);
  LabelSet y;
  y.classes = {1, 3, 0};
  const Eigen::MatrixXd x = gaussian(3, 6, rng);
  const double base = loss_value(h, x, y, LossKind::SoftmaxCe);
  for (double shift : {-50.0, 3.0, 700.0}) {
    h.bias = Eigen::VectorXd::Constant(4, shift);
    CHECK(loss_value(h, x, y, LossKind::SoftmaxCe) == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("loss argument errors") {
  HeadAssembly h;
  h.space = HeadSpace::Backbone;
  h.projection = Eigen::MatrixXd::Identity(2, 2);
  h.weight = Eigen::MatrixXd::Identity(2, 2);
  h.bias = Eigen::VectorXd::Zero(2);
  LabelSet y;
  y.classes = {5};
  CHECK_THROWS_AS(loss_value(h, Eigen::MatrixXd::Ones(1, 2), y, LossKind::SoftmaxCe), std::out_of_range);
  LabelSet empty;
  CHECK_THROWS_AS(loss_value(h, Eigen::MatrixXd::Zero(0, 2), empty, LossKind::SoftmaxCe), std::invalid_argument);
  CHECK(default_loss(TaskKind::Multilabel) == LossKind::BinaryCe);
  CHECK(default_loss(TaskKind::Binary) == LossKind::SoftmaxCe);
}

TEST_CASE("optimizer step examples") {
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::Sgd;

  SUBCASE("zero gradient without decay leaves params unchanged") {
    for (auto kind : {OptimizerKind::Sgd, OptimizerKind::SgdMomentum, OptimizerKind::AdamW}) {
      cfg.optimizer = kind;
      cfg.weight_decay = 0.0;
      std::vector<double> p{1.5, -2.0, 0.25};
      const std::vector<double> g(3, 0.0);
      OptimizerState st;
      std::vector<std::span<double>> ps{p};
      std::vector<std::span<const double>> gs{g};
      for (int i = 0; i < 3; ++i) optimizer_step(st, ps, gs, cfg, 0.1);
      CHECK(p == std::vector<double>{1.5, -2.0, 0.25});
    }
  }

  SUBCASE("decoupled decay with zero gradient") {
    cfg.weight_decay = 0.1;
    std::vector<double> p{2.0, -4.0};
    const std::vector<double> g(2, 0.0);
    OptimizerState st;
    std::vector<std::span<double>> ps{p};
    std::vector<std::span<const double>> gs{g};
    optimizer_step(st, ps, gs, cfg, 0.5);
    CHECK(p[0] == 2.0 * (1.0 - 0.5 * 0.1));
    CHECK(p[1] == -4.0 * (1.0 - 0.5 * 0.1));
    CHECK(p[0] == doctest::Approx(1.9).epsilon(1e-15));

    for (auto kind : {OptimizerKind::Sgd, OptimizerKind::SgdMomentum, OptimizerKind::AdamW}) {
      cfg.optimizer = kind;
      cfg.weight_decay = 0.05;
      std::vector<double> q{3.0};
      std::vector<std::span<double>> qs{q};
      std::vector<std::span<const double>> zs{std::span<const double>(g.data(), 1)};
      OptimizerState s2;
      double expected = 3.0;
      for (int n = 0; n < 25; ++n) {
        optimizer_step(s2, qs, zs, cfg, 0.2);
        expected *= 1.0 - 0.2 * 0.05;
      }
      CHECK(q[0] == expected);
      CHECK(q[0] == doctest::Approx(3.0 * std::pow(0.99, 25)).epsilon(1e-12));
    }
  }

  SUBCASE("one sgd step on a quadratic") {
    cfg.weight_decay = 0.0;
    std::vector<double> w{0.0};
    const std::vector<double> g{w[0] - 3.0};
    OptimizerState st;
    std::vector<std::span<double>> ps{w};
    std::vector<std::span<const double>> gs{g};
    optimizer_step(st, ps, gs, cfg, 0.1);
    CHECK(w[0] == doctest::Approx(0.3).epsilon(1e-15));
  }

  SUBCASE("momentum accumulates") {
    cfg.optimizer = OptimizerKind::SgdMomentum;
    cfg.weight_decay = 0.0;
    std::vector<double> w{0.0};
    const std::vector<double> g{1.0};
    OptimizerState st;
    std::vector<std::span<double>> ps{w};
    std::vector<std::span<const double>> gs{g};
    optimizer_step(st, ps, gs, cfg, 0.1);
    optimizer_step(st, ps, gs, cfg, 0.1);
    CHECK(w[0] == doctest::Approx(-0.1 - 0.1 * 1.9).epsilon(1e-14));
  }

  SUBCASE("adam first step moves by the learning rate") {
    cfg.optimizer = OptimizerKind::AdamW;
    cfg.weight_decay = 0.0;
    std::vector<double> w{1.0, 1.0};
    const std::vector<double> g{4.0, -0.01};
    OptimizerState st;
    std::vector<std::span<double>> ps{w};
    std::vector<std::span<const double>> gs{g};
    optimizer_step(st, ps, gs, cfg, 0.01);
    CHECK(w[0] == doctest::Approx(0.99).epsilon(1e-8));
    CHECK(w[1] == doctest::Approx(1.01).epsilon(1e-6));
  }
}

TEST_CASE("non-finite gradients are rejected without touching params") {
  TrainConfig cfg;
  for (double bad : {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::infinity()}) {
    std::vector<double> p{1.0, 2.0};
    const std::vector<double> g{0.5, bad};
    OptimizerState st;
    std::vector<std::span<double>> ps{p};
    std::vector<std::span<const double>> gs{g};
    CHECK_THROWS_AS(optimizer_step(st, ps, gs, cfg, 0.1), NonFiniteGradient);
    CHECK(p == std::vector<double>{1.0, 2.0});
    CHECK(st.steps == 0);
  }
}

TEST_CASE("updates are deterministic") {
  Rng rng(9);
  auto c = testing::random_grad_case(FeaturePath::TrainAdaptor, rng);
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  auto run = [&] {
    auto h = c.head;
    OptimizerState st;
    for (int i = 0; i < 5; ++i) {
      const auto lg = loss_and_grad(h, c.features, c.labels, c.loss);
      optimizer_step(st, h, lg.grads, cfg, cfg.learning_rate);
    }
    return h;
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.weight == b.weight);
  CHECK(a.adaptor->hidden_weight == b.adaptor->hidden_weight);
  CHECK(a.adaptor->output_weight == b.adaptor->output_weight);
}

TEST_CASE("config checks") {
  TrainConfig c;
  CHECK_NOTHROW(check_config(c));
  c.learning_rate = 0.0;
  CHECK_THROWS(check_config(c));
  c = {};
  c.weight_decay = -1.0;
  CHECK_THROWS(check_config(c));
  c = {};
  c.batch_size = 0;
  CHECK_THROWS(check_config(c));
  c = {};
  c.plateau.patience = 9;
  CHECK_THROWS(check_config(c));
  CHECK(parse_optimizer_kind("sgd-momentum") == OptimizerKind::SgdMomentum);
  CHECK(parse_control_kind("plateau") == ControlKind::Plateau);
  CHECK_THROWS(parse_control_kind("cosine"));
}

TEST_CASE("plateau: three flat epochs after the first decay the rate") {
  auto s = plateau_start(0.1);
  for (int i = 0; i < 3; ++i) {
    s = plateau_step(s, 0.5);
    CHECK(s.learning_rate == 0.1);
  }
  s = plateau_step(s, 0.5);
  CHECK(s.learning_rate == doctest::Approx(0.01).epsilon(1e-15));
  CHECK_FALSE(s.terminated);
}

TEST_CASE("plateau: strictly increasing trace never decays") {
  auto s = plateau_start(0.1);
  for (int i = 0; i < 50; ++i) s = plateau_step(s, 0.01 * i);
  CHECK(s.learning_rate == 0.1);
  CHECK_FALSE(s.terminated);
  CHECK(s.best_epoch == 49u);
}

TEST_CASE("plateau: nine flat epochs terminate after two decays") {
  auto s = plateau_start(1.0);
  s = plateau_step(s, 0.7);
  for (int flat = 1; flat <= 9; ++flat) {
    REQUIRE_FALSE(s.terminated);
    s = plateau_step(s, 0.7);
    if (flat < 9) CHECK_FALSE(s.terminated);
  }
  CHECK(s.terminated);
  CHECK(s.learning_rate == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(s.best_epoch == 0u);
  CHECK_THROWS_AS(plateau_step(s, 0.9), std::logic_error);
}

TEST_CASE("plateau rejects non-finite metrics") {
  CHECK_THROWS(plateau_step(plateau_start(0.1), std::nan("")));
}

TEST_CASE("plateau lr sequence matches a hand simulation on random traces") {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> trace;
    const auto len = 1 + rng.below(40);
    const int levels = 1 + static_cast<int>(rng.below(4));
    for (std::size_t i = 0; i < len; ++i) trace.push_back(static_cast<double>(rng.below(levels)) / levels);
    PlateauParams p;
    if (trial % 2) {
      p.patience = 1 + static_cast<int>(rng.below(4));
      p.terminate = p.patience + 1 + static_cast<int>(rng.below(8));
      p.factor = 0.5;
    }
    const auto expected = oracle::simulate_plateau(trace, 0.1, p.patience, p.factor, p.terminate);
    auto s = plateau_start(0.1);
    std::vector<double> lrs;
    long stopped = -1;
    for (std::size_t t = 0; t < trace.size(); ++t) {
      const double before = s.learning_rate;
      s = plateau_step(s, trace[t], p);
      CHECK(s.learning_rate <= before);
      lrs.push_back(s.learning_rate);
      if (s.terminated) {
        stopped = static_cast<long>(t);
        break;
      }
    }
    CAPTURE(trial);
    CHECK(stopped == expected.terminated_at);
    REQUIRE(lrs.size() == expected.lr_after_step.size());
    for (std::size_t i = 0; i < lrs.size(); ++i) CHECK(lrs[i] == doctest::Approx(expected.lr_after_step[i]).epsilon(1e-12));
  }
}
