#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <vector>

#include <nlohmann/json.hpp>

#include "crdnn/channel_sim.hpp"
#include "crdnn/error.hpp"
#include "crdnn/mlp.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace crdnn;

namespace {

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::io_failure;
}

MlpModel linear_model(double w0, double bias = 0.0) {
  MlpModel m = init_model({3, 1}, 1);
  m.weights[0] << w0, 0.0, 0.0;
  m.biases[0] << bias;
  return m;
}

std::vector<ChannelRealization> inputs(std::size_t n, std::uint64_t seed) {
  return sample_ensemble({1.0, 0.5, 0.5, seed}, n);
}

Dataset labelled(std::size_t n, std::uint64_t seed) {
  return generate_dataset({1.0, 0.5, 0.5, seed}, n, {}, PolicyKind::se, {});
}

}  // namespace

TEST_CASE("init_model") {
  const auto a = init_model(kDefaultDims, 7);
  const auto b = init_model(kDefaultDims, 7);
  CHECK(a.checksum() == b.checksum());
  CHECK(a.checksum() != init_model(kDefaultDims, 8).checksum());
  CHECK(a.parameter_count() == 3 * 200 + 200 + 200 * 200 + 200 + 200 * 200 + 200 + 200 + 1);
  CHECK_FALSE(a.input_transform.has_value());
  for (std::size_t l = 0; l < a.layer_count(); ++l) {
    CHECK(a.biases[l].isZero());
    if (a.weights[l].size() < 200) continue;
    const double mean = a.weights[l].mean();
    const double var = (a.weights[l].array() - mean).square().mean();
    const double expected = 2.0 / a.dims[l];
    CAPTURE(l);
    CHECK(std::abs(var - expected) < 0.2 * expected);
  }
  CHECK(code_of([] { init_model({2, 5, 1}, 1); }) == ErrorCode::shape_mismatch);
  CHECK(code_of([] { init_model({3, 5, 2}, 1); }) == ErrorCode::shape_mismatch);
  CHECK(code_of([] { init_model({3, 0, 1}, 1); }) == ErrorCode::shape_mismatch);
  CHECK(code_of([] { init_model({3}, 1); }) == ErrorCode::shape_mismatch);
}

TEST_CASE("forward examples") {
  auto zero = init_model({3, 1}, 1);
  zero.weights[0].setZero();
  auto deep_zero = init_model({3, 7, 5, 1}, 1);
  for (auto& w : deep_zero.weights) w.setZero();
  rng::Stream s(2);
  for (int i = 0; i < 100; ++i) {
    const auto ch = testing::random_channel(s);
    CHECK(forward(zero, ch) == 0.0);
    CHECK(forward(deep_zero, ch) == 0.0);
  }
  CHECK(forward(linear_model(1.0), ChannelRealization{0.5, 9.0, 4.0}) == 0.5);
  CHECK(forward(linear_model(1.0), std::array<double, 3>{0.5, 9.0, 4.0}) == 0.5);
  CHECK(code_of([&] { forward(zero, std::array<double, 3>{std::nan(""), 0, 0}); }) ==
        ErrorCode::invalid_argument);
}

TEST_CASE("forward matches a plain matrix walk and is never negative") {
  rng::Stream s(3);
  for (int i = 0; i < 1000; ++i) {
    auto m = init_model({3, 1 + static_cast<int>(s.next_below(12)), 1 + static_cast<int>(s.next_below(12)), 1},
                        s.next_u64());
    for (auto& b : m.biases) {
      for (Eigen::Index k = 0; k < b.size(); ++k) b(k) = 0.3 * s.next_normal();
    }
    if (i % 2 == 1) {
      InputTransform t;
      for (int k = 0; k < 3; ++k) {
        t.scale[k] = 0.5 + s.next_uniform();
        t.shift[k] = s.next_normal();
      }
      m.input_transform = t;
    }
    const auto ch = testing::random_channel(s, 3.0);
    const double y = forward(m, ch);
    CHECK(y >= 0.0);
    CHECK(y == doctest::Approx(testing::naive_forward(m, ch)).epsilon(1e-12).scale(1e-12));
  }
}

TEST_CASE("forward_batch agrees with per-sample forward") {
  const auto m = init_model({3, 20, 20, 1}, 4);
  const auto xs = inputs(2500, 4);
  const auto ys = forward_batch(m, xs);
  REQUIRE(ys.size() == xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    CHECK(ys[i] == doctest::Approx(forward(m, xs[i])).epsilon(1e-12).scale(1e-12));
  }
}

TEST_CASE("batch_loss examples") {
  const auto m = linear_model(1.0);
  const std::vector<ChannelRealization> one = {{1.0, 0.0, 0.0}};
  CHECK(batch_loss(m, one, std::vector<double>{1.0}) == 0.0);
  CHECK(batch_loss(m, one, std::vector<double>{0.0}) == 0.5);
  const std::vector<ChannelRealization> two = {{1.0, 0.0, 0.0}, {3.0, 0.0, 0.0}};
  CHECK(batch_loss(m, two, std::vector<double>{0.0, 1.0}) == 1.25);
  CHECK(code_of([&] { batch_loss(m, two, std::vector<double>{0.0}); }) == ErrorCode::shape_mismatch);
  CHECK(code_of([&] { batch_loss(m, {}, std::vector<double>{}); }) == ErrorCode::invalid_argument);
}

TEST_CASE("batch_loss is invariant under permutation of the batch") {
  rng::Stream s(6);
  const auto m = init_model({3, 10, 10, 1}, 6);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 1 + s.next_below(16);
    std::vector<ChannelRealization> xs;
    std::vector<double> ts;
    for (std::size_t k = 0; k < n; ++k) {
      xs.push_back(testing::random_channel(s));
      ts.push_back(s.next_uniform());
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t k = n; k > 1; --k) std::swap(order[k - 1], order[s.next_below(k)]);
    std::vector<ChannelRealization> px;
    std::vector<double> pt;
    for (auto k : order) {
      px.push_back(xs[k]);
      pt.push_back(ts[k]);
    }
    CHECK(batch_loss(m, px, pt) == doctest::Approx(batch_loss(m, xs, ts)).epsilon(1e-13));
  }
}

TEST_CASE("backward matches central differences on small nets") {
  rng::Stream s(8);
  int checked = 0;
  while (checked < 20) {
    auto m = init_model({3, 8, 8, 1}, s.next_u64());
    for (auto& b : m.biases) {
      for (Eigen::Index k = 0; k < b.size(); ++k) b(k) = 0.1 * s.next_normal();
    }
    std::vector<ChannelRealization> xs;
    std::vector<double> ts;
    for (int k = 0; k < 5; ++k) {
      xs.push_back(testing::random_channel(s));
      ts.push_back(s.next_uniform());
    }
    const auto [margin, active] = testing::kink_margin(m, xs);
    if (margin < 1e-4 || !active) continue;
    CHECK(testing::max_gradient_error(m, xs, ts) < 1e-5);
    ++checked;
  }
}

TEST_CASE("backward special cases") {
  // Targets equal predictions: the loss is at its minimum on this batch.
  const auto m = init_model({3, 6, 1}, 9);
  const auto xs = inputs(8, 9);
  const auto ys = forward_batch(m, xs);
  const auto g = backward(m, xs, ys);
  for (std::size_t l = 0; l < g.weights.size(); ++l) {
    CHECK(g.weights[l].isZero());
    CHECK(g.biases[l].isZero());
  }

  // Hidden unit 0 is dead for positive inputs: all incoming weights negative.
  auto dead = init_model({3, 4, 1}, 10);
  dead.weights[0].row(0) << -1.0, -1.0, -1.0;
  dead.biases[0](0) = -0.1;
  const auto gd = backward(dead, xs, std::vector<double>(xs.size(), 5.0));
  CHECK(gd.weights[0].row(0).isZero());
  CHECK(gd.biases[0](0) == 0.0);
  CHECK(gd.weights[1](0, 0) == 0.0);
}

TEST_CASE("sgd_step") {
  auto m = init_model({3, 4, 1}, 11);
  const auto before = m.checksum();
  Gradients zero{{Eigen::MatrixXd::Zero(4, 3), Eigen::MatrixXd::Zero(1, 4)},
                 {Eigen::VectorXd::Zero(4), Eigen::VectorXd::Zero(1)}};
  sgd_step(m, zero, 0.5);
  CHECK(m.checksum() == before);
  const auto g = backward(m, inputs(4, 1), std::vector<double>{1, 2, 3, 4});
  sgd_step(m, g, 0.0);
  CHECK(m.checksum() == before);

  auto single = linear_model(1.0);
  Gradients two{{Eigen::MatrixXd::Constant(1, 3, 2.0)}, {Eigen::VectorXd::Zero(1)}};
  sgd_step(single, two, 0.1);
  CHECK(single.weights[0](0, 0) == doctest::Approx(0.8).epsilon(1e-15));

  Gradients wrong{{Eigen::MatrixXd::Zero(4, 4), Eigen::MatrixXd::Zero(1, 4)},
                  {Eigen::VectorXd::Zero(4), Eigen::VectorXd::Zero(1)}};
  CHECK(code_of([&] { sgd_step(m, wrong, 0.1); }) == ErrorCode::shape_mismatch);
  CHECK(code_of([&] { sgd_step(m, Gradients{}, 0.1); }) == ErrorCode::shape_mismatch);
}

TEST_CASE("a small step lowers the loss of a single example") {
  rng::Stream s(12);
  int checked = 0;
  while (checked < 1000) {
    auto m = init_model({3, 8, 8, 1}, s.next_u64());
    const std::vector<ChannelRealization> x = {testing::random_channel(s)};
    const std::vector<double> t = {2.0 * s.next_uniform()};
    const double before = batch_loss(m, x, t);
    const auto g = backward(m, x, t);
    double norm = 0.0;
    for (const auto& w : g.weights) norm += w.squaredNorm();
    if (norm < 1e-12) continue;  // output unit inactive, nothing to learn from this example
    sgd_step(m, g, 1e-4);
    CHECK(batch_loss(m, x, t) < before);
    ++checked;
  }
}

TEST_CASE("train learns the zero map exactly") {
  Dataset ds;
  ds.inputs = inputs(2000, 13);
  ds.targets.assign(ds.size(), 0.0);
  Dataset holdout;
  holdout.inputs = inputs(300, 14);
  holdout.targets.assign(holdout.size(), 0.0);
  TrainConfig cfg;
  cfg.epochs = 20;
  // a step large enough to push the output unit below zero everywhere; small
  // steps only approach the zero map geometrically
  cfg.learning_rate = 0.2;
  cfg.batch_size = 32;
  const auto r = train(init_model({3, 16, 16, 1}, 13), ds, cfg, &holdout);
  REQUIRE(r.history.final_holdout_mse.has_value());
  CHECK(*r.history.final_holdout_mse <= 1e-6);
}

TEST_CASE("train is deterministic and records a well-formed history") {
  const auto ds = labelled(3000, 15);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 64;
  cfg.holdout_every = 10;
  const auto holdout = labelled(200, 16);
  const auto a = train(init_model({3, 12, 12, 1}, 15), ds, cfg, &holdout);
  const auto b = train(init_model({3, 12, 12, 1}, 15), ds, cfg, &holdout);
  CHECK(a.history.final_checksum == b.history.final_checksum);
  CHECK(a.model.checksum() == a.history.final_checksum);
  const long batches = (3000 + 63) / 64;
  CHECK(a.history.steps == 3 * batches);
  REQUIRE(a.history.points.size() == static_cast<std::size_t>(a.history.steps));
  for (std::size_t i = 1; i < a.history.points.size(); ++i) {
    CHECK(a.history.points[i].step > a.history.points[i - 1].step);
  }
  CHECK(a.history.points[9].holdout_mse.has_value());
  CHECK_FALSE(a.history.points[8].holdout_mse.has_value());
  CHECK(a.model.input_transform.has_value());

  cfg.shuffle_seed = 99;
  const auto c = train(init_model({3, 12, 12, 1}, 15), ds, cfg, &holdout);
  CHECK(c.history.final_checksum != a.history.final_checksum);
}

TEST_CASE("the target scale is folded back into the output layer") {
  const auto ds = labelled(2000, 17);
  TrainConfig cfg;
  cfg.epochs = 1;
  const auto r = train(init_model({3, 8, 1}, 17), ds, cfg);
  CHECK(r.history.target_scale > 1.0);
  // Recorded sample targets are in Watts, not scaled units.
  const auto& p = r.history.points.front();
  double nearest = 1e300;
  for (double t : ds.targets) nearest = std::min(nearest, std::abs(t - p.sample_target));
  CHECK(nearest <= 1e-15);
}

TEST_CASE("train errors") {
  Dataset empty;
  CHECK(code_of([&] { train(init_model({3, 4, 1}, 1), empty, {}); }) == ErrorCode::invalid_argument);
  TrainConfig bad;
  bad.batch_size = 0;
  const auto ds = labelled(100, 18);
  CHECK(code_of([&] { train(init_model({3, 4, 1}, 1), ds, bad); }) == ErrorCode::invalid_argument);

  Dataset huge = ds;
  for (double& t : huge.targets) t = 1e200;
  TrainConfig wild;
  wild.scale_targets = false;
  wild.learning_rate = 1e6;
  CHECK(code_of([&] { train(init_model({3, 4, 1}, 1), huge, wild); }) == ErrorCode::training_diverged);
}

TEST_CASE("model files round-trip exactly") {
  testing::TempDir dir("model");
  rng::Stream s(19);
  for (int i = 0; i < 1000; ++i) {
    auto m = init_model({3, 1 + static_cast<int>(s.next_below(6)), 1}, s.next_u64());
    for (auto& b : m.biases) b.setConstant(s.next_normal());
    if (i % 3 == 0) {
      InputTransform t;
      t.log = i % 2 == 0;
      t.scale = {s.next_uniform(), s.next_uniform(), s.next_uniform()};
      t.shift = {s.next_normal(), s.next_normal(), s.next_normal()};
      m.input_transform = t;
    }
    if (i % 5 == 0) {
      TrainingMeta meta;
      meta.init_seed = s.next_u64();
      meta.dataset_checksum = s.next_u64();
      meta.config_checksum = s.next_u64();
      meta.params = testing::random_params(s);
      meta.kind = PolicyKind::ee;
      m.training_meta = meta;
    }
    save_model(m, dir / "m.json");
    const auto back = load_model(dir / "m.json");
    CHECK(back.checksum() == m.checksum());
    CHECK(back.input_transform == m.input_transform);
    CHECK(back.training_meta == m.training_meta);
  }
}

TEST_CASE("loaded model predicts identically") {
  testing::TempDir dir("model2");
  const auto ds = labelled(1000, 20);
  TrainConfig cfg;
  cfg.epochs = 1;
  const auto r = train(init_model({3, 16, 16, 1}, 20), ds, cfg);
  save_model(r.model, dir / "m.json");
  const auto back = load_model(dir / "m.json", {3, 16, 16, 1});
  const auto xs = inputs(1000, 21);
  CHECK(forward_batch(back, xs) == forward_batch(r.model, xs));
  for (std::size_t i = 0; i < 50; ++i) CHECK(forward(back, xs[i]) == forward(r.model, xs[i]));

  nlohmann::json j;
  std::ifstream(dir / "m.json") >> j;
  CHECK(j.at("activation") == "relu_all");
  CHECK(j.at("format_version") == kModelFormatVersion);
}

TEST_CASE("malformed model files are rejected") {
  testing::TempDir dir("model3");
  const auto m = init_model({3, 4, 1}, 22);
  save_model(m, dir / "m.json");
  CHECK(code_of([&] { load_model(dir / "m.json", {3, 5, 1}); }) == ErrorCode::shape_mismatch);

  nlohmann::json j;
  std::ifstream(dir / "m.json") >> j;
  auto rewrite = [&](const nlohmann::json& v) { std::ofstream(dir / "bad.json") << v.dump(); };

  auto k = j;
  k["dims"] = {3, 5, 1};
  rewrite(k);
  CHECK(code_of([&] { load_model(dir / "bad.json"); }) == ErrorCode::shape_mismatch);
  k = j;
  k["dims"] = "three";
  rewrite(k);
  CHECK(code_of([&] { load_model(dir / "bad.json"); }) == ErrorCode::shape_mismatch);
  k = j;
  k["format_version"] = 99;
  rewrite(k);
  CHECK(code_of([&] { load_model(dir / "bad.json"); }) == ErrorCode::format_mismatch);
  k = j;
  k["activation"] = "sigmoid";
  rewrite(k);
  CHECK(code_of([&] { load_model(dir / "bad.json"); }) == ErrorCode::format_mismatch);
  std::ofstream(dir / "bad.json") << "{ not json";
  CHECK(code_of([&] { load_model(dir / "bad.json"); }) == ErrorCode::format_mismatch);
  CHECK(code_of([&] { load_model(dir / "nope.json"); }) == ErrorCode::io_failure);
}
