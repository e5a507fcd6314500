#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "otdr/error.hpp"
#include "otdr/model.hpp"
#include "gradcheck.hpp"

using namespace otdr;
using namespace otdr::model;

TEST_CASE("parameter count follows from the layer sizes") {
  ModelConfig cfg;
  MultiTaskNet net(cfg);
  // conv: cin*cout*k + cout per layer, 35 samples kept by 'same' padding
  const std::size_t conv = (1 * 64 * 3 + 64) + (64 * 32 * 3 + 32) +
                           (32 * 32 * 3 + 32) + (32 * 16 * 3 + 16);
  const std::size_t flat = 16 * (35 / 2);
  const std::size_t head = (flat * 16 + 16) + (16 + 1);
  CHECK(net.parameter_count() == conv + 3 * head);
  CHECK(net.parameter_count() == 24243);
}

TEST_CASE("total loss: masking and weighting") {
  HeadOutputs out;
  out.logit = {0.0, 2.0, -1.0, 0.5};
  out.position = {0.9, 0.2, -3.0, 0.4};
  out.reflectance = {5.0, 0.6, 7.0, 0.1};
  Labels l;
  l.cls = {0, 1, 0, 1};
  l.position = {0.0, 0.5, 0.0, 0.4};
  l.reflectance = {0.0, 0.2, 0.0, 0.3};

  const std::array<double, 3> lam{0.5, 2.0, 3.0};
  LossGrads g;
  const auto lb = total_loss(out, l, lam, &g);
  double bce = 0.0;
  for (std::size_t i = 0; i < 4; ++i) bce += nn::bce(nn::sigmoid(out.logit[i]), l.cls[i]);
  bce /= 4.0;
  const double mp = (0.09 + 0.0) / 2.0;
  const double mr = (0.16 + 0.04) / 2.0;
  CHECK(lb.bce == doctest::Approx(bce));
  CHECK(lb.mse_position == doctest::Approx(mp));
  CHECK(lb.mse_reflectance == doctest::Approx(mr));
  CHECK(lb.total == doctest::Approx(0.5 * bce + 2.0 * mp + 3.0 * mr));
  CHECK(lb.n == 4);
  CHECK(lb.n_pos == 2);

  // regression outputs of negatives do not matter
  CHECK(g.position[0] == 0.0);
  CHECK(g.reflectance[2] == 0.0);
  auto moved = out;
  moved.position[0] = 100.0;
  moved.reflectance[2] = -100.0;
  CHECK(total_loss(moved, l, lam).total == lb.total);

  // without positives the regression terms vanish
  Labels neg = l;
  neg.cls = {0, 0, 0, 0};
  const auto ln = total_loss(out, neg, lam);
  CHECK(ln.mse_position == 0.0);
  CHECK(ln.n_pos == 0);
}

TEST_CASE("total loss: gradients agree with finite differences") {
  std::mt19937_64 rng(4);
  HeadOutputs out;
  out.logit = testing::random_vector(6, rng);
  out.position = testing::random_vector(6, rng);
  out.reflectance = testing::random_vector(6, rng);
  Labels l;
  l.cls = {1, 0, 1, 1, 0, 0};
  l.position = testing::random_vector(6, rng);
  l.reflectance = testing::random_vector(6, rng);
  const std::array<double, 3> lam{0.33, 0.33, 0.33};
  LossGrads g;
  total_loss(out, l, lam, &g);
  auto f = [&] { return total_loss(out, l, lam).total; };
  CHECK(testing::relative_error(g.logit, testing::numeric_gradient(out.logit, f)) < 1e-6);
  CHECK(testing::relative_error(g.position, testing::numeric_gradient(out.position, f)) < 1e-6);
  CHECK(testing::relative_error(g.reflectance, testing::numeric_gradient(out.reflectance, f)) <
        1e-6);
}

TEST_CASE("full model gradient check on 20 networks") {
  for (std::uint64_t s = 1; s <= 20; ++s) {
    CAPTURE(s);
    CHECK(testing::model_gradient_error(s, 60) < 1e-4);
  }
}

TEST_CASE("config validation and JSON round trip") {
  ModelConfig cfg;
  cfg.dropout = 0.1;
  cfg.lr_decay = 0.9;
  const auto back = model_config_from_json(to_json(cfg));
  CHECK(back.dropout == 0.1);
  CHECK(back.lr_decay == 0.9);
  CHECK(back.conv_filters == cfg.conv_filters);

  ModelConfig bad;
  bad.lr_decay = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = {};
  bad.dropout = 1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = {};
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("regression targets are standardised and decode back to samples and dB") {
  ModelConfig cfg;
  MultiTaskNet net(cfg);
  HeadOutputs out;
  out.logit = {0.0};
  out.position = {0.0};
  out.reflectance = {1.0};
  const auto p = net.decode(out, 0);
  CHECK(p.p_event == 0.5);
  CHECK(p.position_idx_hat == doctest::Approx(17.0));
  CHECK(p.reflectance_db_hat == doctest::Approx(-25.0 + 40.0 / std::sqrt(12.0)));
  // range ends of a unit-variance uniform sit at +-sqrt(3)
  CHECK(net.normalize_position(34.0) == doctest::Approx(std::sqrt(3.0)));
  CHECK(net.normalize_reflectance(-45.0) == doctest::Approx(-std::sqrt(3.0)));

  // mean and variance over a fine uniform grid
  double m = 0.0, v = 0.0;
  const int n = 4001;
  for (int i = 0; i < n; ++i) {
    const double t = net.normalize_reflectance(-45.0 + 40.0 * i / (n - 1));
    m += t / n;
    v += t * t / n;
  }
  CHECK(m == doctest::Approx(0.0).scale(1.0));
  CHECK(v == doctest::Approx(1.0).epsilon(1e-3));
  for (double db : {-45.0, -31.7, -5.0})
    CHECK(net.denormalize_reflectance(net.normalize_reflectance(db)) == doctest::Approx(db));
  CHECK(predict_threshold(0.5, 0.5) == 1);
  CHECK(predict_threshold(0.49, 0.5) == 0);
}

TEST_CASE("training: deterministic, reduces validation loss, checkpoint restores") {
  sim::SimConfig sc;
  const auto ds = data::build_dataset(sc, 60);
  ModelConfig cfg;
  cfg.max_epochs = 3;
  cfg.batch_size = 32;

  const auto a = train(ds, cfg);
  const auto b = train(ds, cfg);
  REQUIRE(a.history.size() == 3);
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].train.total == b.history[i].train.total);
    CHECK(a.history[i].val.total == b.history[i].val.total);
  }
  double best = a.history.front().val.total;
  for (const auto& r : a.history) best = std::min(best, r.val.total);
  CHECK(best < a.initial_val.total);

  const auto path = std::filesystem::temp_directory_path() / "otdr_test_model.ckpt";
  a.net->save(path);
  MultiTaskNet restored(cfg);
  restored.load(path);
  const auto pa = a.net->predict(ds.sequences);
  const auto pb = restored.predict(ds.sequences);
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].logit == pb[i].logit);
  CHECK(evaluate_loss(restored, ds, data::Split::Val).total ==
        doctest::Approx(a.history[a.best_epoch - 1].val.total));

  ModelConfig other = cfg;
  other.head_hidden = 8;
  MultiTaskNet mismatch(other);
  CHECK_THROWS_AS(mismatch.load(path), Error);
  std::filesystem::remove(path);
}

TEST_CASE("training: divergence is reported as a numeric error") {
  sim::SimConfig sc;
  const auto ds = data::build_dataset(sc, 20);
  ModelConfig cfg;
  cfg.max_epochs = 5;
  cfg.lr = 1e150;
  cfg.lr_decay = 1.0;
  try {
    train(ds, cfg);
    FAIL("training with an absurd learning rate did not diverge");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Numeric);
  }
}
