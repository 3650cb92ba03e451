#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ruleforge/config.hpp"
#include "ruleforge/errors.hpp"
#include "tiny_world.hpp"

using namespace ruleforge;
using ruleforge::testing::tiny_setup;
using ruleforge::testing::tiny_train_config;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<double> logic_snapshot(Model& m) {
  std::vector<double> out;
  for (auto& t : m.tensors())
    if (t.name.starts_with("logic.")) out.insert(out.end(), t.mat->v.begin(), t.mat->v.end());
  return out;
}

}  // namespace

TEST_CASE("total loss is linear in each component") {
  LossParts p{0.7, 0.2, 1.3, 0.05, 400.0};
  LossWeights only_task{0, 0, 0, 0};
  CHECK(total_loss(p, only_task) == 0.7);
  const LossWeights w;
  CHECK(total_loss(p, w) == doctest::Approx(0.7 + 0.2 + 0.13 + 0.05 + 4e-4));
  LossParts q = p;
  q.align *= 2;
  CHECK(total_loss(q, w) - total_loss(p, w) == doctest::Approx(w.beta * p.align));
  CHECK(w.alpha == 1.0);
  CHECK(w.beta == 0.1);
  CHECK(w.gamma == 1.0);
  CHECK(w.lambda == 1e-6);
}

TEST_CASE("AdamW single steps") {
  AdamHyper h;
  h.weight_decay = 0.0;
  Mat p(1, 1, 0.3), g(1, 1, 1.0);
  AdamState s;
  adamw_step({&p}, {&g}, s, 0.1, h);
  // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
  CHECK(p(0, 0) - 0.3 == doctest::Approx(-0.1 / (1.0 + h.eps)).epsilon(1e-12));

  Mat q(2, 2, 0.5), zero(2, 2);
  AdamState s2;
  adamw_step({&q}, {&zero}, s2, 0.1, h);
  CHECK(q.v == std::vector<double>(4, 0.5));

  AdamHyper decay;
  Mat r(1, 1, 2.0), zero1(1, 1);
  AdamState s3;
  adamw_step({&r}, {&zero1}, s3, 0.1, decay);
  CHECK(r(0, 0) == doctest::Approx(2.0 * (1 - 0.1 * decay.weight_decay)));

  Mat bad(1, 1, std::nan(""));
  AdamState s4;
  CHECK_THROWS_AS(adamw_step({&r}, {&bad}, s4, 0.1, h), DivergenceError);
}

TEST_CASE("global norm clipping") {
  Mat a(1, 2), b(1, 1);
  a.v = {3.0, 0.0};
  b.v = {4.0};
  CHECK(clip_global_norm({&a, &b}, 1.0) == doctest::Approx(5.0));
  CHECK(global_norm({&a, &b}) == doctest::Approx(1.0));
  CHECK(a(0, 0) == doctest::Approx(0.6));
  CHECK(clip_global_norm({&a, &b}, 10.0) == doctest::Approx(1.0));
  CHECK(a(0, 0) == doctest::Approx(0.6));
}

TEST_CASE("warmup schedule and cosine decay") {
  const TrainConfig c;
  CHECK(!warmup_schedule(3, c).logic_trainable);
  CHECK(!warmup_schedule(3, c).task_to_decoder);
  CHECK(warmup_schedule(6, c).task_to_decoder);
  CHECK(!warmup_schedule(15, c).logic_trainable);
  CHECK(warmup_schedule(16, c).logic_trainable);
  CHECK(warmup_schedule(1, c).encoder_trainable);
  CHECK(cosine_multiplier(1, 200) == 1.0);
  CHECK(cosine_multiplier(200, 200) < 1e-3);
  CHECK(cosine_multiplier(101, 200) == doctest::Approx(0.5));
  CHECK_THROWS_AS(warmup_schedule(0, c), ValidationError);
}

TEST_CASE("alignment loss examples") {
  Mat z(1, 3), t(1, 3);
  z.v = {1, 2, 3};
  t.v = {0.5, -1, 2};
  CHECK(align_loss(z, t, std::log(0.07)).loss == doctest::Approx(0.0));
  Mat z2(2, 2, 1.0), t2(2, 2, 1.0);
  CHECK(align_loss(z2, t2, std::log(0.07)).loss == doctest::Approx(std::log(2.0)));
  for (std::uint64_t s = 0; s < 3; ++s) CHECK(finite_diff_check("align", s) < 1e-6);
}

TEST_CASE("macro F1") {
  const std::vector<std::vector<std::uint8_t>> truth = {{1, 0, 0}, {1, 1, 0}};
  CHECK(macro_f1(truth, truth) == 1.0);
  const std::vector<std::vector<std::uint8_t>> pred = {{1, 0, 0}, {0, 1, 0}};
  // concept 0: tp 1, fn 1 -> 2/3; concept 1: 1; concept 2: empty -> 1.
  CHECK(macro_f1(truth, pred) == doctest::Approx((2.0 / 3.0 + 1 + 1) / 3));
}

TEST_CASE("training: freeze, clamp, clip, determinism") {
  const auto s = tiny_setup(0);
  const TrainConfig cfg = tiny_train_config(18);
  Model m0 = s.fresh_model(1);
  const std::vector<double> initial = logic_snapshot(m0);

  bool frozen_ok = true, range_ok = true, clip_ok = true;
  std::size_t steps = 0;
  TrainHooks hooks;
  hooks.after_epoch = [&](const EpochMetrics& e, const Model& m) {
    if (e.epoch <= cfg.logic_frozen_epochs)
      frozen_ok = frozen_ok && logic_snapshot(const_cast<Model&>(m)) == initial;
  };
  hooks.after_step = [&](const Model& m, double, double post) {
    ++steps;
    clip_ok = clip_ok && post <= cfg.clip_norm * (1 + 1e-12);
    for (const auto& L : m.logic.layers)
      for (const Mat* w : {&L.and_w, &L.or_w})
        for (double x : w->v) range_ok = range_ok && x >= 0.0 && x <= 1.0;
  };
  const TrainResult a = train(m0, s.train, s.test, cfg, LossWeights{}, 5, hooks);
  CHECK(frozen_ok);
  CHECK(range_ok);
  CHECK(clip_ok);
  CHECK(steps == 18 * 4);
  CHECK(!a.diverged);
  CHECK(a.history.size() == 18);
  for (const auto& e : a.history) CHECK(e.total == total_loss(e.loss, LossWeights{}));
  CHECK(logic_snapshot(const_cast<Model&>(a.model)) != initial);

  const TrainResult b = train(s.fresh_model(1), s.train, s.test, cfg, LossWeights{}, 5);
  REQUIRE(b.history.size() == a.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i)
    CHECK(metrics_to_json(a.history[i]).dump() == metrics_to_json(b.history[i]).dump());
}

TEST_CASE("two worker threads reproduce themselves") {
  const auto s = tiny_setup(1);
  TrainConfig cfg = tiny_train_config(3);
  cfg.threads = 2;
  const auto a = train(s.fresh_model(2), s.train, s.test, cfg, LossWeights{}, 3);
  const auto b = train(s.fresh_model(2), s.train, s.test, cfg, LossWeights{}, 3);
  CHECK(metrics_to_json(a.history.back()).dump() == metrics_to_json(b.history.back()).dump());
}

TEST_CASE("checkpoint round trip") {
  const auto s = tiny_setup(2);
  Model m = s.fresh_model(3);
  const auto dir = std::filesystem::temp_directory_path() / "ruleforge_test_ckpt";
  std::filesystem::remove_all(dir);
  save_checkpoint(dir, m, {Json{{"note", "test"}}, 9, 4});
  CheckpointMeta meta;
  Model back = load_checkpoint(dir, &meta);
  CHECK(meta.seed == 9);
  CHECK(meta.epoch == 4);
  CHECK(meta.config == Json{{"note", "test"}});
  auto ta = m.tensors(), tb = back.tensors();
  REQUIRE(ta.size() == tb.size());
  for (std::size_t i = 0; i < ta.size(); ++i) {
    CHECK(ta[i].name == tb[i].name);
    REQUIRE(ta[i].mat->size() == tb[i].mat->size());
    for (std::size_t k = 0; k < ta[i].mat->size(); ++k)
      CHECK(tb[i].mat->v[k] == static_cast<double>(static_cast<float>(ta[i].mat->v[k])));
  }
  // Saving the reloaded model reproduces the same bytes.
  const auto dir2 = dir / "again";
  save_checkpoint(dir2, back, meta);
  CHECK(slurp(dir / "checkpoint.bin") == slurp(dir2 / "checkpoint.bin"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("run config: defaults, overrides and unknown keys") {
  const RunConfig d = run_config_from_json(Json::object());
  CHECK(d.train.epochs == 200);
  CHECK(d.world.num_concepts == 20);
  const RunConfig o = run_config_from_json(Json{{"seed", 7}, {"train", {{"epochs", 3}}}});
  CHECK(o.seed == 7);
  CHECK(o.train.epochs == 3);
  CHECK(run_config_from_json(run_config_to_json(o)).train.epochs == 3);
  try {
    run_config_from_json(Json{{"world", {{"bogus", 1}}}});
    FAIL("expected rejection");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("config.world") != std::string::npos);
    CHECK(std::string(e.what()).find("bogus") != std::string::npos);
  }
  CHECK_THROWS_AS(run_config_from_json(Json{{"nope", 1}}), ValidationError);
}
