#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <limits>
#include <type_traits>

#include "faust/adapt.hpp"
#include "faust/experiments.hpp"
#include "faust/grad_check.hpp"

using namespace faust;
using T64 = Tensor<double>;
using M64 = Model<double>;

namespace {

struct Fixture {
  TaskData data;
  M64 source;
};

const Fixture& moons() {
  static const Fixture f = [] {
    TaskSpec t;
    t.n = 600;
    auto data = prepare_task(t, 21);
    auto source = pretrain_for_task<double>(data, PretrainConfig{}, 21);
    return Fixture{std::move(data), std::move(source)};
  }();
  return f;
}

AdaptConfig small_config() {
  AdaptConfig c;
  c.max_epochs = 2;
  c.seed = 5;
  return c;
}

bool same_report(const LossReport& a, const LossReport& b) {
  return std::memcmp(&a.inter, &b.inter, sizeof(double)) == 0 && std::memcmp(&a.intra, &b.intra, sizeof(double)) == 0 &&
         std::memcmp(&a.entropy, &b.entropy, sizeof(double)) == 0 &&
         std::memcmp(&a.epistemic, &b.epistemic, sizeof(double)) == 0 &&
         std::memcmp(&a.total, &b.total, sizeof(double)) == 0;
}

LossReport one_step(const M64& source, const AdaptConfig& cfg) {
  auto m = source.clone();
  m.set_head_trainable(false);
  Optimizer<double> opt(m.generator_parameters(), cfg.optim);
  const auto& target = moons().data.target;
  std::vector<std::size_t> ids(64);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  const std::vector<float> xs(target.samples.begin(), target.samples.begin() + 64 * 2);
  return adapt_step(m, opt, xs, ids, cfg, 0);
}

}  // namespace

TEST(AdaptConfig, Validation) {
  AdaptConfig c;
  EXPECT_NO_THROW(c.validate());
  c.weights.gamma = 2;
  EXPECT_THROW(c.validate(), ValueError);
  c = AdaptConfig{};
  c.weights.alpha = -1;
  EXPECT_THROW(c.validate(), ValueError);
  c = AdaptConfig{};
  c.views = 0;
  EXPECT_THROW(c.validate(), ValueError);
  c = AdaptConfig{};
  c.temperature = 0;
  EXPECT_THROW(c.validate(), ValueError);
}

TEST(AdaptConfig, JsonRoundTrip) {
  AdaptConfig c;
  c.weights = {1.0, 0.8, 0.2, 1};
  c.views = 4;
  c.optim.algorithm = Algorithm::sgd_momentum;
  c.augment.cutout_fraction = 0.3;
  c.augment.raster_invert = false;
  c.seed = 99;
  AdaptConfig d;
  merge_json(to_json(c), d);
  EXPECT_EQ(to_json(d), to_json(c));

  AdaptConfig partial;
  merge_json(nlohmann::json{{"alpha", 0.2}}, partial);
  EXPECT_EQ(partial.weights.alpha, 0.2);
  EXPECT_EQ(partial.weights.beta, AdaptConfig{}.weights.beta);
}

TEST(AlphaBetaGrid, FivePoints) {
  ASSERT_EQ(kAlphaBetaGrid.size(), 5u);
  for (const auto& [a, b] : kAlphaBetaGrid) EXPECT_NEAR(a + b, 1.0, 1e-15);
}

TEST(AdaptStep, RequiresFrozenHead) {
  auto m = moons().source.clone();
  Optimizer<double> opt(m.generator_parameters(), OptimConfig{});
  const std::vector<float> xs(8, 0.5f);
  const std::vector<std::size_t> ids{0, 1, 2, 3};
  EXPECT_THROW(adapt_step(m, opt, xs, ids, AdaptConfig{}, 0), Error);
}

TEST(AdaptStep, BatchSmallerThanKRejected) {
  auto m = moons().source.clone();
  m.set_head_trainable(false);
  Optimizer<double> opt(m.generator_parameters(), OptimConfig{});
  const std::vector<float> xs(2, 0.5f);
  const std::vector<std::size_t> ids{0};
  try {
    adapt_step(m, opt, xs, ids, AdaptConfig{}, 0);
    FAIL();
  } catch (const ValueError& e) {
    EXPECT_NE(std::string(e.what()).find("resample"), std::string::npos);
  }
}

TEST(AdaptStep, BitwiseReproducible) {
  for (int gamma : {0, 1}) {
    auto cfg = small_config();
    cfg.weights.gamma = gamma;
    EXPECT_TRUE(same_report(one_step(moons().source, cfg), one_step(moons().source, cfg)));
  }
}

TEST(AdaptStep, GammaZeroSkipsMonteCarlo) {
  auto cfg = small_config();
  cfg.weights.gamma = 0;
  const auto r0 = one_step(moons().source, cfg);
  EXPECT_EQ(r0.mc_passes, 0u);
  EXPECT_EQ(r0.epistemic, 0.0);
  cfg.weights.gamma = 1;
  const auto r1 = one_step(moons().source, cfg);
  EXPECT_EQ(r1.mc_passes, cfg.mc_samples);
  EXPECT_GT(r1.epistemic, 0.0);
}

TEST(AdaptStep, ReportTotalIsWeightedSum) {
  auto cfg = small_config();
  cfg.weights = {1.0, 0.8, 0.2, 1};
  const auto r = one_step(moons().source, cfg);
  EXPECT_NEAR(r.total, r.inter + 0.8 * r.intra + 0.2 * r.entropy + r.epistemic, 1e-9);
}

// alpha = beta = gamma = 0, views equal to the clean batch and s = softmax(H(z))
// kept on the tape: the gradient of L_i is the gradient of the entropy.
TEST(AdaptStep, SelfTargetGradientEqualsEntropyGradient) {
  auto m = moons().source.clone();
  m.set_head_trainable(false);
  const auto& target = moons().data.target;
  std::vector<std::size_t> ids(32);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  const auto x = gather_batch<double>(target.unlabeled(), ids);

  AdaptConfig cfg;
  cfg.weights = {1.0, 0.0, 0.0, 0};
  cfg.views = 2;
  const auto clean = clean_pass(m, x);
  const auto terms = faust_objective(m, x, clean, clean.p, concat<double>({x, x}), 2, cfg, 1);
  terms.total.backward();
  std::vector<std::vector<double>> g_inter;
  for (auto& p : m.generator_parameters()) {
    g_inter.emplace_back(p.grad().begin(), p.grad().end());
    p.zero_grad();
  }
  entropy_loss(clean_pass(m, x).p).backward();
  const auto params = m.generator_parameters();
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t j = 0; j < params[i].size(); ++j) ASSERT_NEAR(g_inter[i][j], params[i].grad()[j], 1e-8);
}

TEST(AdaptStep, FullObjectiveGradientMatchesFiniteDifferences) {
  auto m = Model<double>::build(vector_model_spec(8, 4), 3);
  m.set_head_trainable(false);
  std::vector<double> xv(8 * 8), vv(2 * 8 * 8);
  Rng r(4);
  for (auto& v : xv) v = r.uniform(-2, 2);
  for (auto& v : vv) v = r.uniform(-2, 2);
  const T64 x(Shape{8, 8}, xv), views(Shape{16, 8}, vv);
  AdaptConfig cfg;
  cfg.weights = {1.0, 0.5, 0.5, 1};
  cfg.mc_samples = 3;
  cfg.temperature = 0.5;
  const auto s = prototype_targets(clean_pass(m, x), cfg.temperature, true);
  auto loss = [&] {
    const auto clean = clean_pass(m, x);
    return faust_objective(m, x, clean, s, views, 2, cfg, 77).total;
  };
  const auto res = grad_check_params<double>(loss, m.generator_parameters());
  EXPECT_FALSE(res.nan_at.has_value());
  EXPECT_LT(res.max_relative_error, 1e-5);
}

TEST(AdaptRun, ZeroEpochsReturnsSource) {
  auto cfg = small_config();
  cfg.max_epochs = 0;
  const auto r = adapt_run(moons().source, moons().data.target.unlabeled(), cfg);
  EXPECT_EQ(parameter_digest(r.model.parameters()), parameter_digest(moons().source.parameters()));
  EXPECT_EQ(r.epochs_run, 0u);
}

TEST(AdaptRun, HeadFrozenAndGeneratorMoves) {
  const auto r = adapt_run(moons().source, moons().data.target.unlabeled(), small_config());
  EXPECT_EQ(parameter_digest(r.model.head_parameters()), parameter_digest(moons().source.head_parameters()));
  EXPECT_NE(parameter_digest(r.model.generator_parameters()), parameter_digest(moons().source.generator_parameters()));
  EXPECT_FALSE(r.model.head_trainable());
}

TEST(AdaptRun, LogIsBitwiseReproducible) {
  auto cfg = small_config();
  cfg.weights.gamma = 1;
  const auto a = adapt_run(moons().source, moons().data.target.unlabeled(), cfg);
  const auto b = adapt_run(moons().source, moons().data.target.unlabeled(), cfg);
  EXPECT_EQ(a.log.to_jsonl(), b.log.to_jsonl());
  EXPECT_EQ(parameter_digest(a.model.parameters()), parameter_digest(b.model.parameters()));
  ASSERT_FALSE(a.log.steps.empty());
  for (const auto& s : a.log.steps) EXPECT_EQ(s.report.mc_passes, cfg.mc_samples);
}

TEST(AdaptRun, LogRowsCarryLossesAndProbe) {
  auto cfg = small_config();
  const auto& eval = moons().data.target_eval;
  const auto r = adapt_run<double>(moons().source, moons().data.target.unlabeled(), cfg,
                                   [&](const M64& m) { return accuracy(m, eval); });
  ASSERT_EQ(r.log.epochs.size(), 2u);
  EXPECT_TRUE(r.log.epochs[0].target_accuracy.has_value());
  // 600 samples, batch 64: 9 full batches and a remainder of 24
  EXPECT_EQ(r.log.steps.size(), 20u);
  std::istringstream lines(r.log.to_jsonl());
  std::string line;
  std::size_t steps = 0, epochs = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    if (j.at("type") == "step") {
      ++steps;
      for (const char* key : {"step", "L_i", "L_f", "L_e", "L_u", "total", "lr"}) EXPECT_TRUE(j.contains(key)) << key;
    } else {
      ++epochs;
      EXPECT_TRUE(j.contains("mean_total"));
    }
  }
  EXPECT_EQ(steps, 20u);
  EXPECT_EQ(epochs, 2u);
}

TEST(AdaptRun, DivergenceReportsStep) {
  auto broken = moons().source.clone();
  broken.head_parameters().back().mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    adapt_run(broken, moons().data.target.unlabeled(), small_config());
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.step(), 0u);
  }
}

TEST(AdaptRun, ShapeMismatchRejected) {
  const auto digits = gen_tiny_digits_pair(500, 1);
  EXPECT_THROW(adapt_run(moons().source, digits.target.unlabeled(), small_config()), ShapeError);
}

TEST(AdaptRun, TargetLabelsCannotBePassed) {
  static_assert(!std::is_convertible_v<Dataset, UnlabeledSet>);
  static_assert(!std::is_invocable_v<decltype(&adapt_run<double>), const M64&, const Dataset&, const AdaptConfig&,
                                     const EpochProbe<double>&>);
  SUCCEED();
}

TEST(EarlyStop, MovingAverageRule) {
  EXPECT_FALSE(converged({5, 4, 3}, 3, 1e-4));
  EXPECT_FALSE(converged({5, 4, 3, 2}, 3, 1e-4));
  EXPECT_FALSE(converged({5, 4, 3, 2, 2, 2}, 3, 1e-4));
  EXPECT_TRUE(converged({5, 4, 3, 2, 2, 2, 2}, 3, 1e-4));
  EXPECT_TRUE(converged({1, 1, 1, 1}, 3, 1e-4));
}

TEST(EarlyStop, MovingAverageNonIncreasingUntilStop) {
  auto cfg = small_config();
  cfg.max_epochs = 40;
  cfg.early_stop_window = 2;
  cfg.early_stop_tolerance = 1e-3;
  const auto r = adapt_run(moons().source, moons().data.target.unlabeled(), cfg);
  std::vector<double> losses;
  for (const auto& e : r.log.epochs) losses.push_back(e.mean_total);
  const std::size_t w = cfg.early_stop_window;
  const std::size_t last = r.early_stopped ? losses.size() - 1 : losses.size();
  for (std::size_t n = w + 1; n <= last; ++n) {
    double now = 0, before = 0;
    for (std::size_t i = n - w; i < n; ++i) now += losses[i];
    for (std::size_t i = n - w - 1; i < n - 1; ++i) before += losses[i];
    EXPECT_LE(now, before) << n;
  }
  EXPECT_LE(r.log.epochs[r.best_epoch].mean_total, losses.back());
}

TEST(Evaluate, PerfectClassifierAndSeededPerturbation) {
  Dataset d{Shape{2}, 2, {}, {}, Domain::target, "lines"};
  Rng rng(1);
  for (std::size_t i = 0; i < 400; ++i) {
    const auto label = static_cast<std::uint16_t>(i % 2);
    d.samples.push_back(static_cast<float>((label ? 5.0 : -5.0) + 0.1 * rng.normal()));
    d.samples.push_back(static_cast<float>(0.1 * rng.normal()));
    d.labels.push_back(label);
  }
  const auto m = pretrain_source<double>(d, PretrainConfig{}).model;
  EXPECT_EQ(evaluate(m, d, Regime::none), 1.0);
  EXPECT_EQ(evaluate(m, d, Regime::strong, 3), evaluate(m, d, Regime::strong, 3));
  EXPECT_THROW(evaluate(m, Dataset{Shape{2}, 2, {}, {}, Domain::target, ""}, Regime::none), ValueError);
}

TEST(AdaptRun, RotatedMoonsBeatSourceBaseline) {
  const auto data = prepare_task(TaskSpec{}, 0);
  const auto source = pretrain_for_task<double>(data, PretrainConfig{}, 0);
  const auto r = run_adaptation_trial(source, data, AdaptConfig{}, 0);
  EXPECT_GT(r.adapted.none, r.source.none);
}

TEST(Experiments, PresetsAndCsv) {
  std::vector<std::string> labels;
  for (auto p : kAblationRows) labels.push_back(row_label(p));
  EXPECT_EQ(labels, (std::vector<std::string>{"L_e-only", "L_u-only", "L_i+L_f", "FAUST", "FAUST+U"}));
  EXPECT_EQ(apply_preset(AdaptConfig{}, Preset::epistemic_only).weights.gamma, 1);
  EXPECT_EQ(apply_preset(AdaptConfig{}, Preset::entropy_only).weights.inter, 0.0);
  EXPECT_EQ(apply_preset(AdaptConfig{}, Preset::consistency_only).weights.beta, 0.0);
  EXPECT_EQ(preset_from_string("faust-u"), Preset::faust_u);
  EXPECT_THROW(preset_from_string("nope"), ValueError);

  const auto s = summarize({0.5, 0.7, 0.9});
  EXPECT_NEAR(s.mean, 0.7, 1e-15);
  EXPECT_NEAR(s.std, 0.2, 1e-15);
  EXPECT_EQ(report_csv({{"two-moons-rot40", "FAUST", s}}),
            "task,preset,accuracy_mean,accuracy_std\ntwo-moons-rot40,FAUST,0.700000,0.200000\n");
}
