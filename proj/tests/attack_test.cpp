#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "psba/attack.hpp"
#include "support.hpp"

using namespace psba;
using namespace psba::support;

namespace {

// Decision along the segment from x* (all zeros) to x_adv (all ones): the
// flip happens where the mean pixel exceeds `at`.
LocalOracle threshold_oracle(double at) {
  return LocalOracle([at](const ImageTensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    return s / static_cast<double>(x.size()) > at ? 1 : -1;
  });
}

}  // namespace

TEST(BinarySearch, StepFunctionBracket) {
  const Shape s{1, 1, 4};
  auto o = threshold_oracle(0.5);
  const double theta = std::ldexp(1.0, -10);
  const auto r = binary_search_boundary(o, ImageTensor(s, 1.0), ImageTensor(s, 0.0), theta);
  EXPECT_GE(r.parameter, 0.5);
  EXPECT_LE(r.parameter, 0.5 + theta);
  EXPECT_EQ(r.queries, 10u);
  EXPECT_EQ(o.queries_used(), 10u);
  EXPECT_EQ(o.query(r.point), 1);
}

TEST(BinarySearch, StepCountIsCeilLog2) {
  for (double theta : {0.3, 0.1, 1e-3, 1e-7, 0.5, 1.0}) {
    EXPECT_EQ(bisection_steps(theta), static_cast<std::size_t>(std::ceil(std::log2(1.0 / theta)))) << theta;
  }
  EXPECT_THROW(bisection_steps(0.0), PreconditionError);
}

TEST(BinarySearch, AlreadyWithinThetaReturnsAdversarialEnd) {
  const Shape s{1, 1, 4};
  auto o = threshold_oracle(0.0);
  const ImageTensor adv(s, 1e-5);
  const auto r = binary_search_boundary(o, adv, ImageTensor(s, 0.0), 1e-3);
  EXPECT_EQ(r.point, adv);
  EXPECT_LE(r.queries, bisection_steps(1e-3));
}

TEST(BinarySearch, ResultOnSegmentAndContracts) {
  SeededRng rng(1);
  const Shape s{1, 4, 4};
  for (int i = 0; i < 20; ++i) {
    const auto c = affine_case(s, rng);
    const ImageTensor adv = synthetic_start(c.model, c.spec, rng);
    LocalOracle o([&](const ImageTensor& x) { return sign(c.model, c.spec, x); });
    const auto r = binary_search_boundary(o, adv, c.spec.reference, 1e-6);
    EXPECT_LE(distance(r.point, c.spec.reference), distance(adv, c.spec.reference));
    EXPECT_EQ(sign(c.model, c.spec, r.point), 1);
    const ImageTensor back = c.spec.reference + r.parameter * (adv - c.spec.reference);
    EXPECT_LT(distance(back, r.point), 1e-12);
  }
}

TEST(BinarySearch, VerifyRejectsBadEndpoints) {
  const Shape s{1, 1, 2};
  auto o = threshold_oracle(0.5);
  EXPECT_THROW(binary_search_boundary(o, ImageTensor(s, 0.0), ImageTensor(s, 0.0), 0.1, true), InvalidEndpoints);
  EXPECT_THROW(binary_search_boundary(o, ImageTensor(s, 1.0), ImageTensor(s, 1.0), 0.1, true), InvalidEndpoints);
  const auto r = binary_search_boundary(o, ImageTensor(s, 1.0), ImageTensor(s, 0.0), 0.1, true);
  EXPECT_EQ(r.queries, 2u + bisection_steps(0.1));
}

TEST(StepSearch, TrueGradientAcceptedFirstTry) {
  SeededRng rng(2);
  const Shape s{1, 6, 6};
  const auto c = affine_case(s, rng);
  const ImageTensor xt = affine_boundary_point(c, synthetic_start(c.model, c.spec, rng));
  LocalOracle o([&](const ImageTensor& x) { return sign(c.model, c.spec, x); });
  for (std::size_t t : {1u, 4u, 9u}) {
    const auto r = geometric_step_search(o, xt, c.direction, t, c.spec.reference);
    EXPECT_FALSE(r.stalled);
    EXPECT_EQ(r.halvings, 0u);
    EXPECT_EQ(r.queries, r.halvings + 1);
    EXPECT_NEAR(r.step, distance(xt, c.spec.reference) / std::sqrt(static_cast<double>(t)), 1e-15);
  }
}

TEST(StepSearch, WrongDirectionStalls) {
  SeededRng rng(3);
  const Shape s{1, 6, 6};
  const auto c = affine_case(s, rng);
  const ImageTensor xt = affine_boundary_point(c, synthetic_start(c.model, c.spec, rng));
  LocalOracle o([&](const ImageTensor& x) { return sign(c.model, c.spec, x); });
  const auto r = geometric_step_search(o, xt, -1.0 * c.direction, 1, c.spec.reference);
  EXPECT_TRUE(r.stalled);
  EXPECT_LE(r.halvings, 50u);
  EXPECT_EQ(r.queries, r.halvings);
  EXPECT_EQ(r.point, xt);
}

TEST(StepSearch, Preconditions) {
  const Shape s{1, 1, 2};
  auto o = threshold_oracle(0.5);
  EXPECT_THROW(geometric_step_search(o, ImageTensor(s, 1.0), ImageTensor(s, 1.0), 1, ImageTensor(s, 0.0)),
               PreconditionError);
  const ImageTensor unit(s, std::vector<double>{1.0, 0.0});
  EXPECT_THROW(geometric_step_search(o, ImageTensor(s, 1.0), unit, 0, ImageTensor(s, 0.0)), PreconditionError);
}

TEST(Attack, DefaultsFollowLatentDimension) {
  AttackConfig c;
  c.max_iterations = 1;
  EXPECT_DOUBLE_EQ(c.theta_for(100), 1e-3);
  EXPECT_DOUBLE_EQ(c.delta_for(100, 5.0), 0.05);
  c.theta = 0.25;
  c.delta = 0.5;
  EXPECT_EQ(c.theta_for(100), 0.25);
  EXPECT_EQ(c.delta_for(100, 5.0), 0.5);
  AttackConfig open;
  EXPECT_THROW(open.validate(), ConfigError);
  c.samples_per_step = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Attack, AffineIdentityReducesMse) {
  SeededRng rng(4);
  const Shape s{3, 32, 32};
  const auto c = affine_case(s, rng, 2.0);
  const ImageTensor source = synthetic_start(c.model, c.spec, rng);
  AttackConfig cfg;
  cfg.max_queries = 2000;
  cfg.seed = 11;
  const auto tr = run_attack(c.model, c.spec, source, Projection::identity(s), cfg);
  ASSERT_GE(tr.records.size(), 2u);
  EXPECT_LE(tr.queries_used, 2000u);
  EXPECT_EQ(tr.stop, StopReason::Budget);
  EXPECT_LT(tr.records.back().mse, tr.records.front().mse / 10.0);
  // Brute-force optimum: the orthogonal projection of x* onto the hyperplane.
  const ImageTensor opt = affine_boundary_point(c, c.spec.reference);
  const double opt_mse = mse(opt, c.spec.reference);
  EXPECT_NEAR(opt_mse, 4.0 / static_cast<double>(s.size()), 1e-12);
  EXPECT_LE(tr.records.back().mse, 2.0 * opt_mse);
  EXPECT_GE(tr.records.back().mse, opt_mse * (1.0 - 1e-9));
}

TEST(Attack, SpatialBeatsIdentityWhenGradientInSubspace) {
  const Shape s{3, 32, 32};
  const double margin = 2.0;
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SeededRng rng(derive_seed(500, seed));
    const ImageTensor d = zoo::low_frequency_direction(s, 4, 0.0, rng);
    const ImageTensor target = zoo::random_image(s, rng);
    const Classifier model = zoo::affine_from_direction(d, -margin - dot(d.values(), target.values()));
    const AttackSpec spec{AttackMode::Untargeted, 0, target};
    const ImageTensor source = synthetic_start(model, spec, rng);
    const double goal = 1.5 * margin * margin / static_cast<double>(s.size());
    AttackConfig cfg;
    cfg.max_queries = 3000;
    cfg.seed = seed;
    const auto spatial = run_attack(model, spec, source, Projection::spatial(s, 4), cfg);
    const auto ident = run_attack(model, spec, source, Projection::identity(s), cfg);
    const auto qs = queries_to_reach(spatial, goal);
    const auto qi = queries_to_reach(ident, goal);
    if (qs && (!qi || *qs < *qi)) ++wins;
  }
  EXPECT_GE(wins, 16);
}

TEST(Attack, ZeroAndTinyBudgets) {
  SeededRng rng(5);
  const Shape s{1, 8, 8};
  const auto c = affine_case(s, rng);
  const ImageTensor source = synthetic_start(c.model, c.spec, rng);
  AttackConfig cfg;
  cfg.max_queries = 0;
  const auto empty = run_attack(c.model, c.spec, source, Projection::identity(s), cfg);
  EXPECT_TRUE(empty.records.empty());
  EXPECT_EQ(empty.queries_used, 0u);
  EXPECT_EQ(empty.stop, StopReason::Budget);
  cfg.max_queries = 30;
  const auto tiny = run_attack(c.model, c.spec, source, Projection::identity(s), cfg);
  ASSERT_EQ(tiny.records.size(), 1u);
  EXPECT_EQ(tiny.records[0].t, 0u);
  EXPECT_LE(tiny.queries_used, 30u);
}

TEST(Attack, InvariantsOnTanhModel) {
  SeededRng rng(6);
  const Shape s{3, 8, 8};
  const Classifier model = zoo::random_two_layer_tanh(s, 4, 16, rng);
  const AttackSpec spec = AttackSpec::untargeted(model, zoo::random_image(s, rng));
  const ImageTensor source = synthetic_start(model, spec, rng);
  for (const auto& p : {Projection::identity(s), Projection::spatial(s, 4), Projection::freq_lowpass(s, 4)}) {
    AttackConfig cfg;
    cfg.max_queries = 1500;
    cfg.seed = 3;
    const auto tr = run_attack(model, spec, source, p, cfg);
    EXPECT_TRUE(trajectory_violations(tr, spec.reference).empty());
    std::uint64_t ledger = 0;
    for (const auto& r : tr.records) {
      EXPECT_EQ(sign(model, spec, r.x), 1);
      if (r.t > 0) EXPECT_EQ(r.estimation_queries, cfg.samples_per_step);
      ledger += r.boundary_queries + r.estimation_queries + r.step_queries;
      EXPECT_EQ(r.queries, ledger);
      if (r.t > 0) EXPECT_TRUE(r.cosine.has_value());
    }
    // An iteration cut short by the budget is not recorded.
    EXPECT_EQ(tr.queries_used, tr.stop == StopReason::Budget ? 1500u : ledger);
    for (std::size_t i = 1; i < tr.records.size(); ++i)
      EXPECT_LE(distance(tr.records[i].x, spec.reference), distance(tr.records[i].x_hat, spec.reference));
  }
}

TEST(Attack, DeterministicPerSeed) {
  SeededRng rng(7);
  const Shape s{1, 8, 8};
  const Classifier model = zoo::random_two_layer_tanh(s, 3, 8, rng);
  const AttackSpec spec = AttackSpec::untargeted(model, zoo::random_image(s, rng));
  const ImageTensor source = synthetic_start(model, spec, rng);
  AttackConfig cfg;
  cfg.max_iterations = 8;
  cfg.seed = 42;
  const auto p = Projection::freq_lowpass(s, 4);
  const auto a = run_attack(model, spec, source, p, cfg);
  const auto b = run_attack(model, spec, source, p, cfg);
  EXPECT_EQ(trajectory_csv(a), trajectory_csv(b));
  cfg.seed = 43;
  EXPECT_NE(trajectory_csv(a), trajectory_csv(run_attack(model, spec, source, p, cfg)));
}

TEST(Attack, RejectsNonAdversarialSource) {
  SeededRng rng(8);
  const Shape s{1, 4, 4};
  const auto c = affine_case(s, rng);
  AttackConfig cfg;
  cfg.max_iterations = 2;
  EXPECT_THROW(run_attack(c.model, c.spec, c.spec.reference, Projection::identity(s), cfg), InvalidEndpoints);
}

TEST(Attack, SyntheticStartIsAdversarial) {
  SeededRng rng(9);
  const Shape s{3, 8, 8};
  for (int i = 0; i < 20; ++i) {
    const auto c = affine_case(s, rng);
    EXPECT_EQ(sign(c.model, c.spec, synthetic_start(c.model, c.spec, rng)), 1);
  }
  const Classifier never = Classifier::affine(Shape{1, 1, 1}, 2, {0, 0}, {1, 0});
  const AttackSpec spec{AttackMode::Untargeted, 0, ImageTensor(Shape{1, 1, 1}, 0.0)};
  EXPECT_THROW(synthetic_start(never, spec, rng), PreconditionError);
}

TEST(Export, CsvLayout) {
  AttackTrajectory tr;
  IterationRecord r0;
  r0.t = 0;
  r0.queries = 12;
  r0.mse = 0.5;
  IterationRecord r1;
  r1.t = 1;
  r1.queries = 130;
  r1.mse = 0.25;
  r1.step = 0.125;
  tr.records = {r0, r1};
  EXPECT_EQ(trajectory_csv(tr), "iter,queries,mse,step,cosine\n0,12,0.5,,\n1,130,0.25,0.125,\n");
  tr.records[1].cosine = 0.75;
  EXPECT_EQ(trajectory_csv(tr), "iter,queries,mse,step,cosine\n0,12,0.5,,\n1,130,0.25,0.125,0.75\n");
  AttackConfig cfg;
  cfg.query_caps = {100, 200};
  cfg.success_mse = 0.3;
  const auto j = trajectory_summary(tr, cfg);
  EXPECT_EQ(j["final_mse"], 0.25);
  EXPECT_EQ(j["caps"][0]["success"], false);
  EXPECT_EQ(j["caps"][1]["success"], true);
}

TEST(SuccessRate, Examples) {
  const auto run = [](double final_mse) {
    AttackTrajectory tr;
    IterationRecord r;
    r.queries = 100;
    r.mse = final_mse;
    tr.records = {r};
    return tr;
  };
  EXPECT_EQ(success_rate({run(0.1), run(0.2)}, 0.5, 1000), 1.0);
  EXPECT_EQ(success_rate({run(0.9), run(0.8)}, 0.5, 1000), 0.0);
  EXPECT_DOUBLE_EQ(success_rate({run(0.1), run(0.9), run(0.2), run(0.3), run(0.7)}, 0.5, 1000), 0.6);
  EXPECT_EQ(success_rate({run(0.1)}, 0.5, 50), 0.0);
  EXPECT_THROW(success_rate({}, 0.5, 10), PreconditionError);
  EXPECT_THROW(success_rate({run(0.1)}, 0.0, 10), PreconditionError);
}

TEST(ProgressiveSearch, LoopExitRule) {
  const auto run = [](std::vector<double> v) {
    return progressive_search(v.size(), [&](std::size_t i) { return v[i]; });
  };
  EXPECT_EQ(run({3.0}), 0u);
  EXPECT_EQ(run({5, 4, 3, 2}), 3u);
  EXPECT_EQ(run({5, 4, 6, 1}), 1u);
  EXPECT_EQ(run({5, 5, 5, 6}), 2u);  // plateaus keep climbing
  std::vector<std::size_t> visited;
  progressive_search(5, [&](std::size_t i) {
    visited.push_back(i);
    return i == 2 ? 10.0 : 1.0;
  });
  EXPECT_EQ(visited, (std::vector<std::size_t>{0, 1, 2}));
}

namespace {

struct LowFreqSetup {
  Shape shape{3, 17, 17};
  Classifier model;
  std::vector<ValidationPair> pairs;
};

// Unit gradient inside the 3x3 DCT low-pass subspace.
LowFreqSetup lowfreq_setup(std::uint64_t seed) {
  SeededRng rng(seed);
  LowFreqSetup s{Shape{3, 17, 17}, Classifier::affine(Shape{1, 1, 1}, 2, {0, 0}, {0, 0}), {}};
  ImageTensor d = Projection::freq_lowpass(s.shape, 3).project(ImageTensor(s.shape, zoo::normal_vector(s.shape.size(), rng)));
  d = (1.0 / norm(d.values())) * d;
  const ImageTensor base = zoo::random_image(s.shape, rng);
  s.model = zoo::affine_from_direction(d, -1.0 - dot(d.values(), base.values()));
  for (int i = 0; i < 10; ++i) {
    ImageTensor target = base;
    for (auto& v : target.values()) v += rng.uniform(-0.05, 0.05);
    const AttackSpec spec{AttackMode::Untargeted, 0, target};
    if (sign(s.model, spec, target) != -1) continue;
    s.pairs.push_back({synthetic_start(s.model, spec, rng), target});
  }
  return s;
}

OracleFactory factory_for(const Classifier& model) {
  return [&model](const ValidationPair& pair) -> std::unique_ptr<MeteredOracle> {
    const AttackSpec spec{AttackMode::Untargeted, 0, pair.target};
    return std::make_unique<LocalOracle>([&model, spec](const ImageTensor& x) { return sign(model, spec, x); });
  };
}

}  // namespace

TEST(ScaleSearch, SingleScale) {
  const auto s = lowfreq_setup(10);
  const auto r = find_optimal_scale(factory_for(s.model), s.pairs, ScaleSchedule::spatial(s.shape, {5}));
  EXPECT_EQ(r.index, 0u);
  EXPECT_EQ(r.evaluated.size(), 1u);
}

TEST(ScaleSearch, LowFrequencyModelPicksSmallestScale) {
  const auto s = lowfreq_setup(11);
  const auto sched = ScaleSchedule::freq_lowpass(s.shape, {3, 5, 9, 17});
  const auto r = find_optimal_scale(factory_for(s.model), s.pairs, sched, {10, 100, 1});
  EXPECT_EQ(r.index, 0u);
  ASSERT_GE(r.evaluated.size(), 2u);
  for (const auto& rep : r.evaluated) {
    std::uint64_t total = 0;
    for (auto q : rep.pair_queries) total += q;
    EXPECT_EQ(total, rep.initial_boundary_queries + rep.boundary_queries + rep.estimation_queries + rep.step_queries);
    EXPECT_EQ(rep.estimation_queries, s.pairs.size() * 10 * 100);
  }
}

TEST(ScaleSearch, InvalidPairsSkippedOrFatal) {
  const auto s = lowfreq_setup(12);
  auto pairs = s.pairs;
  pairs.push_back({pairs[0].target, pairs[0].source});  // swapped endpoints
  const auto sched = ScaleSchedule::spatial(s.shape, {3});
  const auto r = find_optimal_scale(factory_for(s.model), pairs, sched, {2, 20, 1});
  EXPECT_EQ(r.valid_pairs, s.pairs.size());
  EXPECT_EQ(r.warnings.size(), 1u);
  EXPECT_EQ(r.validation_queries, 2 * s.pairs.size() + 1);  // the bad pair fails on its first query
  const std::vector<ValidationPair> bad{{s.pairs[0].target, s.pairs[0].source}};
  EXPECT_THROW(find_optimal_scale(factory_for(s.model), bad, sched, {2, 20, 1}), NoValidPairs);
}
