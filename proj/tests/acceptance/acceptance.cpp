// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "psba/psba.hpp"
#include "../support.hpp"

using namespace psba;
using namespace psba::support;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

LocalOracle oracle_for(const Classifier& model, const AttackSpec& spec) {
  return LocalOracle([&model, spec](const ImageTensor& x) { return sign(model, spec, x); });
}

// 1. Closed-form E|v1| against Monte Carlo.
Outcome beta_moment() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::string detail;
  for (std::size_t m : {2, 10, 100}) {
    SeededRng rng(derive_seed(1, m));
    double acc = 0.0;
    const std::size_t N = 1000000;
    for (std::size_t i = 0; i < N; ++i) acc += std::abs(sample_unit_sphere(m, rng)[0]);
    const double mc = acc / static_cast<double>(N);
    const double rel = std::abs(mc - beta_mean_abs_v1(m)) / beta_mean_abs_v1(m);
    ok = ok && rel <= 0.01;
    detail += "m=" + std::to_string(m) + " rel " + fmt(rel, 2) + "; ";
  }
  const double s = seconds_since(t0);
  return {ok && s < 5.0, detail + fmt(s, 3) + " s"};
}

// 2. Affine model at a boundary point: measured cosine sits in
// [0.9 rho, rho + 0.02] for every projection kind.
Outcome linear_bridge() {
  const auto t0 = Clock::now();
  const Shape s{3, 16, 16};
  std::vector<std::pair<std::string, Projection>> kinds;
  kinds.emplace_back("identity", Projection::identity(s));
  kinds.emplace_back("spatial", Projection::spatial(s, 8));
  kinds.emplace_back("freq_lowpass", Projection::freq_lowpass(s, 8));
  {
    // Principal directions of smooth images: random 8x8 planes upscaled.
    SeededRng rng(99);
    std::vector<ImageTensor> smooth;
    for (int i = 0; i < 300; ++i) smooth.push_back(bilinear_upscale(zoo::random_image(Shape{3, 8, 8}, rng), 16, 16));
    kinds.emplace_back("spectrum_topk", Projection::spectrum_topk(pca_fit(smooth, 64), s));
    std::vector<std::vector<double>> cols;
    for (int i = 0; i < 96; ++i) cols.push_back(zoo::normal_vector(s.size(), rng));
    kinds.emplace_back("linear", Projection::linear(orthonormalize(cols), s));
  }
  bool ok = true;
  std::string detail;
  for (const auto& [name, p] : kinds) {
    int passed = 0;
    double worst = 1e300;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      SeededRng rng(derive_seed(2, seed));
      const auto c = affine_case(s, rng);
      const ImageTensor xt = affine_boundary_point(c, zoo::random_image(s, rng));
      auto o = oracle_for(c.model, c.spec);
      const auto g = true_gradient(c.model, c.spec, xt).gradient;
      const double rho = projected_gradient_fraction(p, g);
      const double cosv = cosine_similarity(estimate_gradient(o, xt, p, 0.01, 5000, rng).estimate, g);
      worst = std::min(worst, cosv / rho);
      if (cosv >= 0.9 * rho && cosv <= rho + 0.02) ++passed;
    }
    ok = ok && passed >= 18;
    detail += name + " " + std::to_string(passed) + "/20 (min cos/rho " + fmt(worst, 3) + "); ";
  }
  const double s_ = seconds_since(t0);
  return {ok && s_ < 30.0, detail + fmt(s_, 3) + " s"};
}

// 3. Identity-projection bound at the boundary: exact form, above HSJA.
Outcome tighter_constant() {
  const auto t0 = Clock::now();
  SeededRng rng(3);
  int exact = 0, above = 0;
  for (int i = 0; i < 100; ++i) {
    BoundParams b = BoundParams::isotropic(2, 2);
    b.n = 2 + static_cast<std::size_t>(rng.uniform() * 500);
    b.m = b.n;
    b.alphas.assign(b.m, 1.0);
    b.delta = rng.uniform(1e-4, 1.0) / static_cast<double>(b.n);
    b.beta_S = rng.uniform(0.0, 2.0);
    b.grad_norm = rng.uniform(0.5, 3.0);
    b.proj_norm = b.grad_norm;
    const double n1 = static_cast<double>(b.n) - 1.0;
    const double want = 1.0 - n1 * n1 * b.delta * b.delta * b.beta_S * b.beta_S / (2.0 * b.grad_norm * b.grad_norm);
    const double got = identity_boundary_bound(b).value;
    if (got == want) ++exact;
    if (got > hsja_bound(b).value) ++above;
  }
  const double s = seconds_since(t0);
  return {exact == 100 && above == 100 && s < 1.0,
          "exact " + std::to_string(exact) + "/100, above hsja " + std::to_string(above) + "/100"};
}

// 4. Bound curves for the two energy profiles.
Outcome figure4() {
  const auto t0 = Clock::now();
  const auto ex = figure4_curves(exponential_profile(20));
  const auto qu = figure4_curves(quadratic_profile(20));
  const std::size_t ae = curve_argmax(ex), aq = curve_argmax(qu);
  double pe = -1e300, pq = -1e300;
  for (const auto& p : ex) pe = std::max(pe, p.bound);
  for (const auto& p : qu) pq = std::max(pq, p.bound);
  bool interior = ae > ex.front().m && ae < ex.back().m;
  if (interior) {
    const double peak = ex[ae - ex.front().m].bound;
    interior = peak > ex[ae - ex.front().m - 1].bound && peak > ex[ae - ex.front().m + 1].bound;
  }
  const double s = seconds_since(t0);
  return {interior && pe > pq && ae <= aq && s < 1.0,
          "exp argmax " + std::to_string(ae) + " peak " + fmt(pe) + ", quad argmax " + std::to_string(aq) + " peak " +
              fmt(pq)};
}

// 5. 1 - median cosine across seeds, per fourfold increase of B.
Outcome concentration_scaling() {
  const auto t0 = Clock::now();
  const Shape s{3, 10, 10};
  const auto p = Projection::identity(s);
  std::vector<double> disp;
  for (std::size_t B : {100, 400, 1600}) {
    std::vector<double> cs;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      SeededRng rng(derive_seed(5, seed));
      const auto c = affine_case(s, rng);
      const ImageTensor xt = affine_boundary_point(c, zoo::random_image(s, rng));
      auto o = oracle_for(c.model, c.spec);
      cs.push_back(cosine_similarity(estimate_gradient(o, xt, p, 0.01, B, rng).estimate, c.direction));
    }
    disp.push_back(1.0 - median(cs));
  }
  const double r1 = disp[0] / disp[1], r2 = disp[1] / disp[2];
  const double s_ = seconds_since(t0);
  return {r1 >= 1.5 && r1 <= 3.0 && r2 >= 1.5 && r2 <= 3.0 && s_ < 60.0,
          "shrink factors " + fmt(r1, 3) + ", " + fmt(r2, 3)};
}

// 6. alpha_1^2 / mean orthogonal sensitivity.
Outcome sensitivity_isotropy() {
  const auto t0 = Clock::now();
  SeededRng rng(6);
  const Shape s{3, 8, 8};
  const ImageTensor g(s, zoo::normal_vector(s.size(), rng));
  bool ok = true;
  std::string detail;
  for (const auto& p : {Projection::identity(s), Projection::freq_lowpass(s, 4)}) {
    const auto r = estimate_sensitivity(p, g, 0.1, 100000, rng);
    const double ratio = r.alpha1_sq / r.mean_orth;
    ok = ok && ratio >= 0.9 && ratio <= 1.1;
    detail += p.describe() + " " + fmt(ratio) + "; ";
  }
  // Full orthonormal basis with the gradient column stretched threefold.
  std::vector<std::vector<double>> raw;
  for (std::size_t i = 0; i < s.size(); ++i) raw.push_back(zoo::normal_vector(s.size(), rng));
  Basis q = orthonormalize(raw);
  const ImageTensor gq(s, q[0]);
  scale_in_place(q[0], 3.0);
  const auto r = estimate_sensitivity(Projection::linear(q, s), gq, 1.0, 100000, rng);
  const double ratio = r.alpha1_sq / r.mean_orth;
  ok = ok && ratio >= 7.0 && ratio <= 11.0;
  detail += "anisotropic x3 " + fmt(ratio);
  const double s_ = seconds_since(t0);
  return {ok && s_ < 30.0, detail};
}

// 7. Smaller orthogonal weight k gives better cosines.
Outcome k_trend() {
  const auto t0 = Clock::now();
  SeededRng rng(7);
  const Shape s{1, 8, 8};
  const Classifier model = zoo::random_two_layer_tanh(s, 3, 16, rng);
  const AttackSpec spec = AttackSpec::untargeted(model, zoo::random_image(s, rng));
  const ImageTensor xt = boundary_point(model, spec, rng);
  const auto g = true_gradient(model, spec, xt).gradient;
  const auto p = Projection::identity(s);
  double lo = 0.0, hi = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    SeededRng a(seed), b(seed);
    lo += cosine_similarity(adjusted_estimate(model, spec, xt, p, 0.01, 100, 0.96, a).estimate, g);
    hi += cosine_similarity(adjusted_estimate(model, spec, xt, p, 0.01, 100, 1.04, b).estimate, g);
  }
  const double s_ = seconds_since(t0);
  return {lo > hi && s_ < 30.0, "mean cosine k=0.96 " + fmt(lo / 50, 6) + ", k=1.04 " + fmt(hi / 50, 6)};
}

OracleFactory factory_for(const Classifier& model) {
  return [&model](const ValidationPair& pair) -> std::unique_ptr<MeteredOracle> {
    const AttackSpec spec{AttackMode::Untargeted, 0, pair.target};
    return std::make_unique<LocalOracle>([&model, spec](const ImageTensor& x) { return sign(model, spec, x); });
  };
}

// Affine model through `direction` with the base image at margin 1 on the
// negative side, plus ten jittered validation pairs.
struct ScaleSetup {
  Classifier model;
  ImageTensor base;
  std::vector<ValidationPair> pairs;
};

ScaleSetup scale_setup(const ImageTensor& direction, SeededRng& rng) {
  const Shape s = direction.shape();
  const ImageTensor base = zoo::random_image(s, rng);
  ScaleSetup out{zoo::affine_from_direction(direction, -1.0 - dot(direction.values(), base.values())), base, {}};
  while (out.pairs.size() < 10) {
    ImageTensor target = base;
    for (auto& v : target.values()) v += rng.uniform(-0.05, 0.05);
    const AttackSpec spec{AttackMode::Untargeted, 0, target};
    if (sign(out.model, spec, target) != -1) continue;
    out.pairs.push_back({synthetic_start(out.model, spec, rng), target});
  }
  return out;
}

// 8. Scale chosen by the search versus the identity projection.
Outcome attack_efficiency() {
  const auto t0 = Clock::now();
  // Large enough that the identity attack's per-step cosine stays small.
  const Shape s{3, 96, 96};
  const auto schedule = ScaleSchedule::spatial(s, {2, 3, 5, 9, 17, 33});
  int wins = 0;
  double min_energy = 1.0;
  std::vector<std::size_t> chosen;
  std::vector<double> ratios;
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    SeededRng rng(derive_seed(8, trial));
    const ImageTensor d = zoo::low_frequency_direction(s, 3, 0.05, rng);
    const double rho = projected_gradient_fraction(schedule[1], d);
    min_energy = std::min(min_energy, rho * rho);
    const auto setup = scale_setup(d, rng);
    ScaleSearchConfig sc;
    sc.seed = derive_seed(80, trial);
    const auto found = find_optimal_scale(factory_for(setup.model), setup.pairs, schedule, sc);
    chosen.push_back(found.index);

    const AttackSpec spec{AttackMode::Untargeted, 0, setup.base};
    const ImageTensor source = synthetic_start(setup.model, spec, rng);
    AttackConfig ac;
    ac.max_queries = 2000;
    ac.seed = derive_seed(81, trial);
    const auto psba = run_attack(setup.model, spec, source, schedule[found.index], ac);
    const auto ident = run_attack(setup.model, spec, source, Projection::identity(s), ac);
    const double a = mse_at(psba, 2000).value_or(INFINITY);
    const double b = mse_at(ident, 2000).value_or(INFINITY);
    ratios.push_back(b / a);
    if (a * 10.0 <= b) ++wins;
  }
  std::string picks;
  for (auto c : chosen) picks += std::to_string(c);
  const double s_ = seconds_since(t0);
  return {wins >= 16 && min_energy >= 0.9 && s_ < 300.0,
          std::to_string(wins) + "/20 trials at >= 10x lower MSE (median ratio " + fmt(median(ratios), 3) +
              "), chosen scale indices " + picks + ", min in-scale energy " + fmt(min_energy, 3) + ", " +
              fmt(s_, 3) + " s"};
}

// 9. Scale search outcomes and per-scale query accounting.
Outcome scale_search_correctness() {
  const Shape s{3, 17, 17};
  const auto schedule = ScaleSchedule::freq_lowpass(s, {3, 5, 9, 17});
  ScaleSearchConfig sc;
  sc.seed = 9;
  bool ok = true;
  std::string detail;
  auto accounting = [&](const ScaleSearchResult& r, std::size_t pairs) {
    for (std::size_t i = 0; i < r.evaluated.size(); ++i) {
      const auto& rep = r.evaluated[i];
      const std::uint64_t bs = bisection_steps(AttackConfig{}.theta_for(rep.latent_dim));
      const std::uint64_t want = pairs * sc.steps * (sc.samples_per_step + bs);
      if (rep.estimation_queries + rep.boundary_queries != want) return false;
      std::uint64_t total = 0;
      for (auto q : rep.pair_queries) total += q;
      if (total != rep.initial_boundary_queries + rep.boundary_queries + rep.estimation_queries + rep.step_queries)
        return false;
    }
    return true;
  };
  {
    SeededRng rng(91);
    ImageTensor d = schedule[0].project(ImageTensor(s, zoo::normal_vector(s.size(), rng)));
    d = (1.0 / norm(d.values())) * d;
    const auto setup = scale_setup(d, rng);
    const auto r = find_optimal_scale(factory_for(setup.model), setup.pairs, schedule, sc);
    const bool acc = accounting(r, setup.pairs.size());
    ok = ok && r.index == 0 && acc;
    detail += "low-frequency model -> index " + std::to_string(r.index) + (acc ? "" : " (accounting mismatch)") + "; ";
  }
  {
    // A white direction gains projected energy with every scale faster than
    // the estimator loses precision.
    SeededRng rng(92);
    std::vector<double> raw = zoo::normal_vector(s.size(), rng);
    scale_in_place(raw, 1.0 / norm(raw));
    const auto setup = scale_setup(ImageTensor(s, std::move(raw)), rng);
    const auto r = find_optimal_scale(factory_for(setup.model), setup.pairs, schedule, sc);
    const bool acc = accounting(r, setup.pairs.size());
    ok = ok && r.index == schedule.size() - 1 && acc;
    std::string mses;
    for (const auto& rep : r.evaluated) mses += fmt(rep.average_mse, 3) + " ";
    detail += "white direction -> index " + std::to_string(r.index) + " (avg mse " + mses + ")" +
              (acc ? "" : " (accounting mismatch)");
  }
  return {ok, detail};
}

// Forwards to the remote oracle and checks the client ledger against the
// server's count after every query.
class AuditedOracle final : public MeteredOracle {
 public:
  explicit AuditedOracle(RemoteOracle& inner) : inner_(inner) {}
  int query(const ImageTensor& x) override {
    const int s = inner_.query(x);
    if (inner_.server_count() != inner_.queries_used()) ++mismatches;
    return s;
  }
  std::uint64_t queries_used() const override { return inner_.queries_used(); }
  std::optional<std::uint64_t> budget() const override { return inner_.budget(); }
  std::size_t mismatches = 0;

 private:
  RemoteOracle& inner_;
};

// 10. Loopback service parity.
Outcome service_parity() {
  const auto t0 = Clock::now();
  const Shape s{3, 16, 16};
  SeededRng rng(10);
  auto model = std::make_shared<const Classifier>(zoo::lowfreq_affine(s, 5, 0.05, rng, -1.0));
  const AttackSpec spec{AttackMode::Untargeted, 0, ImageTensor(s, 0.5)};
  OracleServer server(model, spec, {});
  server.start();
  const ImageTensor source = synthetic_start(*model, spec, rng);
  AttackConfig ac;
  ac.seed = 7;
  ac.max_queries = 2000;
  const auto p = Projection::spatial(s, 5);
  auto local = oracle_for(*model, spec);
  const auto a = run_attack(local, spec.reference, source, p, ac, Whitebox{*model, spec});
  RemoteOracle remote(server.url());
  AuditedOracle audited(remote);
  const auto b = run_attack(audited, spec.reference, source, p, ac, Whitebox{*model, spec});
  server.stop();
  bool per_iteration = a.records.size() == b.records.size();
  for (std::size_t i = 0; per_iteration && i < a.records.size(); ++i)
    per_iteration = a.records[i].queries == b.records[i].queries;
  const bool same_csv = trajectory_csv(a) == trajectory_csv(b);
  const double s_ = seconds_since(t0);
  return {same_csv && per_iteration && audited.mismatches == 0 && a.queries_used == b.queries_used && s_ < 60.0,
          std::string("csv ") + (same_csv ? "identical" : "differs") + ", " + std::to_string(b.records.size()) +
              " iterations, " + std::to_string(b.queries_used) + " queries, ledger mismatches " +
              std::to_string(audited.mismatches) + ", " + fmt(s_, 3) + " s"};
}

// 11. Structural invariants with zero tolerance violations.
Outcome structural() {
  std::vector<std::string> violations;
  SeededRng rng(11);
  const Shape s{3, 17, 17};
  for (int i = 0; i < 10; ++i) {
    const ImageTensor x = zoo::random_image(s, rng);
    for (std::size_t c = 0; c < s.channels; ++c) {
      const Plane pl = channel_plane(x, c);
      const Plane back = idct2(dct2(pl));
      double err = 0.0;
      for (std::size_t k = 0; k < pl.values.size(); ++k) err = std::max(err, std::abs(back.values[k] - pl.values[k]));
      if (err > 1e-10) violations.push_back("dct round trip " + fmt(err));
      const DctPlane once = lowpass_filter(dct2(pl), 5);
      if (lowpass_filter(once, 5).coefficients != once.coefficients) violations.push_back("low-pass not idempotent");
    }
  }
  const auto schedule = ScaleSchedule::spatial(s, {3, 5, 9, 17});
  for (std::size_t i = 0; i + 1 < schedule.size(); ++i) {
    const double d = nesting_defect(schedule[i], schedule[i + 1]);
    if (d > 1e-9) violations.push_back("nesting " + schedule[i].describe() + " " + fmt(d));
  }
  const auto c = affine_case(s, rng);
  const ImageTensor xt = affine_boundary_point(c, zoo::random_image(s, rng));
  for (const auto& p : {Projection::identity(s), Projection::spatial(s, 5), Projection::freq_lowpass(s, 4)}) {
    auto o = oracle_for(c.model, c.spec);
    const auto est = estimate_gradient(o, xt, p, 0.01, 200, rng).estimate;
    const double off = distance(est, p.project(est)) / norm(est.values());
    if (off > 1e-9) violations.push_back("estimate leaves " + p.describe() + " by " + fmt(off));
  }
  std::size_t trajectories = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SeededRng r2(derive_seed(11, seed));
    const Classifier model = zoo::random_two_layer_tanh(s, 3, 8, r2);
    const AttackSpec spec = AttackSpec::untargeted(model, zoo::random_image(s, r2));
    const ImageTensor source = synthetic_start(model, spec, r2);
    for (const auto& p : {Projection::identity(s), Projection::spatial(s, 5)}) {
      AttackConfig ac;
      ac.max_queries = 1500;
      ac.seed = seed;
      const auto tr = run_attack(model, spec, source, p, ac);
      for (const auto& v : trajectory_violations(tr, spec.reference)) violations.push_back(v);
      if (tr.queries_used != (tr.records.empty() ? 0 : tr.records.back().queries) && tr.stop != StopReason::Budget)
        violations.push_back("queries_used disagrees with ledger");
      ++trajectories;
    }
  }
  return {violations.empty(), std::to_string(violations.size()) + " violations over " + std::to_string(trajectories) +
                                  " trajectories" + (violations.empty() ? "" : ", first: " + violations.front())};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"AC1 beta moment", beta_moment},
      {"AC2 linear optimality bridge", linear_bridge},
      {"AC3 identity boundary constant", tighter_constant},
      {"AC4 bound curves", figure4},
      {"AC5 concentration scaling", concentration_scaling},
      {"AC6 sensitivity isotropy", sensitivity_isotropy},
      {"AC7 k adjustment trend", k_trend},
      {"AC8 attack efficiency", attack_efficiency},
      {"AC9 scale search", scale_search_correctness},
      {"AC10 service parity", service_parity},
      {"AC11 structural invariants", structural},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
