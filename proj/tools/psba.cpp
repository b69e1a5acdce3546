// psba: experiment runner.
//
//   psba attack       --config FILE [--seed N] [--oracle local|URL] [--out DIR]
//   psba scale-search --config FILE [--seed N] [--out DIR]
//   psba bounds       --config FILE [--out DIR]
//   psba verify       --config FILE [--suite NAME] [--seed N] [--out DIR]
//   psba serve        --config FILE
//
// Exit codes: 0 ok, 1 other, 2 config, 3 io, 4 budget, 5 transport,
// 6 verification failed, 7 desync.

#include <yaml-cpp/yaml.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <future>
#include <iostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "psba/psba.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace psba;

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kIo = 3, kBudget = 4, kTransport = 5, kVerify = 6, kDesync = 7 };

std::shared_ptr<spdlog::logger> logger() {
  static auto log = [] {
    auto l = spdlog::stderr_color_mt("psba");
    l->set_pattern("[%l] %v");
    l->set_level(spdlog::level::info);
    if (const char* env = std::getenv("PSBA_LOG")) l->set_level(spdlog::level::from_str(env));
    return l;
  }();
  return log;
}

// ---------------------------------------------------------------------------
// Config loading

json yaml_to_json(const YAML::Node& node) {
  switch (node.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined:
      return nullptr;
    case YAML::NodeType::Sequence: {
      json arr = json::array();
      for (const auto& e : node) arr.push_back(yaml_to_json(e));
      return arr;
    }
    case YAML::NodeType::Map: {
      json obj = json::object();
      for (const auto& kv : node) obj[kv.first.as<std::string>()] = yaml_to_json(kv.second);
      return obj;
    }
    case YAML::NodeType::Scalar:
      break;
  }
  const std::string s = node.Scalar();
  if (node.Tag() == "!") return s;  // quoted
  if (s == "true" || s == "True") return true;
  if (s == "false" || s == "False") return false;
  if (s == "null" || s == "~") return nullptr;
  std::int64_t i = 0;
  auto ri = std::from_chars(s.data(), s.data() + s.size(), i);
  if (ri.ec == std::errc() && ri.ptr == s.data() + s.size()) return i;
  double d = 0.0;
  auto rd = std::from_chars(s.data(), s.data() + s.size(), d);
  if (rd.ec == std::errc() && rd.ptr == s.data() + s.size()) return d;
  return s;
}

struct Config {
  json root;
  fs::path dir;  // relative paths resolve against the config file's directory

  fs::path resolve(const std::string& p) const {
    fs::path path(p);
    return path.is_absolute() ? path : dir / path;
  }
};

Config load_config(const fs::path& path) {
  const std::string text = read_text(path);
  Config c;
  c.dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  try {
    if (path.extension() == ".json") {
      c.root = json::parse(text);
    } else {
      c.root = yaml_to_json(YAML::Load(text));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config is not valid YAML: ") + e.what());
  }
  if (!c.root.is_object()) throw ConfigError("config must be a mapping");
  return c;
}

// Schema helpers: every section lists its keys, anything else is rejected.

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a mapping");
  for (const auto& [k, v] : obj.items()) {
    if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

const json& require(const json& obj, const std::string& key, const std::string& where) {
  if (!obj.contains(key)) throw ConfigError(where + "." + key + " is required");
  return obj.at(key);
}

template <class T>
T get(const json& obj, const std::string& key, const std::string& where, T fallback) {
  if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

template <class T>
std::optional<T> get_opt(const json& obj, const std::string& key, const std::string& where) {
  if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

template <class T>
T get_req(const json& obj, const std::string& key, const std::string& where) {
  const auto& v = require(obj, key, where);
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

Shape parse_shape(const json& j, const std::string& where) {
  std::vector<std::size_t> d;
  try {
    d = j.get<std::vector<std::size_t>>();
  } catch (const json::exception&) {
    throw ConfigError(where + " must be [channels, height, width]");
  }
  if (d.size() != 3 || d[0] == 0 || d[1] == 0 || d[2] == 0) throw ConfigError(where + " must be three positive sizes");
  return Shape{d[0], d[1], d[2]};
}

const std::set<std::string> kTopLevel = {"seed",        "model", "target", "source", "projection", "attack",
                                         "oracle",      "scale_search", "bounds", "verify", "serve"};

void validate_top(const Config& c) { check_keys(c.root, kTopLevel, "config"); }

std::uint64_t config_seed(const Config& c, std::optional<std::uint64_t> override_seed) {
  if (override_seed) return *override_seed;
  return get<std::uint64_t>(c.root, "seed", "config", 0);
}

std::shared_ptr<const Classifier> build_model(const Config& c) {
  const json& m = require(c.root, "model", "config");
  check_keys(m, {"file", "zoo", "shape", "classes", "hidden", "side", "eps", "seed", "offset"}, "model");
  if (m.contains("file")) {
    if (m.contains("zoo")) throw ConfigError("model takes either file or zoo, not both");
    const fs::path path = c.resolve(get_req<std::string>(m, "file", "model"));
    json j;
    try {
      j = json::parse(read_text(path));
    } catch (const json::exception& e) {
      throw ConfigError("model file " + path.string() + " is not JSON: " + e.what());
    }
    return std::make_shared<const Classifier>(Classifier::from_json(j));
  }
  const auto kind = get_req<std::string>(m, "zoo", "model");
  const Shape shape = parse_shape(require(m, "shape", "model"), "model.shape");
  SeededRng rng(get<std::uint64_t>(m, "seed", "model", 1));
  const auto classes = get<std::size_t>(m, "classes", "model", 2);
  const auto hidden = get<std::size_t>(m, "hidden", "model", 16);
  const auto side = get<std::size_t>(m, "side", "model", 4);
  const auto eps = get<double>(m, "eps", "model", 0.05);
  const auto offset = get<double>(m, "offset", "model", 0.0);
  if (kind == "random_affine") return std::make_shared<const Classifier>(zoo::random_affine(shape, classes, rng));
  if (kind == "random_tanh")
    return std::make_shared<const Classifier>(zoo::random_two_layer_tanh(shape, classes, hidden, rng));
  if (kind == "random_radial") return std::make_shared<const Classifier>(zoo::random_radial(shape, classes, rng));
  if (kind == "lowfreq_affine")
    return std::make_shared<const Classifier>(zoo::lowfreq_affine(shape, side, eps, rng, offset));
  if (kind == "lowfreq_tanh")
    return std::make_shared<const Classifier>(zoo::lowfreq_tanh(shape, classes, hidden, side, eps, rng));
  throw ConfigError("unknown model.zoo '" + kind + "'");
}

ImageTensor build_image(const Config& c, const json& spec, Shape shape, const std::string& where) {
  check_keys(spec, {"fill", "values", "random_seed", "file"}, where);
  if (spec.size() != 1) throw ConfigError(where + " needs exactly one of fill, values, random_seed, file");
  if (spec.contains("fill")) return ImageTensor(shape, get_req<double>(spec, "fill", where));
  if (spec.contains("random_seed")) {
    SeededRng rng(get_req<std::uint64_t>(spec, "random_seed", where));
    return zoo::random_image(shape, rng);
  }
  std::vector<double> values;
  if (spec.contains("values")) {
    values = get_req<std::vector<double>>(spec, "values", where);
  } else {
    const fs::path path = c.resolve(get_req<std::string>(spec, "file", where));
    try {
      values = json::parse(read_text(path)).get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw ConfigError(where + ".file is not a JSON number array: " + e.what());
    }
  }
  if (values.size() != shape.size())
    throw ConfigError(where + " has " + std::to_string(values.size()) + " values, expected " +
                      std::to_string(shape.size()));
  return ImageTensor(shape, std::move(values));
}

AttackSpec build_spec(const Config& c, const Classifier& model) {
  const json& t = require(c.root, "target", "config");
  check_keys(t, {"image", "mode", "label"}, "target");
  ImageTensor x = build_image(c, require(t, "image", "target"), model.input_shape(), "target.image");
  const auto mode = get<std::string>(t, "mode", "target", "untargeted");
  if (mode == "untargeted") {
    if (t.contains("label")) throw ConfigError("target.label applies to targeted attacks only");
    return AttackSpec::untargeted(model, std::move(x));
  }
  if (mode == "targeted") {
    const auto label = get_req<std::size_t>(t, "label", "target");
    if (label >= model.num_classes()) throw ConfigError("target.label outside the model's classes");
    return AttackSpec::targeted(label, std::move(x));
  }
  throw ConfigError("target.mode must be untargeted or targeted");
}

ImageTensor build_source(const Config& c, const Classifier& model, const AttackSpec& spec, std::uint64_t seed) {
  if (!c.root.contains("source")) {
    SeededRng rng(derive_seed(seed, 1));
    return synthetic_start(model, spec, rng);
  }
  const json& s = c.root.at("source");
  check_keys(s, {"image", "synthetic"}, "source");
  if (s.contains("image") == s.contains("synthetic")) throw ConfigError("source takes exactly one of image, synthetic");
  if (s.contains("image")) return build_image(c, s.at("image"), model.input_shape(), "source.image");
  const json& syn = s.at("synthetic");
  check_keys(syn, {"seed", "radius"}, "source.synthetic");
  SeededRng rng(get<std::uint64_t>(syn, "seed", "source.synthetic", derive_seed(seed, 1)));
  return synthetic_start(model, spec, rng, get<double>(syn, "radius", "source.synthetic", 1.0));
}

Projection build_projection(const json& j, Shape shape, const std::string& where) {
  check_keys(j, {"kind", "side", "k"}, where);
  try {
    return Projection::from_json(j, shape);
  } catch (const PreconditionError& e) {
    throw ConfigError(where + ": " + e.what());
  } catch (const InvalidDimension& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

AttackConfig build_attack_config(const Config& c, std::uint64_t seed) {
  AttackConfig ac;
  ac.seed = seed;
  if (c.root.contains("attack")) {
    const json& a = c.root.at("attack");
    check_keys(a,
               {"samples_per_step", "max_queries", "max_iterations", "theta", "delta", "success_mse", "query_caps",
                "runs"},
               "attack");
    ac.samples_per_step = get<std::size_t>(a, "samples_per_step", "attack", 100);
    ac.max_queries = get_opt<std::uint64_t>(a, "max_queries", "attack");
    ac.max_iterations = get_opt<std::size_t>(a, "max_iterations", "attack");
    ac.theta = get_opt<double>(a, "theta", "attack");
    ac.delta = get_opt<double>(a, "delta", "attack");
    ac.success_mse = get<double>(a, "success_mse", "attack", 1e-3);
    ac.query_caps = get<std::vector<std::uint64_t>>(a, "query_caps", "attack", {});
  }
  if (!ac.max_queries && !ac.max_iterations) throw ConfigError("attack needs max_queries or max_iterations");
  try {
    ac.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("attack: ") + e.what());
  }
  return ac;
}

std::optional<std::uint64_t> oracle_budget(const Config& c) {
  if (!c.root.contains("oracle")) return std::nullopt;
  const json& o = c.root.at("oracle");
  check_keys(o, {"budget"}, "oracle");
  return get_opt<std::uint64_t>(o, "budget", "oracle");
}

fs::path out_dir(const std::string& out) { return out.empty() ? fs::path(".") : fs::path(out); }

// ---------------------------------------------------------------------------
// Commands

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string oracle = "local";
  std::string out = "out";
  std::string suite;
};

int cmd_attack(const CommonArgs& args) {
  const Config c = load_config(args.config);
  validate_top(c);
  const std::uint64_t seed = config_seed(c, args.seed);
  const auto model = build_model(c);
  const AttackSpec spec = build_spec(c, *model);
  const Projection p = build_projection(require(c.root, "projection", "config"), model->input_shape(), "projection");
  const AttackConfig base = build_attack_config(c, seed);
  const auto budget = oracle_budget(c);
  const std::size_t runs =
      c.root.contains("attack") ? get<std::size_t>(c.root.at("attack"), "runs", "attack", 1) : std::size_t{1};
  if (runs < 1) throw ConfigError("attack.runs must be >= 1");
  const bool remote = args.oracle != "local";
  if (remote && args.oracle.rfind("http://", 0) != 0) throw ConfigError("--oracle must be 'local' or an http:// URL");

  // run r uses seed derive(seed, r) for r > 0; run 0 uses the seed itself
  auto one_run = [&](std::size_t r) {
    AttackConfig ac = base;
    ac.seed = r == 0 ? seed : derive_seed(seed, r);
    const ImageTensor source = build_source(c, *model, spec, ac.seed);
    std::unique_ptr<MeteredOracle> oracle;
    if (remote) {
      oracle = std::make_unique<RemoteOracle>(args.oracle);
    } else {
      oracle = make_oracle(model, spec, budget);
    }
    auto tr = run_attack(*oracle, spec.reference, source, p, ac, Whitebox{*model, spec});
    return std::make_pair(std::move(tr), ac);
  };

  std::vector<std::pair<AttackTrajectory, AttackConfig>> results(runs);
  if (runs == 1) {
    results[0] = one_run(0);
  } else {
    const std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
    std::atomic<std::size_t> next{0};
    std::vector<std::future<void>> pool;
    for (std::size_t w = 0; w < std::min(workers, runs); ++w) {
      pool.push_back(std::async(std::launch::async, [&] {
        for (std::size_t r = next++; r < runs; r = next++) results[r] = one_run(r);
      }));
    }
    for (auto& f : pool) f.get();
  }

  const fs::path dir = out_dir(args.out);
  json summary;
  summary["projection"] = p.describe();
  summary["oracle"] = remote ? args.oracle : "local";
  summary["seed"] = seed;
  if (runs == 1) {
    write_atomic(dir / "trajectory.csv", trajectory_csv(results[0].first));
    summary.update(trajectory_summary(results[0].first, results[0].second));
  } else {
    json each = json::array();
    std::vector<AttackTrajectory> trs;
    for (std::size_t r = 0; r < runs; ++r) {
      write_atomic(dir / ("trajectory_" + std::to_string(r) + ".csv"), trajectory_csv(results[r].first));
      each.push_back(trajectory_summary(results[r].first, results[r].second));
      trs.push_back(results[r].first);
    }
    summary["runs"] = each;
    json rates = json::array();
    for (auto cap : base.query_caps) rates.push_back({{"cap", cap}, {"success_rate", success_rate(trs, base.success_mse, cap)}});
    summary["success_rates"] = rates;
  }
  write_atomic(dir / "summary.json", summary.dump(2) + "\n");
  for (const auto& [tr, ac] : results) {
    logger()->info("attack finished: {} iterations, {} queries, final mse {}", tr.records.empty() ? 0 : tr.records.back().t,
                   tr.queries_used, tr.records.empty() ? std::nan("") : tr.records.back().mse);
  }
  return kOk;
}

ScaleSchedule build_schedule(const json& j, Shape shape) {
  check_keys(j, {"kind", "sides", "ks", "levels", "include_full"}, "scale_search.schedule");
  const auto kind = get_req<std::string>(j, "kind", "scale_search.schedule");
  try {
    if (kind == "spatial") {
      std::vector<std::size_t> sides;
      if (j.contains("sides")) {
        sides = get_req<std::vector<std::size_t>>(j, "sides", "scale_search.schedule");
      } else {
        sides = ScaleSchedule::dyadic_sides(shape, get<std::size_t>(j, "levels", "scale_search.schedule", 4));
        const std::size_t full = std::min(shape.height, shape.width);
        if (get<bool>(j, "include_full", "scale_search.schedule", false) && shape.height == shape.width &&
            (sides.empty() || sides.back() != full))
          sides.push_back(full);
      }
      return ScaleSchedule::spatial(shape, sides);
    }
    if (kind == "freq_lowpass")
      return ScaleSchedule::freq_lowpass(shape, get_req<std::vector<std::size_t>>(j, "ks", "scale_search.schedule"));
  } catch (const PreconditionError& e) {
    throw ConfigError(std::string("scale_search.schedule: ") + e.what());
  }
  throw ConfigError("scale_search.schedule.kind must be spatial or freq_lowpass");
}

int cmd_scale_search(const CommonArgs& args) {
  const Config c = load_config(args.config);
  validate_top(c);
  if (args.oracle != "local") throw ConfigError("scale-search needs per-pair targets and runs against the local model");
  const std::uint64_t seed = config_seed(c, args.seed);
  const auto model = build_model(c);
  const AttackSpec base_spec = build_spec(c, *model);
  const json& s = require(c.root, "scale_search", "config");
  check_keys(s, {"schedule", "pairs", "steps", "samples_per_step", "jitter"}, "scale_search");
  const ScaleSchedule schedule = build_schedule(require(s, "schedule", "scale_search"), model->input_shape());
  const auto pair_count = get<std::size_t>(s, "pairs", "scale_search", 10);
  const auto jitter = get<double>(s, "jitter", "scale_search", 0.05);
  ScaleSearchConfig sc;
  sc.steps = get<std::size_t>(s, "steps", "scale_search", 10);
  sc.samples_per_step = get<std::size_t>(s, "samples_per_step", "scale_search", 100);
  sc.seed = seed;
  if (pair_count < 1 || sc.steps < 1 || sc.samples_per_step < 1)
    throw ConfigError("scale_search pairs, steps and samples_per_step must be >= 1");

  // Pair i: the configured target plus uniform jitter, with a synthetic start.
  std::vector<ValidationPair> pairs;
  std::vector<AttackSpec> specs;
  for (std::size_t i = 0; i < pair_count; ++i) {
    SeededRng rng(derive_seed(seed, 1000 + i));
    ImageTensor t = base_spec.reference;
    for (std::size_t k = 0; k < t.size(); ++k) t[k] += jitter * (2.0 * rng.uniform() - 1.0);
    AttackSpec spec = base_spec.mode == AttackMode::Untargeted ? AttackSpec::untargeted(*model, t)
                                                               : AttackSpec::targeted(base_spec.label, t);
    ImageTensor src = t;
    try {
      src = synthetic_start(*model, spec, rng);
    } catch (const PreconditionError&) {
      logger()->warn("pair {}: no synthetic start found", i);
    }
    pairs.push_back({src, t});
    specs.push_back(spec);
  }
  OracleFactory factory = [&](const ValidationPair& pair) -> std::unique_ptr<MeteredOracle> {
    for (std::size_t i = 0; i < pairs.size(); ++i)
      if (&pairs[i] == &pair) return make_oracle(model, specs[i]);
    throw Error("unknown validation pair");
  };
  const auto result = find_optimal_scale(factory, pairs, schedule, sc);
  for (const auto& w : result.warnings) logger()->warn("{}", w);

  std::string table = "scale,latent_dim,avg_mse,initial_boundary_queries,boundary_queries,estimation_queries,step_queries,total_queries\n";
  for (const auto& r : result.evaluated) {
    std::uint64_t total = 0;
    for (auto q : r.pair_queries) total += q;
    table += r.scale + "," + std::to_string(r.latent_dim) + "," + format_double(r.average_mse) + "," +
             std::to_string(r.initial_boundary_queries) + "," + std::to_string(r.boundary_queries) + "," + std::to_string(r.estimation_queries) + "," +
             std::to_string(r.step_queries) + "," + std::to_string(total) + "\n";
  }
  const fs::path dir = out_dir(args.out);
  write_atomic(dir / "scale_search.csv", table);
  json summary = {{"chosen_index", result.index},
                  {"chosen_scale", schedule[result.index].describe()},
                  {"chosen_latent_dim", schedule[result.index].latent_dim()},
                  {"valid_pairs", result.valid_pairs},
                  {"validation_queries", result.validation_queries},
                  {"warnings", result.warnings},
                  {"seed", seed}};
  write_atomic(dir / "summary.json", summary.dump(2) + "\n");
  std::cout << schedule[result.index].describe() << "\n";
  logger()->info("optimal scale {} (m = {})", schedule[result.index].describe(), schedule[result.index].latent_dim());
  return kOk;
}

int cmd_bounds(const CommonArgs& args) {
  const Config c = load_config(args.config);
  validate_top(c);
  const json& b = require(c.root, "bounds", "config");
  check_keys(b, {"profile", "n", "rate", "degree", "beta_S", "beta_f", "sampling_term", "B", "p", "form", "C"},
             "bounds");
  const auto n = get<std::size_t>(b, "n", "bounds", 20);
  if (n < 2) throw ConfigError("bounds.n must be >= 2");
  const auto profile = get<std::string>(b, "profile", "bounds", "exponential");
  std::vector<double> energy;
  try {
    if (profile == "exponential") {
      energy = exponential_profile(n, get<double>(b, "rate", "bounds", 1.0));
    } else if (profile == "quadratic") {
      energy = quadratic_profile(n, get<double>(b, "degree", "bounds", 2.0));
    } else {
      throw ConfigError("bounds.profile must be exponential or quadratic");
    }
    CurveOptions opt;
    opt.beta_S = get<double>(b, "beta_S", "bounds", 0.5);
    opt.beta_f = get<double>(b, "beta_f", "bounds", 0.0);
    opt.sampling_term = get<bool>(b, "sampling_term", "bounds", false);
    opt.form = scale_objective_from_string(get<std::string>(b, "form", "bounds", "expectation"));
    opt.B = get<std::size_t>(b, "B", "bounds", 100);
    opt.p = get<double>(b, "p", "bounds", 0.05);
    opt.C = get<double>(b, "C", "bounds", 1.0);
    const auto curve = figure4_curves(energy, opt);
    write_atomic(out_dir(args.out) / "bounds.csv", curve_csv(curve));
    logger()->info("bound curve peaks at m = {}", curve_argmax(curve));
    std::cout << "argmax_m " << curve_argmax(curve) << "\n";
  } catch (const PreconditionError& e) {
    throw ConfigError(std::string("bounds: ") + e.what());
  }
  return kOk;
}

// Verification suites ------------------------------------------------------

struct Check {
  std::string name;
  bool pass;
  std::string detail;
};

std::vector<Check> suite_beta(std::uint64_t seed, std::size_t samples) {
  std::vector<Check> out;
  for (std::size_t m : {2, 10, 100}) {
    SeededRng rng(derive_seed(seed, m));
    double acc = 0.0;
    for (std::size_t i = 0; i < samples; ++i) acc += std::abs(sample_unit_sphere(m, rng)[0]);
    const double mc = acc / static_cast<double>(samples);
    const double exact = beta_mean_abs_v1(m);
    const double rel = std::abs(mc - exact) / exact;
    out.push_back({"beta_mean_abs_v1 m=" + std::to_string(m), rel <= 0.02,
                   "closed form " + format_double(exact) + ", monte carlo " + format_double(mc)});
  }
  return out;
}

std::vector<Check> suite_sensitivity(std::uint64_t seed, std::size_t samples) {
  const Shape shape{3, 16, 16};
  SeededRng rng(seed);
  const auto model = zoo::random_affine(shape, 2, rng);
  const auto spec = AttackSpec::untargeted(model, ImageTensor(shape, 0.5));
  const auto g = true_gradient(model, spec, spec.reference).gradient;
  std::vector<Check> out;
  for (const auto& p : {Projection::identity(shape), Projection::spatial(shape, 8), Projection::freq_lowpass(shape, 8)}) {
    const auto rep = estimate_sensitivity(p, g, 0.01, samples, rng);
    const double ratio = rep.alpha1_sq / rep.mean_orth;
    out.push_back({"sensitivity ratio " + p.describe(), std::abs(ratio - 1.0) <= 0.15,
                   "alpha1^2 / mean orthogonal = " + format_double(ratio)});
  }
  return out;
}

std::vector<Check> suite_spectrum(std::uint64_t seed, std::size_t samples) {
  const Shape shape{3, 32, 32};
  SeededRng rng(seed);
  const auto model = zoo::lowfreq_tanh(shape, 2, 16, 4, 0.05, rng);
  std::vector<ImageTensor> grads;
  for (std::size_t i = 0; i < samples; ++i) {
    const ImageTensor x = zoo::random_image(shape, rng);
    const auto spec = AttackSpec::untargeted(model, x);
    grads.push_back(true_gradient(model, spec, x).gradient);
  }
  const auto profile = spectrum_profile(grads, 8);
  std::vector<Check> out;
  for (std::size_t ch = 0; ch < shape.channels; ++ch) {
    const auto bins = bin_means(profile[ch], 4);
    out.push_back({"spectrum channel " + std::to_string(ch), bins.front() > bins.back(),
                   "lowest-frequency bin " + format_double(bins.front()) + ", highest " + format_double(bins.back())});
  }
  return out;
}

int cmd_verify(const CommonArgs& args) {
  std::string suite = args.suite;
  std::uint64_t seed = args.seed.value_or(0);
  std::size_t samples = 0;
  if (!args.config.empty()) {
    const Config c = load_config(args.config);
    validate_top(c);
    seed = config_seed(c, args.seed);
    if (c.root.contains("verify")) {
      const json& v = c.root.at("verify");
      check_keys(v, {"suite", "samples"}, "verify");
      if (suite.empty()) suite = get<std::string>(v, "suite", "verify", "");
      samples = get<std::size_t>(v, "samples", "verify", 0);
    }
  }
  if (suite.empty()) throw ConfigError("verify needs a suite (beta, sensitivity, spectrum)");
  std::vector<Check> checks;
  if (suite == "beta") {
    checks = suite_beta(seed, samples ? samples : 200000);
  } else if (suite == "sensitivity") {
    checks = suite_sensitivity(seed, samples ? samples : 4000);
  } else if (suite == "spectrum") {
    checks = suite_spectrum(seed, samples ? samples : 64);
  } else {
    throw ConfigError("unknown verify suite '" + suite + "'");
  }
  bool all = true;
  json report = json::array();
  for (const auto& ch : checks) {
    std::cout << (ch.pass ? "PASS " : "FAIL ") << ch.name << ": " << ch.detail << "\n";
    report.push_back({{"check", ch.name}, {"pass", ch.pass}, {"detail", ch.detail}});
    all = all && ch.pass;
  }
  write_atomic(out_dir(args.out) / ("verify_" + suite + ".json"),
               json{{"suite", suite}, {"pass", all}, {"checks", report}}.dump(2) + "\n");
  return all ? kOk : kVerify;
}

std::atomic<bool> g_stop{false};
extern "C" void on_signal(int) { g_stop = true; }

int cmd_serve(const CommonArgs& args) {
  const Config c = load_config(args.config);
  validate_top(c);
  const auto model = build_model(c);
  const AttackSpec spec = build_spec(c, *model);
  ServerOptions opt;
  std::string host = "127.0.0.1";
  int port = 0;
  if (c.root.contains("serve")) {
    const json& s = c.root.at("serve");
    check_keys(s, {"host", "port", "budget", "delay_ms"}, "serve");
    host = get<std::string>(s, "host", "serve", host);
    port = get<int>(s, "port", "serve", 0);
    opt.budget = get_opt<std::uint64_t>(s, "budget", "serve");
    opt.delay = std::chrono::milliseconds(get<int>(s, "delay_ms", "serve", 0));
  }
  if (!opt.budget) opt.budget = oracle_budget(c);
  OracleServer server(model, spec, opt);
  const int bound = server.start(host, port);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "listening on http://" << host << ":" << bound << std::endl;
  logger()->info("serving {} classifier, budget {}", to_string(model->kind()),
                 opt.budget ? std::to_string(*opt.budget) : "unlimited");
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  return kOk;
}

int run(int argc, char** argv) {
  CLI::App app{"Projective boundary attack experiments"};
  app.require_subcommand(1);
  CommonArgs args;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", args.config, "Experiment config (YAML or JSON)");
    if (needs_config) opt->required();
    sub->add_option("--seed", seed, "Override the config seed")->each([&](const std::string&) { args.seed = seed; });
    sub->add_option("--out", args.out, "Output directory")->capture_default_str();
  };
  auto* attack = app.add_subcommand("attack", "Run the boundary attack");
  add_common(attack, true);
  attack->add_option("--oracle", args.oracle, "local or an http:// oracle service URL")->capture_default_str();
  auto* scale = app.add_subcommand("scale-search", "Progressive optimal-scale search");
  add_common(scale, true);
  scale->add_option("--oracle", args.oracle, "only 'local' is supported")->capture_default_str();
  auto* bounds = app.add_subcommand("bounds", "Bound curves over the scale m");
  add_common(bounds, true);
  auto* verify = app.add_subcommand("verify", "Numerical verification suites");
  add_common(verify, false);
  verify->add_option("--suite", args.suite, "beta | sensitivity | spectrum");
  auto* serve = app.add_subcommand("serve", "Run the decision oracle service");
  serve->add_option("--config", args.config, "Experiment config (YAML or JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*attack) return cmd_attack(args);
    if (*scale) return cmd_scale_search(args);
    if (*bounds) return cmd_bounds(args);
    if (*verify) return cmd_verify(args);
    if (*serve) return cmd_serve(args);
  } catch (const ConfigError& e) {
    logger()->error("config: {}", e.what());
    return kConfig;
  } catch (const IoError& e) {
    logger()->error("io: {}", e.what());
    return kIo;
  } catch (const BudgetExhausted& e) {
    logger()->error("budget: {}", e.what());
    return kBudget;
  } catch (const TransportError& e) {
    logger()->error("transport: {}", e.what());
    return kTransport;
  } catch (const DesyncError& e) {
    logger()->error("desync: {}", e.what());
    return kDesync;
  } catch (const PartialEstimate& e) {
    logger()->error("{}", e.what());
    return e.cause() == PartialEstimate::Cause::Transport ? kTransport : kBudget;
  } catch (const std::exception& e) {
    logger()->error("{}", e.what());
    return kOther;
  }
  return kOther;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
