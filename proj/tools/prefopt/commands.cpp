#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <ostream>
#include <thread>

#include <fmt/format.h>

#include "prefopt/corpus.hpp"
#include "prefopt/csv.hpp"
#include "prefopt/diagnostics.hpp"
#include "prefopt/errors.hpp"
#include "prefopt/parallel.hpp"
#include "prefopt/rng.hpp"
#include "prefopt/trainer.hpp"

namespace prefopt::cli {

namespace fs = std::filesystem;

namespace {

constexpr double kGradTolerance = 1e-6;

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

Json train_defaults() {
  Json j;
  j["dataset"] = nullptr;
  j["vocab"] = 16;
  j["order"] = 2;
  j["init"] = "zero";
  j["init_stdev"] = 0.1;
  j["sample_log"] = false;
  const Json train = to_json(TrainConfig{});
  for (const auto& [k, v] : train.items()) j[k] = v;
  return j;
}

Json method_names(std::span<const Method> methods) {
  Json j = Json::array();
  for (const Method m : methods) j.push_back(to_string(m));
  return j;
}

fs::path required_path(const Json& cfg, std::string_view key) {
  const auto it = cfg.find(std::string(key));
  if (it == cfg.end() || it->is_null()) {
    throw ConfigError("--" + std::string(key) + " is required");
  }
  return get<std::string>(cfg, key);
}

Dataset load_dataset(const Json& cfg) {
  Dataset ds = load_jsonl(required_path(cfg, "dataset"));
  if (ds.empty()) throw ConfigError("dataset is empty");
  return ds;
}

Policy make_init(const Json& cfg, std::uint64_t seed) {
  const int vocab = get<int>(cfg, "vocab");
  const int order = get<int>(cfg, "order");
  const auto kind = get<std::string>(cfg, "init");
  if (kind == "zero") return Policy(vocab, order);
  if (kind == "gaussian") return Policy::gaussian(vocab, order, get<double>(cfg, "init_stdev"), seed);
  throw ConfigError("unknown init \"" + kind + "\"");
}

/// Policy from `checkpoint` when given, else the uniform policy.
Policy policy_for_diagnostics(const Json& cfg) {
  if (!cfg.at("checkpoint").is_null()) return load_checkpoint(fs::path(get<std::string>(cfg, "checkpoint")));
  return Policy(get<int>(cfg, "vocab"), get<int>(cfg, "order"));
}

struct FinalMetrics {
  double loss = 0.0;
  double win_rate = 0.0;
  double mean_gamma = 0.0;
};

/// Full-dataset loss, win rate and mean effective margin of `policy`, with
/// `init` as the reference for methods that read one.
FinalMetrics final_metrics(const TrainConfig& cfg, const Policy& policy, const Policy& init,
                           std::span<const PreferenceTriplet> ds) {
  const LossResult r =
      evaluate_batch(cfg.loss, policy, needs_reference(cfg.loss.method) ? &init : nullptr, ds);
  FinalMetrics m;
  m.loss = r.loss;
  m.win_rate = evaluate_win_rate(policy, ds, cfg.loss.beta, cfg.loss.length_norm);
  for (const auto& s : r.diag.samples) m.mean_gamma += s.gamma;
  m.mean_gamma /= static_cast<double>(r.diag.samples.size());
  return m;
}

// gen-data

Json gen_data_defaults() {
  return Json{{"n", 1000},        {"vocab", 16},         {"seed", 0},
              {"gap", 20.0},      {"low_gap", nullptr},  {"max_prompt_len", 1},
              {"max_resp_len", 3}};
}

CommandResult gen_data(const Json& cfg, const fs::path& out, std::ostream& log) {
  const auto n = get<std::int64_t>(cfg, "n");
  if (n < 1) throw ConfigError("--n must be >= 1");
  const Vocab vocab(get<int>(cfg, "vocab"));
  const auto seed = get<std::uint64_t>(cfg, "seed");
  const double gap = get<double>(cfg, "gap");
  Dataset ds;
  if (cfg.at("low_gap").is_null()) {
    ds = planted_dataset(vocab, gap, static_cast<std::size_t>(n), seed,
                         get<int>(cfg, "max_prompt_len"), get<int>(cfg, "max_resp_len"));
  } else {
    if (get<int>(cfg, "max_prompt_len") != 1 || get<int>(cfg, "max_resp_len") != 3) {
      throw ConfigError("--low-gap uses the default length bounds");
    }
    ds = mixed_confidence_dataset(vocab, gap, get<double>(cfg, "low_gap"),
                                  static_cast<std::size_t>(n), seed);
  }
  save_jsonl(ds, out / "dataset.jsonl");
  double mean_gap = 0.0;
  for (const auto& t : ds) mean_gap += t.gap;
  mean_gap /= static_cast<double>(ds.size());
  log << fmt::format("n={} vocab={} mean_gap={:.6g}\n", ds.size(), vocab.size(), mean_gap);
  return {{"dataset.jsonl"}, kExitOk};
}

// train

CommandResult train_cmd(const Json& cfg, const fs::path& out, std::ostream& log) {
  const TrainConfig tc = train_from_json(cfg);
  const Dataset ds = load_dataset(cfg);
  const Policy init = make_init(cfg, tc.seed);

  CommandResult result;
  std::ofstream samples;
  StepObserver observer;
  if (get<bool>(cfg, "sample_log")) {
    samples = open_out(out / "samples.csv");
    write_diagnostics_header(samples);
    observer = [&samples](std::size_t step, const BatchDiagnostics& d) {
      write_diagnostics_rows(samples, step, d);
    };
  }
  const TrainResult trained = train(tc, ds, init, observer);
  if (samples.is_open()) {
    samples.close();
    result.artifacts.push_back("samples.csv");
  }

  save_checkpoint(trained.policy, out / "checkpoint.json");
  {
    auto h = open_out(out / "history.csv");
    write_history_csv(h, trained.history);
  }
  const FinalMetrics before = final_metrics(tc, init, init, ds);
  const FinalMetrics after = final_metrics(tc, trained.policy, init, ds);
  Json summary;
  summary["method"] = to_string(tc.loss.method);
  summary["steps"] = tc.steps;
  summary["final_loss"] = after.loss;
  summary["final_win_rate"] = after.win_rate;
  summary["initial_mean_gamma"] = before.mean_gamma;
  summary["final_mean_gamma"] = after.mean_gamma;
  {
    auto s = open_out(out / "summary.json");
    s << summary.dump(2) << "\n";
  }
  result.artifacts.insert(result.artifacts.end(), {"checkpoint.json", "history.csv", "summary.json"});
  log << fmt::format("method={} steps={} final_loss={:.6g} win_rate={:.4f} mean_gamma {:.4f} -> {:.4f}\n",
                     to_string(tc.loss.method), tc.steps, after.loss, after.win_rate,
                     before.mean_gamma, after.mean_gamma);
  return result;
}

// sweep

Json sweep_defaults() {
  Json j = train_defaults();
  j["grid"] = Json{{"method", nullptr}, {"beta", nullptr}, {"gamma", nullptr},
                   {"bounds", nullptr}, {"schedule", nullptr}};
  j["jobs"] = 0;
  return j;
}

template <class T>
std::vector<T> grid_axis(const Json& grid, std::string_view key, T base) {
  const Json& v = grid.at(std::string(key));
  if (v.is_null()) return {base};
  auto items = get<std::vector<T>>(grid, key);
  if (items.empty()) throw ConfigError("sweep grid \"" + std::string(key) + "\" is empty");
  return items;
}

CommandResult sweep_cmd(const Json& cfg, const fs::path& out, std::ostream& log) {
  const TrainConfig base = train_from_json(cfg);
  const Dataset ds = load_dataset(cfg);
  const Policy init = make_init(cfg, base.seed);
  const Json& grid = cfg.at("grid");

  const auto methods = grid_axis<std::string>(grid, "method", std::string(to_string(base.loss.method)));
  const auto betas = grid_axis<double>(grid, "beta", base.loss.beta);
  const auto gammas = grid_axis<double>(grid, "gamma", base.loss.gamma);
  const auto bounds = grid_axis<std::vector<double>>(
      grid, "bounds", std::vector<double>{base.loss.gamma_min, base.loss.gamma_max});
  const auto schedules =
      grid_axis<std::string>(grid, "schedule", std::string(to_string(base.loss.schedule)));

  std::vector<TrainConfig> points;
  for (const auto& m : methods) {
    for (const double b : betas) {
      for (const double g : gammas) {
        for (const auto& bd : bounds) {
          if (bd.size() != 2) throw ConfigError("sweep bounds entries must be [gamma_min, gamma_max]");
          for (const auto& s : schedules) {
            TrainConfig tc = base;
            tc.loss.method = parse_method(m);
            tc.loss.beta = b;
            tc.loss.gamma = g;
            tc.loss.gamma_min = bd[0];
            tc.loss.gamma_max = bd[1];
            tc.loss.schedule = parse_schedule(s);
            tc.validate();
            points.push_back(tc);
          }
        }
      }
    }
  }

  std::vector<FinalMetrics> metrics(points.size());
  const auto jobs = get<unsigned>(cfg, "jobs");
  parallel_for(points.size(), jobs == 0 ? default_jobs(points.size()) : jobs, [&](std::size_t i) {
    const TrainResult trained = train(points[i], ds, init);
    metrics[i] = final_metrics(points[i], trained.policy, init, ds);
  });

  auto csv_out = open_out(out / "results.csv");
  csv_out << "method,beta,gamma,gamma_min,gamma_max,schedule,final_loss,win_rate,mean_gamma\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    const LossConfig& l = points[i].loss;
    csv::row(csv_out, to_string(l.method), l.beta, l.gamma, l.gamma_min, l.gamma_max,
             to_string(l.schedule), metrics[i].loss, metrics[i].win_rate, metrics[i].mean_gamma);
  }
  const auto best = std::max_element(metrics.begin(), metrics.end(), [](const auto& a, const auto& b) {
    return a.win_rate < b.win_rate;
  });
  log << fmt::format("points={} best_win_rate={:.4f}\n", points.size(), best->win_rate);
  return {{"results.csv"}, kExitOk};
}

// diagnose grad-check

Json grad_check_defaults() {
  return Json{{"methods", method_names(kTableMethods)},
              {"instances", 20},
              {"h", 1e-5},
              {"seed", 0},
              {"vocab", 6},
              {"batch", 4}};
}

CommandResult grad_check_cmd(const Json& cfg, const fs::path& out, std::ostream& log) {
  std::vector<Method> methods;
  for (const auto& name : get<std::vector<std::string>>(cfg, "methods")) {
    methods.push_back(parse_method(name));
  }
  if (methods.empty()) throw ConfigError("grad-check needs at least one method");
  const auto instances = get<std::size_t>(cfg, "instances");
  if (instances < 1) throw ConfigError("--instances must be >= 1");
  const auto rows = grad_check_suite(methods, instances, get<double>(cfg, "h"),
                                     get<std::uint64_t>(cfg, "seed"), get<int>(cfg, "vocab"),
                                     get<std::size_t>(cfg, "batch"));
  {
    auto o = open_out(out / "grad_check.csv");
    write_grad_check_csv(o, rows);
  }
  double worst = 0.0;
  for (const Method m : methods) {
    double mx = 0.0;
    for (const auto& r : rows) {
      if (r.method == m) mx = std::max(mx, r.report.max_rel_error);
    }
    worst = std::max(worst, mx);
    log << fmt::format("{:<10} max_rel_error={:.3e}\n", to_string(m), mx);
  }
  const bool pass = worst < kGradTolerance;
  log << fmt::format("{} max_rel_error={:.3e} (tolerance {:.0e})\n", pass ? "PASS" : "FAIL", worst,
                     kGradTolerance);
  return {{"grad_check.csv"}, pass ? kExitOk : kExitCheckFailed};
}

// diagnose dists

Json dists_defaults() {
  const PopularityOptions p;
  return Json{{"dataset", nullptr},
              {"checkpoint", nullptr},
              {"vocab", 16},
              {"order", 2},
              {"bins", 64},
              {"popularity", false},
              {"popularity_options",
               Json{{"vocab", p.vocab},
                    {"n", p.n},
                    {"templates", p.templates},
                    {"popularity", p.popularity},
                    {"quality_bonus", p.quality_bonus},
                    {"sft_samples", p.sft_samples},
                    {"smoothing", p.smoothing},
                    {"seed", p.seed}}}};
}

CommandResult dists_cmd(const Json& cfg, const fs::path& out, std::ostream& log) {
  const auto bins = get<std::size_t>(cfg, "bins");
  std::vector<double> dlog;
  std::vector<double> dpmi;
  CommandResult result;
  bool pass = true;
  if (get<bool>(cfg, "popularity")) {
    const Json& po = cfg.at("popularity_options");
    PopularityOptions p;
    p.vocab = get<int>(po, "vocab");
    p.n = get<std::size_t>(po, "n");
    p.templates = get<std::size_t>(po, "templates");
    p.popularity = get<double>(po, "popularity");
    p.quality_bonus = get<double>(po, "quality_bonus");
    p.sft_samples = get<std::size_t>(po, "sft_samples");
    p.smoothing = get<double>(po, "smoothing");
    p.seed = get<std::uint64_t>(po, "seed");
    const PopularityReport rep = popularity_bias_experiment(p);
    dlog = rep.dlog;
    dpmi = rep.dpmi;
    save_jsonl(rep.dataset, out / "popularity_dataset.jsonl");
    auto o = open_out(out / "popularity.csv");
    o << "sample,dlog,dpmi\n";
    for (std::size_t i = 0; i < dlog.size(); ++i) csv::row(o, i, dlog[i], dpmi[i]);
    result.artifacts.insert(result.artifacts.end(), {"popularity_dataset.jsonl", "popularity.csv"});
    const double bound = 0.1 * rep.stdev_dpmi;
    pass = std::abs(rep.mean_dpmi) <= bound && std::abs(rep.mean_dlog) > bound;
    log << fmt::format("mean_dlog={:.4f} sd_dlog={:.4f} mean_dpmi={:.5f} sd_dpmi={:.4f}\n",
                       rep.mean_dlog, rep.stdev_dlog, rep.mean_dpmi, rep.stdev_dpmi);
    log << fmt::format("{} |mean dpmi| <= 0.1 sd(dpmi) = {:.5f} < |mean dlog|\n",
                       pass ? "PASS" : "FAIL", bound);
  } else {
    const Dataset ds = load_dataset(cfg);
    const Policy policy = policy_for_diagnostics(cfg);
    dlog = delta_values(policy, ds, DistMode::conditional);
    dpmi = delta_values(policy, ds, DistMode::marginal_corrected);
  }
  for (const auto& [mode, values] : {std::pair{DistMode::conditional, &dlog},
                                     std::pair{DistMode::marginal_corrected, &dpmi}}) {
    const std::string name = "dist_" + std::string(to_string(mode)) + ".csv";
    auto o = open_out(out / name);
    write_histogram_csv(o, make_histogram(*values, bins));
    result.artifacts.push_back(name);
  }
  result.exit_code = pass ? kExitOk : kExitCheckFailed;
  return result;
}

// diagnose density

Json density_defaults() { return Json{{"dataset", nullptr}, {"jitter", 0.5}, {"seed", 0}}; }

CommandResult density_cmd(const Json& cfg, const fs::path& out, std::ostream& log) {
  const Dataset ds = load_dataset(cfg);
  Rng rng = make_rng(get<std::uint64_t>(cfg, "seed"), Stream::jitter);
  const auto values = reward_density(ds, get<double>(cfg, "jitter"), rng);
  auto o = open_out(out / "density.csv");
  o << "sample,rank_gap,value\n";
  for (std::size_t i = 0; i < ds.size(); ++i) csv::row(o, i, rank_gap(ds[i]), values[i]);
  log << fmt::format("samples={}\n", ds.size());
  return {{"density.csv"}, kExitOk};
}

// diagnose gamma-hist

Json gamma_hist_defaults() {
  return Json{{"dataset", nullptr}, {"checkpoint", nullptr}, {"vocab", 16},
              {"order", 2},         {"bins", 64},            {"loss", to_json(LossConfig{})}};
}

CommandResult gamma_hist_cmd(const Json& cfg, const fs::path& out, std::ostream& log) {
  const Dataset ds = load_dataset(cfg);
  const Policy policy = policy_for_diagnostics(cfg);
  const LossConfig loss = loss_from_json(cfg.at("loss"));
  const Histogram h = gamma_histogram(policy, ds, loss, get<std::size_t>(cfg, "bins"));
  auto o = open_out(out / "gamma_hist.csv");
  write_histogram_csv(o, h);
  const auto nonzero = std::count_if(h.counts.begin(), h.counts.end(), [](auto c) { return c > 0; });
  const auto values = gamma_values(policy, ds, loss);
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  log << fmt::format("gamma in [{:.6g}, {:.6g}] mean={:.6g} nonzero_bins={}\n", *lo, *hi, mean,
                     nonzero);
  return {{"gamma_hist.csv"}, kExitOk};
}

// diagnose dominance

Json dominance_defaults() {
  Json j = train_defaults();
  j["betas"] = Json::array({1.0, 2.0, 4.0});
  j["gammas"] = Json::array({1.0});
  j["jobs"] = 0;
  return j;
}

CommandResult dominance_cmd(const Json& cfg, const fs::path& out, std::ostream& log) {
  const TrainConfig base = train_from_json(cfg);
  const Dataset ds = load_dataset(cfg);
  const Policy init = make_init(cfg, base.seed);
  const auto betas = get<std::vector<double>>(cfg, "betas");
  const auto gammas = get<std::vector<double>>(cfg, "gammas");
  const auto jobs = get<unsigned>(cfg, "jobs");
  const auto rows = gamma_dominance_experiment(
      ds, betas, gammas, base, init, jobs == 0 ? default_jobs(betas.size() * gammas.size()) : jobs);
  {
    auto o = open_out(out / "dominance.csv");
    write_dominance_csv(o, rows);
  }
  {
    auto o = open_out(out / "dominance_weights.csv");
    write_dominance_weights_csv(o, rows);
  }
  double lo = 1.0;
  double hi = 0.0;
  for (const auto& r : rows) {
    lo = std::min(lo, r.win_rate);
    hi = std::max(hi, r.win_rate);
    log << fmt::format("beta={:<6g} gamma={:<6g} win_rate={:.4f}\n", r.beta, r.gamma, r.win_rate);
  }
  log << fmt::format("win_rate spread={:.4f}\n", hi - lo);
  return {{"dominance.csv", "dominance_weights.csv"}, kExitOk};
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {
      "gen-data",         "train",           "sweep",
      "diagnose grad-check", "diagnose dists", "diagnose density",
      "diagnose gamma-hist", "diagnose dominance"};
  return names;
}

Json command_defaults(std::string_view command) {
  if (command == "gen-data") return gen_data_defaults();
  if (command == "train") return train_defaults();
  if (command == "sweep") return sweep_defaults();
  if (command == "diagnose grad-check") return grad_check_defaults();
  if (command == "diagnose dists") return dists_defaults();
  if (command == "diagnose density") return density_defaults();
  if (command == "diagnose gamma-hist") return gamma_hist_defaults();
  if (command == "diagnose dominance") return dominance_defaults();
  throw ConfigError("unknown command \"" + std::string(command) + "\"");
}

CommandResult run_command(std::string_view command, const Json& config, const fs::path& out,
                          std::ostream& log) {
  fs::create_directories(out);
  if (command == "gen-data") return gen_data(config, out, log);
  if (command == "train") return train_cmd(config, out, log);
  if (command == "sweep") return sweep_cmd(config, out, log);
  if (command == "diagnose grad-check") return grad_check_cmd(config, out, log);
  if (command == "diagnose dists") return dists_cmd(config, out, log);
  if (command == "diagnose density") return density_cmd(config, out, log);
  if (command == "diagnose gamma-hist") return gamma_hist_cmd(config, out, log);
  if (command == "diagnose dominance") return dominance_cmd(config, out, log);
  throw ConfigError("unknown command \"" + std::string(command) + "\"");
}

unsigned default_jobs(std::size_t points) {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  return static_cast<unsigned>(std::clamp<std::size_t>(points, 1, hw));
}

}  // namespace prefopt::cli
