#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "commands.hpp"
#include "config.hpp"
#include "manifest.hpp"
#include "prefopt/errors.hpp"

namespace fs = std::filesystem;
using namespace prefopt;
using namespace prefopt::cli;

namespace {

// One runnable command: its CLI11 app plus the overrides its flags collect.
struct Command {
  CLI::App* app = nullptr;
  std::string name;
  Json overrides = Json::object();
  std::string config_path;
  std::string out;
};

template <class T>
void opt(Command& c, const std::string& flag, const std::string& pointer, const std::string& help) {
  c.app->add_option_function<T>(
      flag, [&c, pointer](const T& v) { c.overrides[Json::json_pointer(pointer)] = v; }, help);
}

void flag(Command& c, const std::string& name, const std::string& pointer, bool value,
          const std::string& help) {
  c.app->add_flag_function(
      name, [&c, pointer, value](std::int64_t) { c.overrides[Json::json_pointer(pointer)] = value; },
      help);
}

void number_list(Command& c, const std::string& flag, const std::string& pointer,
                 const std::string& help) {
  c.app->add_option_function<std::string>(
      flag,
      [&c, pointer](const std::string& v) {
        c.overrides[Json::json_pointer(pointer)] = parse_number_list(v);
      },
      help);
}

void name_list(Command& c, const std::string& flag, const std::string& pointer,
               const std::string& help) {
  c.app->add_option_function<std::string>(
      flag,
      [&c, pointer](const std::string& v) { c.overrides[Json::json_pointer(pointer)] = split_list(v); },
      help);
}

void common(Command& c) {
  c.app->add_option("--config", c.config_path, "JSON config; flags override its fields");
  c.app->add_option("--out", c.out, "Output directory")->required();
}

void loss_flags(Command& c) {
  opt<std::string>(c, "--method", "/loss/method", "Objective name, e.g. rmipo, simpo, dpo");
  opt<double>(c, "--beta", "/loss/beta", "Reward scale");
  opt<double>(c, "--gamma", "/loss/gamma", "Fixed margin");
  opt<double>(c, "--gamma-min", "/loss/gamma_min", "Adaptive margin lower bound");
  opt<double>(c, "--gamma-max", "/loss/gamma_max", "Adaptive margin upper bound");
  opt<std::string>(c, "--schedule", "/loss/schedule", "exponential | linear | cosine | none");
  opt<double>(c, "--schedule-scale", "/loss/schedule_scale", "Saturation scale of linear/cosine");
  flag(c, "--no-length-norm", "/loss/length_norm", false, "Use unnormalized log-likelihoods");
  opt<double>(c, "--tau", "/loss/tau", "IPO target scale");
  opt<double>(c, "--delta", "/loss/delta", "SLiC hinge slack");
  opt<double>(c, "--lambda", "/loss/lambda", "SLiC/CPO likelihood weight");
  opt<double>(c, "--lambda-w", "/loss/lambda_w", "KTO desirable weight");
  opt<double>(c, "--lambda-l", "/loss/lambda_l", "KTO undesirable weight");
  opt<double>(c, "--alpha", "/loss/alpha", "alpha-DPO / beta-DPO coefficient");
  opt<double>(c, "--rho", "/loss/rho", "beta-DPO filtered fraction");
  opt<double>(c, "--epsilon", "/loss/epsilon", "eps-DPO step");
}

void train_flags(Command& c) {
  opt<std::string>(c, "--dataset", "/dataset", "Dataset JSONL");
  opt<std::uint64_t>(c, "--seed", "/seed", "Run seed (order and init streams)");
  opt<std::size_t>(c, "--steps", "/steps", "Optimizer steps");
  opt<std::size_t>(c, "--batch", "/batch", "Batch size");
  opt<double>(c, "--lr", "/lr", "Learning rate");
  opt<std::string>(c, "--optimizer", "/optimizer", "sgd | adam");
  opt<std::string>(c, "--lr-schedule", "/lr_schedule", "constant | cosine");
  opt<double>(c, "--clip-norm", "/clip_norm", "Global gradient norm clip; 0 disables");
  opt<int>(c, "--vocab", "/vocab", "Vocabulary size");
  opt<int>(c, "--order", "/order", "Context order");
  opt<std::string>(c, "--init", "/init", "zero | gaussian");
  opt<double>(c, "--init-stdev", "/init_stdev", "Gaussian init scale");
  loss_flags(c);
}

Json read_config_file(const std::string& path) {
  if (path.empty()) return Json::object();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
}

void absolutize_paths(Json& cfg) {
  for (const char* key : {"dataset", "checkpoint"}) {
    if (cfg.contains(key) && cfg[key].is_string()) {
      cfg[key] = fs::absolute(cfg[key].get<std::string>()).lexically_normal().string();
    }
  }
}

/// Runs a command and records its manifest. Returns the command's exit code
/// and fills `artifacts` with name -> checksum.
int execute(const std::string& name, const Json& cfg, const fs::path& out,
            std::map<std::string, std::string>& artifacts) {
  const auto t0 = std::chrono::steady_clock::now();
  const CommandResult result = run_command(name, cfg, out, std::cout);
  Manifest m;
  m.command = name;
  m.config = cfg;
  m.out = out;
  for (const auto& a : result.artifacts) m.artifacts[a] = sha256_file(out / a);
  m.duration_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(m);
  artifacts = m.artifacts;
  return result.exit_code;
}

int rerun(const std::string& manifest_path, const std::string& out_override) {
  const Manifest original = read_manifest(manifest_path);
  const Json cfg = merge_checked(command_defaults(original.command), original.config);
  const fs::path out = out_override.empty() ? original.out : fs::absolute(out_override).lexically_normal();
  std::map<std::string, std::string> fresh;
  const int code = execute(original.command, cfg, out, fresh);
  int mismatches = 0;
  for (const auto& [name, sum] : original.artifacts) {
    const auto it = fresh.find(name);
    if (it == fresh.end() || it->second != sum) {
      std::cout << "MISMATCH " << name << "\n";
      ++mismatches;
    }
  }
  if (mismatches > 0) return kExitCheckFailed;
  std::cout << "reproduced " << original.artifacts.size() << " artifacts\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Preference optimization experiments on tabular policies"};
  app.require_subcommand(1);
  std::vector<std::unique_ptr<Command>> commands;
  auto add = [&](CLI::App* parent, const std::string& sub, const std::string& name,
                 const std::string& help) -> Command& {
    auto c = std::make_unique<Command>();
    c->app = parent->add_subcommand(sub, help);
    c->name = name;
    common(*c);
    commands.push_back(std::move(c));
    return *commands.back();
  };

  Command& gen = add(&app, "gen-data", "gen-data", "Generate a planted-oracle preference dataset");
  opt<std::int64_t>(gen, "--n", "/n", "Number of triplets");
  opt<int>(gen, "--vocab", "/vocab", "Vocabulary size (>= 4)");
  opt<std::uint64_t>(gen, "--seed", "/seed", "Generation seed");
  opt<double>(gen, "--gap", "/gap", "Oracle unit; stored pairs differ by at least this much");
  opt<double>(gen, "--low-gap", "/low_gap", "Also emit a low-confidence half with this unit");
  opt<int>(gen, "--max-prompt-len", "/max_prompt_len", "Longest prompt");
  opt<int>(gen, "--max-resp-len", "/max_resp_len", "Longest response, EOS included");

  Command& tr = add(&app, "train", "train", "Train one objective");
  train_flags(tr);
  flag(tr, "--sample-log", "/sample_log", true, "Write per-sample diagnostics for every step");

  Command& sw = add(&app, "sweep", "sweep", "Train every point of a Cartesian grid");
  train_flags(sw);
  name_list(sw, "--methods", "/grid/method", "Comma-separated objectives");
  number_list(sw, "--betas", "/grid/beta", "Comma-separated beta values");
  number_list(sw, "--gammas", "/grid/gamma", "Comma-separated fixed margins");
  sw.app->add_option_function<std::string>(
      "--bounds",
      [&sw](const std::string& v) {
        Json pairs = Json::array();
        for (const auto& item : split_list(v)) {
          const auto colon = item.find(':');
          if (colon == std::string::npos) throw ConfigError("bounds entries look like lo:hi");
          const auto lo = parse_number_list(item.substr(0, colon));
          const auto hi = parse_number_list(item.substr(colon + 1));
          if (lo.size() != 1 || hi.size() != 1) throw ConfigError("bounds entries look like lo:hi");
          pairs.push_back({lo[0], hi[0]});
        }
        sw.overrides[Json::json_pointer("/grid/bounds")] = pairs;
      },
      "Comma-separated gamma_min:gamma_max pairs");
  name_list(sw, "--schedules", "/grid/schedule", "Comma-separated schedules");
  opt<unsigned>(sw, "--jobs", "/jobs", "Parallel jobs; 0 picks automatically");

  CLI::App* diag = app.add_subcommand("diagnose", "Diagnostics");
  diag->require_subcommand(1);

  Command& gc = add(diag, "grad-check", "diagnose grad-check", "Finite-difference gradient check");
  gc.app->add_flag_function(
      "--all-methods",
      [&gc](std::int64_t) { gc.overrides["methods"] = command_defaults("diagnose grad-check")["methods"]; },
      "Check every objective (default)");
  gc.app->add_option_function<std::string>(
      "--method", [&gc](const std::string& v) { gc.overrides["methods"] = Json::array({v}); },
      "Check a single objective");
  opt<std::size_t>(gc, "--instances", "/instances", "Random instances per method");
  opt<double>(gc, "--fd-step", "/h", "Finite-difference step");
  opt<std::uint64_t>(gc, "--seed", "/seed", "Instance seed");
  opt<int>(gc, "--vocab", "/vocab", "Vocabulary size of the random instances");
  opt<std::size_t>(gc, "--batch", "/batch", "Batch size of the random instances");

  Command& di = add(diag, "dists", "diagnose dists", "dlog and dpmi histograms");
  opt<std::string>(di, "--dataset", "/dataset", "Dataset JSONL");
  opt<std::string>(di, "--checkpoint", "/checkpoint", "Policy checkpoint; uniform if omitted");
  opt<int>(di, "--vocab", "/vocab", "Vocabulary size for the uniform policy");
  opt<int>(di, "--order", "/order", "Context order for the uniform policy");
  opt<std::size_t>(di, "--bins", "/bins", "Histogram bins");
  flag(di, "--popularity", "/popularity", true, "Run the planted popularity-bias corpus instead");
  opt<std::size_t>(di, "--popularity-n", "/popularity_options/n", "Triplets in the popularity corpus");
  opt<std::uint64_t>(di, "--popularity-seed", "/popularity_options/seed", "Popularity corpus seed");
  opt<std::size_t>(di, "--sft-samples", "/popularity_options/sft_samples", "Samples for the policy fit");

  Command& de = add(diag, "density", "diagnose density", "Jittered oracle rank gaps");
  opt<std::string>(de, "--dataset", "/dataset", "Dataset JSONL");
  opt<double>(de, "--jitter", "/jitter", "Uniform jitter half-width");
  opt<std::uint64_t>(de, "--seed", "/seed", "Jitter seed");

  Command& gh = add(diag, "gamma-hist", "diagnose gamma-hist", "Adaptive margin histogram");
  opt<std::string>(gh, "--dataset", "/dataset", "Dataset JSONL");
  opt<std::string>(gh, "--checkpoint", "/checkpoint", "Policy checkpoint; uniform if omitted");
  opt<int>(gh, "--vocab", "/vocab", "Vocabulary size for the uniform policy");
  opt<int>(gh, "--order", "/order", "Context order for the uniform policy");
  opt<std::size_t>(gh, "--bins", "/bins", "Histogram bins");
  loss_flags(gh);

  Command& dm = add(diag, "dominance", "diagnose dominance", "Fixed-margin (beta, gamma) grid");
  train_flags(dm);
  number_list(dm, "--betas", "/betas", "Comma-separated beta values");
  number_list(dm, "--gammas", "/gammas", "Comma-separated gamma values");
  opt<unsigned>(dm, "--jobs", "/jobs", "Parallel jobs; 0 picks automatically");

  CLI::App* re = app.add_subcommand("rerun", "Re-execute a run from its manifest and compare checksums");
  std::string manifest_path;
  std::string rerun_out;
  re->add_option("--manifest", manifest_path, "manifest.json of a previous run")->required();
  re->add_option("--out", rerun_out, "Output directory; defaults to the recorded one");

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitUsage;
    }

    if (re->parsed()) return rerun(manifest_path, rerun_out);
    for (const auto& c : commands) {
      if (!c->app->parsed()) continue;
      Json cfg = merge_checked(command_defaults(c->name), read_config_file(c->config_path));
      cfg = merge_checked(cfg, c->overrides);
      absolutize_paths(cfg);
      std::map<std::string, std::string> artifacts;
      return execute(c->name, cfg, fs::absolute(c->out).lexically_normal(), artifacts);
    }
    return kExitUsage;
  } catch (const CLI::ParseError& e) {
    // Thrown from option callbacks (list parsing) after parse() returned.
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error at step " << e.step() << ", sample " << e.sample() << ": "
              << e.what() << "\n";
    return kExitNumerical;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCheckFailed;
  }
}
