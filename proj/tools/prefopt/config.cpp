#include "config.hpp"

#include <charconv>
#include <cmath>

#include "prefopt/errors.hpp"

namespace prefopt::cli {

Json to_json(const LossConfig& c) {
  Json j;
  j["method"] = to_string(c.method);
  j["beta"] = c.beta;
  j["gamma"] = c.gamma;
  j["gamma_min"] = c.gamma_min;
  j["gamma_max"] = c.gamma_max;
  j["schedule"] = to_string(c.schedule);
  j["schedule_scale"] = c.schedule_scale;
  j["length_norm"] = c.length_norm;
  j["tau"] = c.tau;
  j["delta"] = c.delta;
  j["lambda"] = c.lambda;
  j["lambda_w"] = c.lambda_w;
  j["lambda_l"] = c.lambda_l;
  j["alpha"] = c.alpha;
  j["rho"] = c.rho;
  j["epsilon"] = c.epsilon;
  return j;
}

Json to_json(const TrainConfig& c) {
  Json j;
  j["steps"] = c.steps;
  j["batch"] = c.batch;
  j["lr"] = c.lr;
  j["optimizer"] = to_string(c.optimizer);
  j["lr_schedule"] = to_string(c.lr_schedule);
  j["seed"] = c.seed;
  j["clip_norm"] = c.clip_norm;
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["adam_eps"] = c.adam_eps;
  j["loss"] = to_json(c.loss);
  return j;
}

LossConfig loss_from_json(const Json& j) {
  const Json full = merge_checked(to_json(LossConfig{}), j);
  LossConfig c;
  c.method = parse_method(get<std::string>(full, "method"));
  c.beta = get<double>(full, "beta");
  c.gamma = get<double>(full, "gamma");
  c.gamma_min = get<double>(full, "gamma_min");
  c.gamma_max = get<double>(full, "gamma_max");
  c.schedule = parse_schedule(get<std::string>(full, "schedule"));
  c.schedule_scale = get<double>(full, "schedule_scale");
  c.length_norm = get<bool>(full, "length_norm");
  c.tau = get<double>(full, "tau");
  c.delta = get<double>(full, "delta");
  c.lambda = get<double>(full, "lambda");
  c.lambda_w = get<double>(full, "lambda_w");
  c.lambda_l = get<double>(full, "lambda_l");
  c.alpha = get<double>(full, "alpha");
  c.rho = get<double>(full, "rho");
  c.epsilon = get<double>(full, "epsilon");
  c.validate();
  return c;
}

TrainConfig train_from_json(const Json& j) {
  TrainConfig c;
  c.steps = get<std::size_t>(j, "steps");
  c.batch = get<std::size_t>(j, "batch");
  c.lr = get<double>(j, "lr");
  c.optimizer = parse_optimizer(get<std::string>(j, "optimizer"));
  c.lr_schedule = parse_lr_schedule(get<std::string>(j, "lr_schedule"));
  c.seed = get<std::uint64_t>(j, "seed");
  c.clip_norm = get<double>(j, "clip_norm");
  c.adam_beta1 = get<double>(j, "adam_beta1");
  c.adam_beta2 = get<double>(j, "adam_beta2");
  c.adam_eps = get<double>(j, "adam_eps");
  c.loss = loss_from_json(j.at("loss"));
  c.validate();
  return c;
}

namespace {

void check_keys(const Json& defaults, const Json& value, const std::string& where) {
  if (!value.is_object()) throw ConfigError("config " + where + " must be a JSON object");
  for (const auto& [key, v] : value.items()) {
    const auto it = defaults.find(key);
    if (it == defaults.end()) throw ConfigError("unknown config key \"" + where + key + "\"");
    if (it->is_object()) check_keys(*it, v, where + key + ".");
  }
}

}  // namespace

Json merge_checked(const Json& defaults, const Json& patch) {
  if (patch.is_null()) return defaults;
  check_keys(defaults, patch, "");
  Json out = defaults;
  for (const auto& [key, v] : patch.items()) {
    if (out[key].is_object()) {
      out[key] = merge_checked(out[key], v);
    } else {
      out[key] = v;
    }
  }
  return out;
}

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  while (!text.empty()) {
    const auto comma = text.find(',');
    std::string_view item = text.substr(0, comma);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (item.empty()) throw ConfigError("empty item in list");
    out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  return out;
}

std::vector<double> parse_number_list(std::string_view text) {
  std::vector<double> out;
  for (const auto& item : split_list(text)) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc{} || ptr != item.data() + item.size() || !std::isfinite(v)) {
      throw ConfigError("not a number: \"" + item + "\"");
    }
    out.push_back(v);
  }
  return out;
}

}  // namespace prefopt::cli
