#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "prefopt/diagnostics.hpp"
#include "prefopt/errors.hpp"
#include "prefopt/trainer.hpp"

namespace prefopt::cli {

using Json = nlohmann::ordered_json;

Json to_json(const LossConfig& c);
/// Flat TrainConfig fields with the loss settings nested under "loss".
Json to_json(const TrainConfig& c);

LossConfig loss_from_json(const Json& j);
TrainConfig train_from_json(const Json& j);

/// Applies `patch` on top of `defaults` and rejects any key the defaults do
/// not declare. Object-valued defaults are checked recursively; a null
/// default accepts any value.
Json merge_checked(const Json& defaults, const Json& patch);

/// Typed field access that reports the key on a type mismatch.
template <class T>
T get(const Json& j, std::string_view key) {
  try {
    return j.at(std::string(key)).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config field \"" + std::string(key) + "\" has the wrong type");
  }
}

/// Comma-separated list parsing for grid flags. An empty string yields an
/// empty list.
std::vector<std::string> split_list(std::string_view text);
std::vector<double> parse_number_list(std::string_view text);

}  // namespace prefopt::cli
