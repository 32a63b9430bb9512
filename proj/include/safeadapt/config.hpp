#pragma once

// Experiment configuration: one JSON file naming the layouts, network,
// per-stage hyperparameters and seeds. An optional "desk_scale" object is a
// JSON merge patch applied on request to shrink budgets.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "safeadapt/adapt.hpp"
#include "safeadapt/envs.hpp"
#include "safeadapt/policy_net.hpp"
#include "safeadapt/ppo.hpp"
#include "safeadapt/rashomon.hpp"

namespace safeadapt::config {

/// A task pair: either a built-in layout name for both tasks or two files.
struct LayoutRef {
  std::string name;
  std::string task1;
  std::string task2;

  envs::Env env(int task) const;
};

struct ExperimentConfig {
  std::string name;
  envs::EnvKind kind = envs::EnvKind::FrozenLake;
  std::vector<LayoutRef> layouts;
  std::vector<std::size_t> hidden{64, 64};
  nn::Activation activation = nn::Activation::Relu;
  ppo::PpoConfig source_ppo;
  ppo::FinetuneConfig finetune;
  rashomon::RashomonConfig rashomon;
  std::map<adapt::Mode, adapt::AdaptConfig> adapt;
  int eval_episodes = 1;
  int verify_samples = 1000;
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path out_dir = "runs";
  bool desk_scale = false;
  /// The effective document after the desk-scale patch, kept for hashing.
  nlohmann::json resolved;

  nn::MlpSpec actor_spec(const envs::Env& env) const;
  /// runs/<name> for one layout, runs/<name>_<layout> in a sweep.
  std::filesystem::path experiment_dir(const LayoutRef& layout) const;
};

/// Parses and validates. Throws ConfigError on unknown keys, bad values or
/// layouts that cannot be loaded.
ExperimentConfig parse_config(const nlohmann::json& doc, bool desk_scale);
ExperimentConfig load_config(const std::filesystem::path& path, bool desk_scale);

/// "0..9" (inclusive range) or "0,3,7".
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

}  // namespace safeadapt::config
