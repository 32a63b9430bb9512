#pragma once

// Safety and performance metrics of greedy policies, and the per-seed result
// table with its mean/std aggregate.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "safeadapt/envs.hpp"
#include "safeadapt/policy_net.hpp"

namespace safeadapt::metrics {

struct EpisodeResult {
  double total_reward = 0.0;
  bool success = false;
  bool unsafe = false;  // some step entered the unsafe region
  bool truncated = false;
  int steps = 0;
  std::vector<envs::EnvState> states;  // visited non-terminal states, in order
  std::vector<std::size_t> actions;
};

/// Deterministic greedy episode from `start` (defaults to the initial state).
EpisodeResult greedy_rollout(const nn::ParamVector& actor, const envs::Env& env);
EpisodeResult greedy_rollout(const nn::ParamVector& actor, const envs::Env& env, const envs::EnvState& start);

/// Fraction of dataset states whose greedy action is safe. Throws on an empty
/// dataset.
double critical_state_safety_rate(const nn::ParamVector& actor, const envs::SafetyDataset& dataset);

/// Fraction of greedy episodes that never step into the unsafe region.
double trajectory_safety_rate(const nn::ParamVector& actor, const envs::Env& env, int episodes);

struct EpisodeMetrics {
  double total_reward = 0.0;
  double success_rate = 0.0;
};

EpisodeMetrics episode_metrics(const nn::ParamVector& actor, const envs::Env& env, int episodes);

enum class Method { Source, UnsafeAdapt, EWC, SafeAdapt };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct MetricRow {
  std::string env;
  std::string layout;
  std::uint64_t seed = 0;
  Method method = Method::Source;
  int task = 1;
  double phi_sc = 0.0;
  double phi_traj = 0.0;
  double total_reward = 0.0;
  double success_rate = 0.0;
  bool provably_safe = false;
  std::string status = "ok";  // anything else marks a failed pipeline stage
};

/// Rows are ordered by (seed, method, task).
void sort_rows(std::vector<MetricRow>& rows);

void write_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows);
std::vector<MetricRow> read_csv(const std::filesystem::path& path);

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // population
  std::size_t n = 0;
};

Summary summarize(const std::vector<double>& values);

/// [{env, layout, method, task, n, phi_sc:{mean,std}, ...}] over rows with
/// status "ok", grouped in (method, task) order.
nlohmann::json aggregate(const std::vector<MetricRow>& rows);

}  // namespace safeadapt::metrics
