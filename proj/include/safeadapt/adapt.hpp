#pragma once

// Downstream adaptation of a source policy: projected PPO that never leaves
// the certified box, plain PPO, and PPO with an elastic weight consolidation
// penalty, plus the diagonal Fisher estimate that penalty needs.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "safeadapt/envs.hpp"
#include "safeadapt/policy_net.hpp"
#include "safeadapt/ppo.hpp"
#include "safeadapt/rashomon.hpp"

namespace safeadapt::adapt {

enum class Mode { Safe, Unsafe, Ewc };

std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

struct AdaptConfig {
  Mode mode = Mode::Unsafe;
  ppo::PpoConfig ppo;
  double ewc_lambda = 5000.0;
  std::size_t fisher_cap = 1000;

  /// Downstream settings for the environment family: Frozen Lake 50k steps,
  /// entropy 0.1, stop at reward 1.0; Poisoned Apple 20k steps, entropy 0.01,
  /// stop at 0.96. Both roll out 2048 steps, 10 epochs of minibatch 64, and
  /// check the stop rule every 20480 steps (10 episodes under EWC).
  static AdaptConfig defaults(envs::EnvKind kind, Mode mode);

  void validate() const;
};

nlohmann::json to_json(const AdaptConfig& c);
AdaptConfig adapt_config_from_json(const nlohmann::json& j, AdaptConfig base);

struct FisherDiag {
  std::vector<double> values;  // one per actor parameter, all >= 0
  std::size_t states_used = 0;
  std::size_t cap = 0;
};

nlohmann::json to_json(const FisherDiag& f);
FisherDiag fisher_from_json(const nlohmann::json& j);

/// Empirical diagonal Fisher of the actor: min(cap, |states|) states (all of
/// them when they fit, else a uniform sample without replacement), one action
/// drawn from the policy at each, squared score averaged. Uses the "fisher"
/// stream of `seed`.
FisherDiag fisher_diag(const nn::ParamVector& actor, const envs::Env& env, const std::vector<envs::EnvState>& states,
                       std::size_t cap, std::uint64_t seed);

/// Componentwise clip into [center - alpha, center + alpha].
nn::ParamVector project(const nn::ParamVector& params, const ibp::Orthotope& box);
void project_in_place(nn::ParamVector& params, const ibp::Orthotope& box);

struct AdaptLogRow {
  ppo::LogRow ppo;
  Mode mode = Mode::Unsafe;
  bool contained = false;      // actor inside the certificate box (false without one)
  double phi_sc_task1 = 0.0;   // NaN when no Task-1 dataset is supplied
};

struct AdaptResult {
  ppo::ActorCritic ac;
  std::vector<AdaptLogRow> log;
  long steps = 0;
  bool early_stopped = false;
};

/// PPO on `task2` with the actor projected into the certificate box after
/// every optimiser step. Containment is checked after every step and Task-1
/// safety at every logged update; a violation of either throws
/// InvariantBreach.
AdaptResult adapt_safe(const ppo::ActorCritic& source, const rashomon::Certificate& cert, const envs::Env& task2,
                       const AdaptConfig& cfg, std::uint64_t seed, const envs::SafetyDataset& task1_dataset);

AdaptResult adapt_unsafe(const ppo::ActorCritic& source, const envs::Env& task2, const AdaptConfig& cfg,
                         std::uint64_t seed, const envs::SafetyDataset* task1_dataset = nullptr);

/// Adds (lambda / 2) sum_i F_i (theta_i - theta_source,i)^2 to the actor loss.
AdaptResult adapt_ewc(const ppo::ActorCritic& source, const FisherDiag& fisher, const envs::Env& task2,
                      const AdaptConfig& cfg, std::uint64_t seed, const envs::SafetyDataset* task1_dataset = nullptr);

/// Columns: the PPO log columns then mode, contained, phi_sc_task1.
void write_log_csv(const std::string& path, const std::vector<AdaptLogRow>& log);

}  // namespace safeadapt::adapt
