#pragma once

// Clipped-surrogate PPO with GAE over separate actor and critic networks, the
// source-task training loop, and the safety finetuning pass that instils the
// safe-mass margin before certification.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "safeadapt/adam.hpp"
#include "safeadapt/envs.hpp"
#include "safeadapt/policy_net.hpp"
#include "safeadapt/rashomon.hpp"
#include "safeadapt/rng.hpp"

namespace safeadapt::ppo {

struct PpoConfig {
  int n_steps = 256;
  int n_epochs = 8;
  int batch_size = 64;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.2;
  double vf_coef = 0.5;
  double ent_coef = 0.01;
  double lr = 3e-4;
  double max_grad_norm = 0.5;
  double adam_eps = 1e-5;
  long max_timesteps = 500000;
  bool early_stop = true;
  double early_stop_reward = 1.0;
  /// Greedy evaluation cadence in environment steps; 0 evaluates after every
  /// rollout.
  long eval_every = 0;
  int eval_episodes = 1;

  void validate() const;
};

nlohmann::json to_json(const PpoConfig& c);
PpoConfig ppo_config_from_json(const nlohmann::json& j, PpoConfig base = {});

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// dones[t] marks that transition t ended its episode; bootstrap_value is
/// V(s_T) for the state after the last transition.
GaeResult gae(std::span<const double> rewards, std::span<const double> values, const std::vector<bool>& dones,
              double bootstrap_value, double gamma, double lambda);

struct RolloutBuffer {
  std::size_t obs_dim = 0;
  std::vector<double> obs;  // size() x obs_dim
  std::vector<std::size_t> actions;
  std::vector<double> rewards;
  std::vector<bool> dones;
  std::vector<double> log_probs;
  std::vector<double> values;
  std::vector<double> advantages;
  std::vector<double> returns;

  std::size_t size() const { return actions.size(); }
  std::span<const double> observation(std::size_t i) const { return {obs.data() + i * obs_dim, obs_dim}; }
};

struct ActorCritic {
  nn::ParamVector actor;
  nn::ParamVector critic;
};

/// Actor output gain 0.01, critic output gain 1.
ActorCritic init_actor_critic(const nn::MlpSpec& actor_spec, Rng& rng);

struct LossParts {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy_loss = 0.0;  // -mean entropy
  double total = 0.0;
  double clip_fraction = 0.0;
};

/// Loss of one minibatch and (optionally) its gradients:
///   policy_loss + ent_coef * entropy_loss + vf_coef * value_loss
/// with advantages standardised over the minibatch.
LossParts minibatch_loss(const ActorCritic& ac, const RolloutBuffer& buf, std::span<const std::size_t> idx,
                         const PpoConfig& cfg, std::span<double> g_actor, std::span<double> g_critic);

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double regularizer = 0.0;
  int optimizer_steps = 0;
};

class PpoLearner {
 public:
  PpoLearner(ActorCritic& ac, const PpoConfig& cfg);

  /// Extra actor loss term; returns its value and adds its gradient.
  std::function<double(const nn::ParamVector& actor, std::span<double> grad)> actor_regularizer;
  /// Runs after every optimiser step (e.g. projection).
  std::function<void(nn::ParamVector& actor)> after_step;

  UpdateStats update(const RolloutBuffer& buf, Rng& rng);

 private:
  ActorCritic& ac_;
  PpoConfig cfg_;
  Adam actor_opt_;
  Adam critic_opt_;
};

/// Steps the environment with the stochastic policy, resetting after each
/// episode. Truncated episodes bootstrap with gamma * V(final state).
class RolloutCollector {
 public:
  explicit RolloutCollector(const envs::Env& env);

  RolloutBuffer collect(const ActorCritic& ac, int n_steps, const PpoConfig& cfg, Rng& rng);
  /// Returns of episodes completed since the last call.
  std::vector<double> take_episode_returns();

 private:
  const envs::Env& env_;
  envs::EnvState state_;
  double running_return_ = 0.0;
  std::vector<double> finished_;
};

struct LogRow {
  long step = 0;
  double mean_episode_reward = 0.0;  // NaN when no episode finished
  double greedy_eval_reward = 0.0;   // NaN when not evaluated
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
};

struct PpoHooks {
  std::function<double(const nn::ParamVector&, std::span<double>)> actor_regularizer;
  std::function<void(nn::ParamVector&)> after_step;
  /// Called after each update with the log row so far; may fill extra state.
  /// Returning true stops training.
  std::function<bool(LogRow&)> after_update;
};

struct RunResult {
  std::vector<LogRow> log;
  long steps = 0;
  bool early_stopped = false;
};

/// PPO loop on `env` until max_timesteps or early stop (greedy evaluation
/// reward at or above the threshold, checked every eval_every steps).
RunResult run_ppo(const envs::Env& env, ActorCritic& ac, const PpoConfig& cfg, Rng& rng, const PpoHooks& hooks = {});

struct SourceResult {
  ActorCritic ac;
  RunResult run;
};

/// Fresh networks from the "source/init" stream, trained with "source/ppo".
/// An environment whose initial state is already terminal stops at once.
SourceResult train_source(const envs::Env& env, const nn::MlpSpec& actor_spec, const PpoConfig& cfg,
                          std::uint64_t seed);

void write_log_csv(const std::string& path, const std::vector<LogRow>& log);

enum class FinetuneMode { AllowedLogProb, MultiLabel };

std::string to_string(FinetuneMode m);
FinetuneMode finetune_mode_from_string(const std::string& s);

struct FinetuneConfig {
  FinetuneMode mode = FinetuneMode::AllowedLogProb;
  double lr = 1e-2;
  int max_epochs = 3000;
  int batch_size = 0;  // 0: full batch
  /// Add the states of the current greedy trajectory with the greedy action
  /// (or the safe set where the greedy action is unsafe) as the target.
  bool include_trajectory = true;
  /// Stop as soon as the target is met; otherwise run every epoch and check
  /// the target once at the end.
  bool stop_at_target = true;

  void validate() const;
};

nlohmann::json to_json(const FinetuneConfig& c);
FinetuneConfig finetune_config_from_json(const nlohmann::json& j, FinetuneConfig base = {});

struct FinetuneResult {
  nn::ParamVector actor;
  int epochs = 0;
  bool reached = false;
  double beta = 0.0;  // inverse temperature found by the final search
  std::vector<double> loss;  // per epoch
};

/// Stops once every dataset state has a safe greedy action and the
/// temperature search (using `rcfg`) succeeds, or at the epoch cap.
/// `reached` reports whether the target holds for the returned actor.
/// `trajectory_env` may be null when include_trajectory is off.
FinetuneResult safety_finetune(const nn::ParamVector& actor, const envs::SafetyDataset& dataset,
                               const envs::Env* trajectory_env, const FinetuneConfig& cfg,
                               const rashomon::RashomonConfig& rcfg, Rng& rng);

}  // namespace safeadapt::ppo
