#include "safeadapt/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "safeadapt/errors.hpp"
#include "safeadapt/metrics.hpp"

namespace safeadapt::ppo {

void PpoConfig::validate() const {
  if (n_steps <= 0 || n_epochs <= 0 || batch_size <= 0) throw ConfigError("ppo sizes must be positive");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("ppo.gamma must be in [0, 1)");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("ppo.gae_lambda must be in [0, 1]");
  if (!(clip > 0.0)) throw ConfigError("ppo.clip must be positive");
  if (!(lr >= 0.0) || !(max_grad_norm > 0.0) || !(adam_eps > 0.0)) throw ConfigError("ppo optimiser settings invalid");
  if (vf_coef < 0.0 || ent_coef < 0.0) throw ConfigError("ppo loss coefficients must be nonnegative");
  if (max_timesteps < 0 || eval_every < 0 || eval_episodes < 1) throw ConfigError("ppo budgets invalid");
}

nlohmann::json to_json(const PpoConfig& c) {
  return {{"n_steps", c.n_steps},
          {"n_epochs", c.n_epochs},
          {"batch_size", c.batch_size},
          {"gamma", c.gamma},
          {"gae_lambda", c.gae_lambda},
          {"clip", c.clip},
          {"vf_coef", c.vf_coef},
          {"ent_coef", c.ent_coef},
          {"lr", c.lr},
          {"max_grad_norm", c.max_grad_norm},
          {"adam_eps", c.adam_eps},
          {"max_timesteps", c.max_timesteps},
          {"early_stop", c.early_stop},
          {"early_stop_reward", c.early_stop_reward},
          {"eval_every", c.eval_every},
          {"eval_episodes", c.eval_episodes}};
}

PpoConfig ppo_config_from_json(const nlohmann::json& j, PpoConfig c) {
  try {
    c.n_steps = j.value("n_steps", c.n_steps);
    c.n_epochs = j.value("n_epochs", c.n_epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.gamma = j.value("gamma", c.gamma);
    c.gae_lambda = j.value("gae_lambda", c.gae_lambda);
    c.clip = j.value("clip", c.clip);
    c.vf_coef = j.value("vf_coef", c.vf_coef);
    c.ent_coef = j.value("ent_coef", c.ent_coef);
    c.lr = j.value("lr", c.lr);
    c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.max_timesteps = j.value("max_timesteps", c.max_timesteps);
    c.early_stop = j.value("early_stop", c.early_stop);
    c.early_stop_reward = j.value("early_stop_reward", c.early_stop_reward);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.eval_episodes = j.value("eval_episodes", c.eval_episodes);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed ppo config: ") + e.what());
  }
  c.validate();
  return c;
}

GaeResult gae(std::span<const double> rewards, std::span<const double> values, const std::vector<bool>& dones,
              double bootstrap_value, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n) throw DimensionError("gae inputs differ in length");
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double next_adv = 0.0;
  double next_value = bootstrap_value;
  for (std::size_t t = n; t-- > 0;) {
    const double live = dones[t] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * next_value * live - values[t];
    next_adv = delta + gamma * lambda * live * next_adv;
    out.advantages[t] = next_adv;
    out.returns[t] = next_adv + values[t];
    next_value = values[t];
  }
  return out;
}

ActorCritic init_actor_critic(const nn::MlpSpec& actor_spec, Rng& rng) {
  nn::MlpSpec critic_spec = actor_spec;
  critic_spec.output_dim = 1;
  ActorCritic ac;
  ac.actor = nn::init_params(actor_spec, rng, 0.01);
  ac.critic = nn::init_params(critic_spec, rng, 1.0);
  return ac;
}

LossParts minibatch_loss(const ActorCritic& ac, const RolloutBuffer& buf, std::span<const std::size_t> idx,
                         const PpoConfig& cfg, std::span<double> g_actor, std::span<double> g_critic) {
  const std::size_t b = idx.size();
  if (b == 0) throw InvalidArgument("empty minibatch");
  const bool want_grad = !g_actor.empty();
  const double inv_b = 1.0 / static_cast<double>(b);

  std::vector<double> adv(b);
  for (std::size_t i = 0; i < b; ++i) adv[i] = buf.advantages[idx[i]];
  if (b > 1) {
    const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) * inv_b;
    double ss = 0.0;
    for (double a : adv) ss += (a - mean) * (a - mean);
    const double sd = std::sqrt(ss / static_cast<double>(b - 1));
    for (double& a : adv) a = (a - mean) / (sd + 1e-8);
  }

  LossParts out;
  nn::Trace ta, tc;
  const std::size_t k = ac.actor.spec.output_dim;
  std::vector<double> gz(k);
  std::size_t clipped = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t t = idx[i];
    const auto x = buf.observation(t);
    const auto z = nn::forward_trace(ac.actor, x, ta);
    const auto dist = nn::action_dist(z, 1.0);
    const std::size_t a = buf.actions[t];
    const double ratio = std::exp(dist.log_probs[a] - buf.log_probs[t]);
    const double unclipped = ratio * adv[i];
    const double clipped_ratio = std::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
    out.policy_loss -= std::min(unclipped, clipped_ratio * adv[i]) * inv_b;
    const bool at_clip = (adv[i] >= 0.0 && ratio > 1.0 + cfg.clip) || (adv[i] < 0.0 && ratio < 1.0 - cfg.clip);
    if (std::abs(ratio - 1.0) > cfg.clip) ++clipped;
    const double h = dist.entropy();
    out.entropy_loss -= h * inv_b;

    const double v = nn::forward_trace(ac.critic, x, tc)[0];
    const double err = v - buf.returns[t];
    out.value_loss += err * err * inv_b;

    if (!want_grad) continue;
    const double coef = at_clip ? 0.0 : -ratio * adv[i] * inv_b;
    for (std::size_t c = 0; c < k; ++c) {
      const double dlogp = (c == a ? 1.0 : 0.0) - dist.probs[c];
      // d(-H)/dz_c = p_c (log p_c + H)
      const double dneg_h = dist.probs[c] * (dist.log_probs[c] + h);
      gz[c] = coef * dlogp + cfg.ent_coef * dneg_h * inv_b;
    }
    nn::backward(ac.actor, ta, gz, g_actor);
    const double gv = cfg.vf_coef * 2.0 * err * inv_b;
    nn::backward(ac.critic, tc, std::span<const double>(&gv, 1), g_critic);
  }
  out.clip_fraction = static_cast<double>(clipped) * inv_b;
  out.total = out.policy_loss + cfg.ent_coef * out.entropy_loss + cfg.vf_coef * out.value_loss;
  return out;
}

PpoLearner::PpoLearner(ActorCritic& ac, const PpoConfig& cfg)
    : ac_(ac),
      cfg_(cfg),
      actor_opt_(ac.actor.size(), cfg.lr, cfg.adam_eps),
      critic_opt_(ac.critic.size(), cfg.lr, cfg.adam_eps) {
  cfg_.validate();
}

UpdateStats PpoLearner::update(const RolloutBuffer& buf, Rng& rng) {
  UpdateStats st;
  const std::size_t n = buf.size();
  std::vector<std::size_t> perm(n);
  std::vector<double> ga(ac_.actor.size()), gc(ac_.critic.size());
  int batches = 0;
  for (int epoch = 0; epoch < cfg_.n_epochs; ++epoch) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg_.batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg_.batch_size));
      std::fill(ga.begin(), ga.end(), 0.0);
      std::fill(gc.begin(), gc.end(), 0.0);
      const LossParts lp =
          minibatch_loss(ac_, buf, std::span<const std::size_t>(perm.data() + start, end - start), cfg_, ga, gc);
      double reg = 0.0;
      if (actor_regularizer) reg = actor_regularizer(ac_.actor, ga);
      if (!std::isfinite(lp.total) || !std::isfinite(reg)) {
        throw NumericError("non-finite PPO loss (policy " + std::to_string(lp.policy_loss) + ", value " +
                           std::to_string(lp.value_loss) + ", regulariser " + std::to_string(reg) + ")");
      }
      double sq = 0.0;
      for (double g : ga) sq += g * g;
      for (double g : gc) sq += g * g;
      const double norm = std::sqrt(sq);
      if (!std::isfinite(norm)) throw NumericError("non-finite PPO gradient");
      if (norm > cfg_.max_grad_norm) {
        const double s = cfg_.max_grad_norm / (norm + 1e-6);
        for (double& g : ga) g *= s;
        for (double& g : gc) g *= s;
      }
      actor_opt_.step(ac_.actor.values, ga);
      critic_opt_.step(ac_.critic.values, gc);
      if (after_step) after_step(ac_.actor);
      st.policy_loss += lp.policy_loss;
      st.value_loss += lp.value_loss;
      st.entropy -= lp.entropy_loss;
      st.clip_fraction += lp.clip_fraction;
      st.regularizer += reg;
      ++batches;
    }
  }
  st.optimizer_steps = batches;
  if (batches > 0) {
    st.policy_loss /= batches;
    st.value_loss /= batches;
    st.entropy /= batches;
    st.clip_fraction /= batches;
    st.regularizer /= batches;
  }
  return st;
}

RolloutCollector::RolloutCollector(const envs::Env& env) : env_(env), state_(env.initial_state()) {}

RolloutBuffer RolloutCollector::collect(const ActorCritic& ac, int n_steps, const PpoConfig& cfg, Rng& rng) {
  RolloutBuffer buf;
  buf.obs_dim = env_.encoding_dim();
  buf.obs.reserve(static_cast<std::size_t>(n_steps) * buf.obs_dim);
  std::vector<double> x(buf.obs_dim), xn(buf.obs_dim);
  for (int t = 0; t < n_steps; ++t) {
    env_.encode(state_, x);
    const auto dist = nn::action_dist(nn::forward(ac.actor, x), 1.0);
    const std::size_t a = nn::sample_action(dist, rng);
    const double v = nn::forward(ac.critic, x)[0];
    const envs::StepOutcome o = env_.step(state_, static_cast<envs::Action>(a));
    double r = o.reward;
    running_return_ += o.reward;
    if (o.truncated) {
      env_.encode(o.next, xn);
      r += cfg.gamma * nn::forward(ac.critic, xn)[0];
    }
    buf.obs.insert(buf.obs.end(), x.begin(), x.end());
    buf.actions.push_back(a);
    buf.rewards.push_back(r);
    buf.dones.push_back(o.done);
    buf.log_probs.push_back(dist.log_probs[a]);
    buf.values.push_back(v);
    if (o.done) {
      finished_.push_back(running_return_);
      running_return_ = 0.0;
      state_ = env_.initial_state();
    } else {
      state_ = o.next;
    }
  }
  env_.encode(state_, x);
  // After a reset the bootstrap is masked by dones.back() anyway.
  const double bootstrap = nn::forward(ac.critic, x)[0];
  GaeResult g = gae(buf.rewards, buf.values, buf.dones, bootstrap, cfg.gamma, cfg.gae_lambda);
  buf.advantages = std::move(g.advantages);
  buf.returns = std::move(g.returns);
  return buf;
}

std::vector<double> RolloutCollector::take_episode_returns() {
  std::vector<double> out;
  out.swap(finished_);
  return out;
}

RunResult run_ppo(const envs::Env& env, ActorCritic& ac, const PpoConfig& cfg, Rng& rng, const PpoHooks& hooks) {
  cfg.validate();
  RunResult res;
  if (env.is_terminal(env.initial_state())) {
    res.early_stopped = true;
    return res;
  }
  PpoLearner learner(ac, cfg);
  learner.actor_regularizer = hooks.actor_regularizer;
  learner.after_step = hooks.after_step;
  RolloutCollector collector(env);
  long next_eval = cfg.eval_every;
  while (res.steps < cfg.max_timesteps) {
    const int n = static_cast<int>(std::min<long>(cfg.n_steps, cfg.max_timesteps - res.steps));
    const RolloutBuffer buf = collector.collect(ac, n, cfg, rng);
    res.steps += n;
    const UpdateStats st = learner.update(buf, rng);

    LogRow row;
    row.step = res.steps;
    const auto returns = collector.take_episode_returns();
    row.mean_episode_reward = returns.empty() ? std::numeric_limits<double>::quiet_NaN()
                                              : std::accumulate(returns.begin(), returns.end(), 0.0) /
                                                    static_cast<double>(returns.size());
    row.greedy_eval_reward = std::numeric_limits<double>::quiet_NaN();
    row.policy_loss = st.policy_loss;
    row.value_loss = st.value_loss;
    row.entropy = st.entropy;
    bool stop = false;
    if (res.steps >= next_eval || res.steps >= cfg.max_timesteps) {
      next_eval = res.steps + cfg.eval_every;
      row.greedy_eval_reward = metrics::episode_metrics(ac.actor, env, cfg.eval_episodes).total_reward;
      if (cfg.early_stop && row.greedy_eval_reward >= cfg.early_stop_reward) stop = true;
    }
    if (hooks.after_update && hooks.after_update(row)) stop = true;
    res.log.push_back(row);
    if (stop) {
      res.early_stopped = res.steps < cfg.max_timesteps || cfg.early_stop;
      break;
    }
  }
  return res;
}

SourceResult train_source(const envs::Env& env, const nn::MlpSpec& actor_spec, const PpoConfig& cfg,
                          std::uint64_t seed) {
  Rng init = Rng::stream(seed, "source/init");
  SourceResult out;
  out.ac = init_actor_critic(actor_spec, init);
  Rng rng = Rng::stream(seed, "source/ppo");
  out.run = run_ppo(env, out.ac, cfg, rng);
  return out;
}

void write_log_csv(const std::string& path, const std::vector<LogRow>& log) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << "step,mean_episode_reward,greedy_eval_reward,policy_loss,value_loss,entropy\n";
  char buf[256];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step, r.mean_episode_reward,
                  r.greedy_eval_reward, r.policy_loss, r.value_loss, r.entropy);
    out << buf;
  }
}

std::string to_string(FinetuneMode m) {
  return m == FinetuneMode::AllowedLogProb ? "allowed_log_prob" : "multi_label";
}

FinetuneMode finetune_mode_from_string(const std::string& s) {
  if (s == "allowed_log_prob") return FinetuneMode::AllowedLogProb;
  if (s == "multi_label") return FinetuneMode::MultiLabel;
  throw ConfigError("unknown finetune mode '" + s + "'");
}

void FinetuneConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("finetune.lr must be positive");
  if (max_epochs < 0 || batch_size < 0) throw ConfigError("finetune sizes must be nonnegative");
}

nlohmann::json to_json(const FinetuneConfig& c) {
  return {{"mode", to_string(c.mode)},
          {"lr", c.lr},
          {"max_epochs", c.max_epochs},
          {"batch_size", c.batch_size},
          {"include_trajectory", c.include_trajectory},
          {"stop_at_target", c.stop_at_target}};
}

FinetuneConfig finetune_config_from_json(const nlohmann::json& j, FinetuneConfig c) {
  try {
    if (j.contains("mode")) c.mode = finetune_mode_from_string(j.at("mode").get<std::string>());
    c.lr = j.value("lr", c.lr);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.include_trajectory = j.value("include_trajectory", c.include_trajectory);
    c.stop_at_target = j.value("stop_at_target", c.stop_at_target);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed finetune config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

struct Target {
  std::vector<double> x;
  ActionSet allowed;
};

// -log sum_{a in S} p_a and its logit gradient p - 1{S} p / m, scaled.
double allowed_log_prob_loss(std::span<const double> z, ActionSet allowed, double scale, std::span<double> gz) {
  const auto d = nn::action_dist(z, 1.0);
  double max_lp = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < z.size(); ++a) {
    if (allowed.contains(a)) max_lp = std::max(max_lp, d.log_probs[a]);
  }
  // log-sum-exp over the allowed log-probs stays finite when the mass underflows
  double s = 0.0;
  for (std::size_t a = 0; a < z.size(); ++a) {
    if (allowed.contains(a)) s += std::exp(d.log_probs[a] - max_lp);
  }
  const double log_mass = max_lp + std::log(s);
  for (std::size_t a = 0; a < z.size(); ++a) {
    const double share = allowed.contains(a) ? std::exp(d.log_probs[a] - log_mass) : 0.0;
    gz[a] = scale * (d.probs[a] - share);
  }
  return -log_mass * scale;
}

// Mean binary cross-entropy with logits against the allowed mask.
double multi_label_loss(std::span<const double> z, ActionSet allowed, double scale, std::span<double> gz) {
  double loss = 0.0;
  for (std::size_t a = 0; a < z.size(); ++a) {
    const double y = allowed.contains(a) ? 1.0 : 0.0;
    const double softplus = std::max(z[a], 0.0) + std::log1p(std::exp(-std::abs(z[a])));
    loss += (softplus - y * z[a]) * scale;
    const double sig = 1.0 / (1.0 + std::exp(-z[a]));
    gz[a] = scale * (sig - y);
  }
  return loss;
}

bool finetune_done(const nn::ParamVector& actor, const envs::SafetyDataset& ds, const rashomon::RashomonConfig& rcfg,
                   double delta, double& beta) {
  if (metrics::critical_state_safety_rate(actor, ds) < 1.0) return false;
  const auto ts = rashomon::search_inverse_temperature(actor, ds, rcfg, delta);
  beta = ts.beta;
  return ts.found;
}

}  // namespace

FinetuneResult safety_finetune(const nn::ParamVector& actor, const envs::SafetyDataset& dataset,
                               const envs::Env* trajectory_env, const FinetuneConfig& cfg,
                               const rashomon::RashomonConfig& rcfg, Rng& rng) {
  cfg.validate();
  if (dataset.empty()) throw InvalidArgument("safety finetuning needs a nonempty dataset");
  FinetuneResult res;
  res.actor = actor;
  const double delta = rashomon::delta_star(dataset, rcfg.min_acc_increment);

  std::vector<Target> targets;
  for (const auto& e : dataset.entries) targets.push_back({e.encoding, e.safe_mask});
  if (cfg.include_trajectory) {
    if (trajectory_env == nullptr) throw InvalidArgument("trajectory targets need the source environment");
    const metrics::EpisodeResult ep = metrics::greedy_rollout(actor, *trajectory_env);
    for (std::size_t i = 0; i < ep.states.size(); ++i) {
      const envs::EnvState& s = ep.states[i];
      const ActionSet safe = trajectory_env->safe_action_set(s);
      ActionSet allowed;
      if (safe.contains(ep.actions[i])) {
        allowed.insert(ep.actions[i]);
      } else {
        allowed = safe;
      }
      targets.push_back({trajectory_env->encode(s), allowed});
    }
  }

  Adam opt(res.actor.size(), cfg.lr);
  std::vector<double> g(res.actor.size());
  std::vector<double> gz(res.actor.spec.output_dim);
  std::vector<std::size_t> order(targets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = cfg.batch_size > 0 ? static_cast<std::size_t>(cfg.batch_size) : targets.size();
  nn::Trace tr;

  for (int epoch = 0;; ++epoch) {
    if (cfg.stop_at_target && finetune_done(res.actor, dataset, rcfg, delta, res.beta)) {
      res.reached = true;
      res.epochs = epoch;
      return res;
    }
    if (epoch >= cfg.max_epochs) {
      res.epochs = epoch;
      if (!cfg.stop_at_target) res.reached = finetune_done(res.actor, dataset, rcfg, delta, res.beta);
      return res;
    }
    if (batch < targets.size()) {
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < targets.size(); start += batch) {
      const std::size_t end = std::min(targets.size(), start + batch);
      const std::size_t nb = end - start;
      std::fill(g.begin(), g.end(), 0.0);
      for (std::size_t i = start; i < end; ++i) {
        const Target& t = targets[order[i]];
        const auto z = nn::forward_trace(res.actor, t.x, tr);
        double l;
        if (cfg.mode == FinetuneMode::AllowedLogProb) {
          l = allowed_log_prob_loss(z, t.allowed, 1.0 / static_cast<double>(nb), gz);
        } else {
          l = multi_label_loss(z, t.allowed, 1.0 / static_cast<double>(nb * z.size()), gz);
        }
        epoch_loss += l * static_cast<double>(nb) / static_cast<double>(targets.size());
        nn::backward(res.actor, tr, gz, g);
      }
      opt.step(res.actor.values, g);
    }
    if (!std::isfinite(epoch_loss)) throw NumericError("non-finite finetuning loss");
    res.loss.push_back(epoch_loss);
  }
}

}  // namespace safeadapt::ppo
