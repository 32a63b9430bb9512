#include "safeadapt/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "safeadapt/errors.hpp"
#include "safeadapt/metrics.hpp"

namespace safeadapt::adapt {

std::string to_string(Mode m) {
  switch (m) {
    case Mode::Safe: return "safe";
    case Mode::Unsafe: return "unsafe";
    case Mode::Ewc: return "ewc";
  }
  return "?";
}

Mode mode_from_string(const std::string& s) {
  if (s == "safe") return Mode::Safe;
  if (s == "unsafe") return Mode::Unsafe;
  if (s == "ewc") return Mode::Ewc;
  throw ConfigError("unknown adapt mode '" + s + "' (expected safe, unsafe or ewc)");
}

AdaptConfig AdaptConfig::defaults(envs::EnvKind kind, Mode mode) {
  AdaptConfig c;
  c.mode = mode;
  c.ppo.n_steps = 2048;
  c.ppo.n_epochs = 10;
  c.ppo.batch_size = 64;
  c.ppo.lr = 3e-4;
  c.ppo.eval_every = 20480;
  c.ppo.early_stop = true;
  c.ppo.eval_episodes = mode == Mode::Ewc ? 10 : 1;
  if (kind == envs::EnvKind::FrozenLake) {
    c.ppo.max_timesteps = 50000;
    c.ppo.ent_coef = 0.1;
    c.ppo.early_stop_reward = 1.0;
  } else {
    c.ppo.max_timesteps = 20000;
    c.ppo.ent_coef = 0.01;
    c.ppo.early_stop_reward = 0.96;
  }
  return c;
}

void AdaptConfig::validate() const {
  ppo.validate();
  if (!(ewc_lambda >= 0.0) || !std::isfinite(ewc_lambda)) throw ConfigError("adapt.ewc_lambda must be finite and >= 0");
  if (fisher_cap == 0) throw ConfigError("adapt.fisher_cap must be positive");
}

nlohmann::json to_json(const AdaptConfig& c) {
  return {{"mode", to_string(c.mode)}, {"ppo", ppo::to_json(c.ppo)}, {"ewc_lambda", c.ewc_lambda},
          {"fisher_cap", c.fisher_cap}};
}

AdaptConfig adapt_config_from_json(const nlohmann::json& j, AdaptConfig c) {
  try {
    if (j.contains("mode")) c.mode = mode_from_string(j.at("mode").get<std::string>());
    if (j.contains("ppo")) c.ppo = ppo::ppo_config_from_json(j.at("ppo"), c.ppo);
    c.ewc_lambda = j.value("ewc_lambda", c.ewc_lambda);
    c.fisher_cap = j.value("fisher_cap", c.fisher_cap);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed adapt config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const FisherDiag& f) {
  return {{"values", f.values}, {"states_used", f.states_used}, {"cap", f.cap}};
}

FisherDiag fisher_from_json(const nlohmann::json& j) {
  FisherDiag f;
  try {
    f.values = j.at("values").get<std::vector<double>>();
    f.states_used = j.at("states_used").get<std::size_t>();
    f.cap = j.at("cap").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed Fisher file: ") + e.what());
  }
  for (double v : f.values) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("Fisher values must be finite and nonnegative");
  }
  return f;
}

FisherDiag fisher_diag(const nn::ParamVector& actor, const envs::Env& env, const std::vector<envs::EnvState>& states,
                       std::size_t cap, std::uint64_t seed) {
  if (states.empty()) throw InvalidArgument("Fisher estimate needs at least one state");
  if (cap == 0) throw InvalidArgument("Fisher sample cap must be positive");
  Rng rng = Rng::stream(seed, "fisher");

  std::vector<std::size_t> order(states.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t n = std::min(cap, states.size());
  if (n < states.size()) {
    // Partial Fisher-Yates: the first n entries are a uniform sample.
    for (std::size_t i = 0; i < n; ++i) std::swap(order[i], order[i + rng.below(states.size() - i)]);
    order.resize(n);
  }

  FisherDiag f;
  f.values.assign(actor.size(), 0.0);
  f.states_used = n;
  f.cap = cap;
  std::vector<double> x(env.encoding_dim()), g(actor.size()), up(actor.spec.output_dim);
  nn::Trace trace;
  for (std::size_t idx : order) {
    env.encode(states[idx], x);
    const auto z = nn::forward_trace(actor, x, trace);
    const auto dist = nn::action_dist(z);
    const std::size_t a = nn::sample_action(dist, rng);
    // d log pi(a) / dz_c = [c == a] - p_c
    for (std::size_t c = 0; c < up.size(); ++c) up[c] = (c == a ? 1.0 : 0.0) - dist.probs[c];
    std::fill(g.begin(), g.end(), 0.0);
    nn::backward(actor, trace, up, g);
    for (std::size_t i = 0; i < g.size(); ++i) f.values[i] += g[i] * g[i];
  }
  for (double& v : f.values) v /= static_cast<double>(n);
  return f;
}

void project_in_place(nn::ParamVector& params, const ibp::Orthotope& box) {
  if (params.size() != box.alpha.size() || !(params.spec == box.center.spec)) {
    throw DimensionError("parameter layout does not match the certificate");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double lo = box.center.values[i] - box.alpha[i];
    const double hi = box.center.values[i] + box.alpha[i];
    params.values[i] = std::clamp(params.values[i], lo, hi);
  }
}

nn::ParamVector project(const nn::ParamVector& params, const ibp::Orthotope& box) {
  nn::ParamVector out = params;
  project_in_place(out, box);
  return out;
}

namespace {

struct RunSpec {
  Mode mode = Mode::Unsafe;
  const ibp::Orthotope* box = nullptr;
  const envs::SafetyDataset* task1 = nullptr;
  std::function<double(const nn::ParamVector&, std::span<double>)> regularizer;
};

AdaptResult run(const ppo::ActorCritic& source, const envs::Env& task2, const AdaptConfig& cfg, std::uint64_t seed,
                const RunSpec& spec) {
  cfg.validate();
  AdaptResult res;
  res.ac = source;
  // Every mode draws from the same stream so that runs differ only by the
  // mode-specific hooks.
  Rng rng = Rng::stream(seed, "adapt");

  ppo::PpoHooks hooks;
  hooks.actor_regularizer = spec.regularizer;
  if (spec.box != nullptr) {
    const ibp::Orthotope& box = *spec.box;
    hooks.after_step = [&box](nn::ParamVector& actor) {
      project_in_place(actor, box);
      if (!box.contains(actor.values)) throw InvariantBreach("actor left the certified box after projection");
    };
  }
  hooks.after_update = [&](ppo::LogRow& row) {
    AdaptLogRow r;
    r.ppo = row;
    r.mode = spec.mode;
    r.contained = spec.box != nullptr && spec.box->contains(res.ac.actor.values);
    r.phi_sc_task1 = spec.task1 != nullptr ? metrics::critical_state_safety_rate(res.ac.actor, *spec.task1)
                                           : std::numeric_limits<double>::quiet_NaN();
    if (spec.mode == Mode::Safe) {
      if (!r.contained) throw InvariantBreach("actor outside the certified box at step " + std::to_string(row.step));
      if (r.phi_sc_task1 != 1.0) {
        throw InvariantBreach("source-task safety rate " + std::to_string(r.phi_sc_task1) +
                              " inside the certified box at step " + std::to_string(row.step));
      }
    }
    res.log.push_back(r);
    return false;
  };

  const ppo::RunResult rr = ppo::run_ppo(task2, res.ac, cfg.ppo, rng, hooks);
  res.steps = rr.steps;
  res.early_stopped = rr.early_stopped;
  return res;
}

}  // namespace

AdaptResult adapt_safe(const ppo::ActorCritic& source, const rashomon::Certificate& cert, const envs::Env& task2,
                       const AdaptConfig& cfg, std::uint64_t seed, const envs::SafetyDataset& task1_dataset) {
  cert.box.validate();
  if (!cert.box.contains(source.actor.values)) {
    throw InvalidArgument("source actor does not lie in the certificate box");
  }
  RunSpec spec;
  spec.mode = Mode::Safe;
  spec.box = &cert.box;
  spec.task1 = &task1_dataset;
  return run(source, task2, cfg, seed, spec);
}

AdaptResult adapt_unsafe(const ppo::ActorCritic& source, const envs::Env& task2, const AdaptConfig& cfg,
                         std::uint64_t seed, const envs::SafetyDataset* task1_dataset) {
  RunSpec spec;
  spec.mode = Mode::Unsafe;
  spec.task1 = task1_dataset;
  return run(source, task2, cfg, seed, spec);
}

AdaptResult adapt_ewc(const ppo::ActorCritic& source, const FisherDiag& fisher, const envs::Env& task2,
                      const AdaptConfig& cfg, std::uint64_t seed, const envs::SafetyDataset* task1_dataset) {
  if (fisher.values.size() != source.actor.size()) throw DimensionError("Fisher length does not match the actor");
  RunSpec spec;
  spec.mode = Mode::Ewc;
  spec.task1 = task1_dataset;
  const double lambda = cfg.ewc_lambda;
  const std::vector<double> anchor = source.actor.values;
  const std::vector<double>& F = fisher.values;
  spec.regularizer = [lambda, anchor, &F](const nn::ParamVector& actor, std::span<double> grad) {
    double v = 0.0;
    for (std::size_t i = 0; i < anchor.size(); ++i) {
      const double d = actor.values[i] - anchor[i];
      v += F[i] * d * d;
      grad[i] += lambda * F[i] * d;
    }
    return 0.5 * lambda * v;
  };
  return run(source, task2, cfg, seed, spec);
}

void write_log_csv(const std::string& path, const std::vector<AdaptLogRow>& log) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << "step,mean_episode_reward,greedy_eval_reward,policy_loss,value_loss,entropy,mode,contained,phi_sc_task1\n";
  char buf[320];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%s,%d,%.17g\n", r.ppo.step,
                  r.ppo.mean_episode_reward, r.ppo.greedy_eval_reward, r.ppo.policy_loss, r.ppo.value_loss,
                  r.ppo.entropy, to_string(r.mode).c_str(), r.contained ? 1 : 0, r.phi_sc_task1);
    out << buf;
  }
}

}  // namespace safeadapt::adapt
