#include "safeadapt/rashomon.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "safeadapt/adam.hpp"
#include "safeadapt/errors.hpp"

namespace safeadapt::rashomon {

void RashomonConfig::validate() const {
  if (n_iters <= 0) throw ConfigError("rashomon.n_iters must be positive");
  if (checkpoint_every <= 0) throw ConfigError("rashomon.checkpoint_every must be positive");
  if (!(beta_min > 0.0) || !(beta_max >= beta_min)) throw ConfigError("rashomon temperature range is invalid");
  if (beta_grid_points < 1) throw ConfigError("rashomon.beta_grid_points must be positive");
  if (!(hard_threshold > 0.0 && hard_threshold <= 1.0)) throw ConfigError("rashomon.hard_threshold must be in (0, 1]");
  if (!(primal_lr > 0.0) || !(primal_lr_final > 0.0) || !(dual_lr > 0.0)) {
    throw ConfigError("rashomon step sizes must be positive");
  }
  if (!(alpha_init > 0.0) || !(alpha_floor > 0.0) || !(alpha_cap >= alpha_init) || alpha_floor > alpha_init) {
    throw ConfigError("rashomon half-width floor/init/cap are inconsistent");
  }
  if (!(softmin_sharpness > 0.0)) throw ConfigError("rashomon.softmin_sharpness must be positive");
  if (min_acc_increment < 0.0) throw ConfigError("rashomon.min_acc_increment must be nonnegative");
}

nlohmann::json to_json(const RashomonConfig& c) {
  return {{"n_iters", c.n_iters},
          {"checkpoint_every", c.checkpoint_every},
          {"min_acc_increment", c.min_acc_increment},
          {"beta_min", c.beta_min},
          {"beta_max", c.beta_max},
          {"beta_grid_points", c.beta_grid_points},
          {"hard_threshold", c.hard_threshold},
          {"primal_lr", c.primal_lr},
          {"primal_lr_final", c.primal_lr_final},
          {"dual_lr", c.dual_lr},
          {"lambda_init", c.lambda_init},
          {"alpha_init", c.alpha_init},
          {"alpha_floor", c.alpha_floor},
          {"alpha_cap", c.alpha_cap},
          {"softmin_sharpness", c.softmin_sharpness},
          {"accept_margin", c.accept_margin},
          {"threads", c.threads}};
}

RashomonConfig rashomon_config_from_json(const nlohmann::json& j, RashomonConfig c) {
  try {
    c.n_iters = j.value("n_iters", c.n_iters);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.min_acc_increment = j.value("min_acc_increment", c.min_acc_increment);
    c.beta_min = j.value("beta_min", c.beta_min);
    c.beta_max = j.value("beta_max", c.beta_max);
    c.beta_grid_points = j.value("beta_grid_points", c.beta_grid_points);
    c.hard_threshold = j.value("hard_threshold", c.hard_threshold);
    c.primal_lr = j.value("primal_lr", c.primal_lr);
    c.primal_lr_final = j.value("primal_lr_final", c.primal_lr_final);
    c.dual_lr = j.value("dual_lr", c.dual_lr);
    c.lambda_init = j.value("lambda_init", c.lambda_init);
    c.alpha_init = j.value("alpha_init", c.alpha_init);
    c.alpha_floor = j.value("alpha_floor", c.alpha_floor);
    c.alpha_cap = j.value("alpha_cap", c.alpha_cap);
    c.softmin_sharpness = j.value("softmin_sharpness", c.softmin_sharpness);
    c.accept_margin = j.value("accept_margin", c.accept_margin);
    c.threads = j.value("threads", c.threads);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed rashomon config: ") + e.what());
  }
  c.validate();
  return c;
}

double delta_star(const envs::SafetyDataset& dataset, double min_acc_increment) {
  if (dataset.empty()) throw InvalidArgument("threshold of an empty safety dataset");
  const double m = static_cast<double>(dataset.max_safe_actions());
  return m / (1.0 + m) + min_acc_increment;
}

std::vector<double> beta_grid(double lo, double hi, int n) {
  std::vector<double> grid;
  if (n == 1) return {lo};
  for (int k = 0; k < n; ++k) {
    grid.push_back(lo * std::pow(hi / lo, static_cast<double>(k) / static_cast<double>(n - 1)));
  }
  grid.back() = hi;
  return grid;
}

TemperatureSearch search_inverse_temperature(const nn::ParamVector& center, const envs::SafetyDataset& dataset,
                                             const RashomonConfig& cfg, double delta) {
  if (dataset.empty()) throw InvalidArgument("temperature search on an empty safety dataset");
  std::vector<std::vector<double>> logits;
  logits.reserve(dataset.size());
  for (const auto& e : dataset.entries) logits.push_back(nn::forward(center, e.encoding));
  TemperatureSearch out;
  for (double beta : beta_grid(cfg.beta_min, cfg.beta_max, cfg.beta_grid_points)) {
    double worst = std::numeric_limits<double>::infinity();
    std::size_t worst_i = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double m = ibp::safe_mass(logits[i], dataset.entries[i].safe_mask, beta);
      if (m < worst) {
        worst = m;
        worst_i = i;
      }
    }
    if (worst > delta) {
      out.found = true;
      out.beta = beta;
      return out;
    }
    out.failing_index = worst_i;
    out.failing_mass = worst;
  }
  return out;
}

namespace {

void clamp_u(std::vector<double>& u, double lo, double hi) {
  for (double& v : u) v = std::clamp(v, lo, hi);
}

std::vector<double> alpha_of(const std::vector<double>& u, double floor, double cap) {
  std::vector<double> a(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) a[i] = std::clamp(std::exp(u[i]), floor, cap);
  return a;
}

}  // namespace

std::optional<LidSolution> solve_max_lid(LidProblem& problem, double delta, const RashomonConfig& cfg) {
  cfg.validate();
  const std::size_t n = problem.dim();
  const double u_lo = std::log(cfg.alpha_floor);
  const double u_hi = std::log(cfg.alpha_cap);
  std::vector<double> u(n, std::log(cfg.alpha_init));
  double lambda = cfg.lambda_init;
  Adam opt(n, cfg.primal_lr);
  std::vector<double> grad(n), step(n);
  std::optional<LidSolution> best;
  std::vector<SolverTraceRow> trace;
  const double decay = std::log(cfg.primal_lr_final / cfg.primal_lr);

  for (int it = 1; it <= cfg.n_iters; ++it) {
    std::vector<double> alpha = alpha_of(u, cfg.alpha_floor, cfg.alpha_cap);
    std::fill(grad.begin(), grad.end(), 0.0);
    const double g = problem.margin_and_grad(alpha, grad);
    if (!std::isfinite(g)) {
      throw NumericError("non-finite certified bound at iteration " + std::to_string(it));
    }
    // Ascent on mean(u) + lambda * margin(exp(u)); the optimiser minimises.
    // The mean has the same maximiser as the sum of log half-widths but keeps
    // the multiplier independent of the parameter count.
    const double w = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double d = w + lambda * grad[i] * alpha[i];
      if (!std::isfinite(d)) throw NumericError("non-finite bound gradient at iteration " + std::to_string(it));
      step[i] = -d;
    }
    const double frac = static_cast<double>(it - 1) / static_cast<double>(std::max(1, cfg.n_iters - 1));
    opt.set_lr(cfg.primal_lr * std::exp(decay * frac));
    opt.step(u, step);
    clamp_u(u, u_lo, u_hi);
    lambda = std::max(0.0, lambda - cfg.dual_lr * g);

    SolverTraceRow row;
    row.iteration = it;
    row.smooth_margin = g;
    row.lambda = lambda;
    double s = 0.0;
    for (double v : u) s += v;
    row.mean_log_alpha = s / static_cast<double>(n);

    if (it % cfg.checkpoint_every == 0 || it == cfg.n_iters) {
      alpha = alpha_of(u, cfg.alpha_floor, cfg.alpha_cap);
      const LidProblem::Check c = problem.check(alpha);
      row.checkpoint = true;
      row.exact_lb = c.global_lb;
      row.hard_rate = c.hard_rate;
      if (c.global_lb - delta >= cfg.accept_margin && c.hard_rate >= cfg.hard_threshold) {
        row.accepted = true;
        best = LidSolution{alpha, c.global_lb, c.hard_rate, it, {}};
      }
    }
    trace.push_back(row);
  }
  if (best) best->trace = std::move(trace);
  return best;
}

NetworkLidProblem::NetworkLidProblem(const nn::ParamVector& center, const envs::SafetyDataset& dataset,
                                     double beta, double delta, const RashomonConfig& cfg)
    : box_(center), dataset_(dataset), beta_(beta), delta_log_odds_(std::log(delta / (1.0 - delta))), cfg_(cfg) {
  if (!(delta > 0.0 && delta < 1.0)) throw InvalidArgument("certified threshold must lie in (0, 1)");
}

double NetworkLidProblem::margin_and_grad(const std::vector<double>& alpha, std::vector<double>& grad) {
  box_.alpha = alpha;
  ibp::BoundGradient bg = ibp::lower_bound_subgradient(box_, dataset_, beta_, ibp::Aggregation::SoftMin,
                                                       cfg_.softmin_sharpness, cfg_.threads, ibp::Scale::LogOdds);
  grad = std::move(bg.d_alpha);
  return bg.value - delta_log_odds_;
}

LidProblem::Check NetworkLidProblem::check(const std::vector<double>& alpha) {
  box_.alpha = alpha;
  const ibp::DatasetBound db = ibp::dataset_lower_bound(box_, dataset_, beta_, cfg_.threads);
  return {db.global_lb, db.hard_cert_rate};
}

CertifyResult max_lid(const nn::ParamVector& center, const envs::SafetyDataset& dataset,
                      const RashomonConfig& cfg, const std::function<std::string(std::size_t)>& describe) {
  cfg.validate();
  const auto name = [&](std::size_t i) {
    return describe ? describe(i) : "dataset entry " + std::to_string(i);
  };
  const double delta = delta_star(dataset, cfg.min_acc_increment);
  const TemperatureSearch ts = search_inverse_temperature(center, dataset, cfg, delta);
  if (!ts.found) {
    throw CertificationRefused("source policy violates the safe-mass threshold for every inverse temperature",
                               name(ts.failing_index));
  }
  NetworkLidProblem problem(center, dataset, ts.beta, delta, cfg);
  std::optional<LidSolution> sol = solve_max_lid(problem, delta, cfg);
  if (!sol) {
    // Report the state that is tightest at the initial box.
    ibp::Orthotope box(center, std::vector<double>(center.values.size(), cfg.alpha_init));
    const ibp::DatasetBound db = ibp::dataset_lower_bound(box, dataset, ts.beta, cfg.threads);
    throw CertificationRefused("no checkpoint met the certified threshold", name(db.argmin));
  }
  CertifyResult out;
  out.cert.box = ibp::Orthotope(center, sol->alpha);
  out.cert.beta = ts.beta;
  out.cert.delta_star = delta;
  out.cert.iteration = sol->iteration;
  const ibp::DatasetBound db = ibp::dataset_lower_bound(out.cert.box, dataset, ts.beta, cfg.threads);
  out.cert.global_lb = db.global_lb;
  out.cert.hard_cert_rate = db.hard_cert_rate;
  out.cert.per_state = db.per_state;
  for (const auto& e : dataset.entries) out.cert.state_keys.push_back(e.state.key());
  out.trace = std::move(sol->trace);
  return out;
}

VerificationReport verify_certificate(const Certificate& cert, const envs::SafetyDataset& dataset,
                                      std::size_t samples, Rng& rng, double hard_threshold) {
  cert.box.validate();
  VerificationReport r;
  r.delta_star = cert.delta_star;
  const double expected = delta_star(dataset, 0.0);
  if (cert.delta_star < expected) {
    r.failing_state = "certificate threshold is below the dataset's sound threshold";
    return r;
  }
  const ibp::DatasetBound db = ibp::dataset_lower_bound(cert.box, dataset, cert.beta);
  r.global_lb = db.global_lb;
  r.hard_cert_rate = db.hard_cert_rate;
  for (const auto& s : db.per_state) r.margins.push_back(s.surrogate_lb - cert.delta_star);
  bool ok = db.global_lb > cert.delta_star && db.hard_cert_rate >= hard_threshold;
  if (!ok) {
    const std::size_t worst = db.global_lb > cert.delta_star
                                  ? static_cast<std::size_t>(std::find_if(db.per_state.begin(), db.per_state.end(),
                                                                          [](const auto& s) { return !s.hard_cert; }) -
                                                             db.per_state.begin())
                                  : db.argmin;
    r.failing_state = "entry " + std::to_string(worst);
  }

  nn::ParamVector theta = cert.box.center;
  const std::size_t n = theta.values.size();
  for (std::size_t k = 0; k < samples; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      const double c = cert.box.center.values[i];
      const double a = cert.box.alpha[i];
      theta.values[i] = c + a * (2.0 * rng.uniform() - 1.0);
    }
    ++r.samples;
    for (std::size_t s = 0; s < dataset.size(); ++s) {
      const auto z = nn::forward(theta, dataset.entries[s].encoding);
      if (!ibp::hard_spec(z, dataset.entries[s].safe_mask)) {
        ++r.sample_violations;
        if (r.failing_state.empty()) r.failing_state = "entry " + std::to_string(s);
        break;
      }
    }
  }
  r.passed = ok && r.sample_violations == 0;
  return r;
}

nlohmann::json to_json(const Certificate& c) {
  nlohmann::json per_state = nlohmann::json::array();
  for (std::size_t i = 0; i < c.per_state.size(); ++i) {
    nlohmann::json s = ibp::to_json(c.per_state[i]);
    if (i < c.state_keys.size()) {
      const auto& k = c.state_keys[i];
      s["state_key"] = {{"cell", k.cell}, {"task", k.task}, {"apples", k.apples}};
    }
    per_state.push_back(std::move(s));
  }
  return {{"beta", c.beta},
          {"delta_star", c.delta_star},
          {"alpha", c.box.alpha},
          {"center_checkpoint", c.center_checkpoint},
          {"global_lb", c.global_lb},
          {"hard_cert_rate", c.hard_cert_rate},
          {"iteration", c.iteration},
          {"per_state", std::move(per_state)}};
}

Certificate certificate_from_json(const nlohmann::json& j, nn::ParamVector center) {
  try {
    Certificate c;
    c.beta = j.at("beta").get<double>();
    c.delta_star = j.at("delta_star").get<double>();
    c.box = ibp::Orthotope(std::move(center), j.at("alpha").get<std::vector<double>>());
    c.center_checkpoint = j.value("center_checkpoint", std::string());
    c.global_lb = j.at("global_lb").get<double>();
    c.hard_cert_rate = j.at("hard_cert_rate").get<double>();
    c.iteration = j.at("iteration").get<int>();
    for (const auto& s : j.at("per_state")) {
      ibp::StateBounds b;
      b.logits.lo = s.at("logit_lo").get<std::vector<double>>();
      b.logits.hi = s.at("logit_hi").get<std::vector<double>>();
      b.surrogate_lb = s.at("surrogate_lb").get<double>();
      b.hard_cert = s.at("hard_cert").get<bool>();
      c.per_state.push_back(std::move(b));
      if (s.contains("state_key")) {
        const auto& k = s.at("state_key");
        c.state_keys.push_back({k.at("cell").get<int>(), k.at("task").get<int>(), k.at("apples").get<std::uint64_t>()});
      }
    }
    if (!(c.beta > 0.0)) throw ConfigError("certificate inverse temperature must be positive");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed certificate: ") + e.what());
  }
}

nlohmann::json to_json(const VerificationReport& r) {
  return {{"passed", r.passed},
          {"global_lb", r.global_lb},
          {"delta_star", r.delta_star},
          {"hard_cert_rate", r.hard_cert_rate},
          {"margins", r.margins},
          {"samples", r.samples},
          {"sample_violations", r.sample_violations},
          {"failing_state", r.failing_state}};
}

}  // namespace safeadapt::rashomon
