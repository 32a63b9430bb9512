#pragma once

// Certified parameter region around a source policy: inverse-temperature
// search, primal-dual volume maximisation of an axis-aligned box subject to a
// sound lower bound on the safe-action mass, and independent re-verification.

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "safeadapt/envs.hpp"
#include "safeadapt/ibp.hpp"
#include "safeadapt/policy_net.hpp"
#include "safeadapt/rng.hpp"

namespace safeadapt::rashomon {

struct RashomonConfig {
  int n_iters = 5000;
  int checkpoint_every = 100;
  double min_acc_increment = 0.0;
  double beta_min = 10.0;
  double beta_max = 1000.0;
  int beta_grid_points = 32;
  double hard_threshold = 1.0;
  double primal_lr = 1e-2;
  /// Step size reached at the last iteration (geometric schedule). Equal to
  /// primal_lr means a constant step.
  double primal_lr_final = 1e-3;
  double dual_lr = 1e-2;
  double lambda_init = 1.0;
  double alpha_init = 1e-4;
  double alpha_floor = 1e-12;
  double alpha_cap = 1e4;
  /// Soft-min sharpness, applied to per-state log-odds.
  double softmin_sharpness = 50.0;
  double accept_margin = 1e-9;
  unsigned threads = 1;

  void validate() const;
};

nlohmann::json to_json(const RashomonConfig& c);
RashomonConfig rashomon_config_from_json(const nlohmann::json& j, RashomonConfig base = {});

/// M / (1 + M) + increment, M = largest safe-action set in the dataset.
double delta_star(const envs::SafetyDataset& dataset, double min_acc_increment = 0.0);

/// Geometric grid beta_k = lo (hi/lo)^(k/(n-1)).
std::vector<double> beta_grid(double lo, double hi, int n);

struct TemperatureSearch {
  bool found = false;
  double beta = 0.0;
  /// When not found: the dataset index with the smallest mass at the largest
  /// beta, and that mass.
  std::size_t failing_index = 0;
  double failing_mass = 0.0;
};

/// Smallest grid beta at which the centre policy's exact safe mass exceeds
/// delta at every dataset state.
TemperatureSearch search_inverse_temperature(const nn::ParamVector& center, const envs::SafetyDataset& dataset,
                                             const RashomonConfig& cfg, double delta);

/// The box-volume problem as seen by the solver.
class LidProblem {
 public:
  virtual ~LidProblem() = default;
  virtual std::size_t dim() const = 0;
  /// Smoothed constraint margin and its gradient with respect to alpha. The
  /// margin is positive exactly where the bound exceeds the threshold; its
  /// scale is up to the problem.
  virtual double margin_and_grad(const std::vector<double>& alpha, std::vector<double>& grad) = 0;
  struct Check {
    double global_lb = 0.0;
    double hard_rate = 0.0;
  };
  /// Exact (unsmoothed) bound and hard-certificate rate.
  virtual Check check(const std::vector<double>& alpha) = 0;
};

struct SolverTraceRow {
  int iteration = 0;
  double smooth_margin = 0.0;
  double lambda = 0.0;
  double mean_log_alpha = 0.0;
  bool checkpoint = false;
  double exact_lb = 0.0;
  double hard_rate = 0.0;
  bool accepted = false;
};

struct LidSolution {
  std::vector<double> alpha;
  double global_lb = 0.0;
  double hard_rate = 0.0;
  int iteration = 0;
  std::vector<SolverTraceRow> trace;
};

/// Primal-dual ascent on sum log alpha + lambda margin(alpha) in
/// u = log alpha. Returns the last checkpoint whose exact bound clears delta
/// and whose hard rate meets the threshold, or nullopt.
std::optional<LidSolution> solve_max_lid(LidProblem& problem, double delta, const RashomonConfig& cfg);

/// Network + dataset instance of LidProblem.
class NetworkLidProblem : public LidProblem {
 public:
  /// The margin is the soft-min over states of the bound's log-odds minus
  /// log(delta / (1 - delta)).
  NetworkLidProblem(const nn::ParamVector& center, const envs::SafetyDataset& dataset, double beta,
                    double delta, const RashomonConfig& cfg);
  std::size_t dim() const override { return box_.alpha.size(); }
  double margin_and_grad(const std::vector<double>& alpha, std::vector<double>& grad) override;
  Check check(const std::vector<double>& alpha) override;

 private:
  ibp::Orthotope box_;
  const envs::SafetyDataset& dataset_;
  double beta_;
  double delta_log_odds_;
  RashomonConfig cfg_;
};

struct Certificate {
  ibp::Orthotope box;
  double beta = 0.0;
  double delta_star = 0.0;
  double global_lb = 0.0;
  double hard_cert_rate = 0.0;
  int iteration = 0;
  std::string center_checkpoint;
  std::vector<ibp::StateBounds> per_state;
  std::vector<envs::StateKey> state_keys;
};

struct CertifyResult {
  Certificate cert;
  std::vector<SolverTraceRow> trace;
};

/// delta_star, temperature search and solver in sequence. Throws
/// CertificationRefused naming the failing state when no region can be
/// certified.
CertifyResult max_lid(const nn::ParamVector& center, const envs::SafetyDataset& dataset,
                      const RashomonConfig& cfg, const std::function<std::string(std::size_t)>& describe = {});

struct VerificationReport {
  bool passed = false;
  double global_lb = 0.0;
  double delta_star = 0.0;
  double hard_cert_rate = 0.0;
  std::vector<double> margins;  // surrogate_lb - delta_star per state
  std::size_t samples = 0;
  std::size_t sample_violations = 0;
  std::string failing_state;
};

/// Recomputes every bound from scratch and checks greedy safety of `samples`
/// parameter vectors drawn uniformly from the box.
VerificationReport verify_certificate(const Certificate& cert, const envs::SafetyDataset& dataset,
                                      std::size_t samples, Rng& rng, double hard_threshold = 1.0);

nlohmann::json to_json(const Certificate& c);
/// The centre comes from the checkpoint named in the file; the caller loads it.
Certificate certificate_from_json(const nlohmann::json& j, nn::ParamVector center);
nlohmann::json to_json(const VerificationReport& r);

}  // namespace safeadapt::rashomon
