#pragma once

// Interval bound propagation over a box of network parameters with a concrete
// input, the safe-mass surrogate and its sound lower bound, the hard logit
// certificate, and subgradients of the dataset bound with respect to the box
// half-widths.

#include <cstddef>
#include <span>
#include <vector>

#include "json.hpp"

#include "safeadapt/action_set.hpp"
#include "safeadapt/envs.hpp"
#include "safeadapt/policy_net.hpp"

namespace safeadapt::ibp {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct IntervalVector {
  std::vector<double> lo;
  std::vector<double> hi;

  IntervalVector() = default;
  explicit IntervalVector(std::size_t n) : lo(n, 0.0), hi(n, 0.0) {}
  /// Degenerate intervals [x, x].
  static IntervalVector point(std::span<const double> x);

  std::size_t size() const { return lo.size(); }
  Interval operator[](std::size_t i) const { return {lo[i], hi[i]}; }
};

/// {theta : center - alpha <= theta <= center + alpha}
struct Orthotope {
  nn::ParamVector center;
  std::vector<double> alpha;

  Orthotope() = default;
  Orthotope(nn::ParamVector c, std::vector<double> a);
  /// Zero-width box around `c`.
  explicit Orthotope(nn::ParamVector c);

  bool contains(std::span<const double> theta) const;
  /// Throws InvalidArgument on a negative or non-finite half-width.
  void validate() const;
};

/// Sound enclosure of {W x + b} for W in [wc +- wr] (rows x cols, row-major),
/// b in [bc +- br] and x in [x.lo, x.hi].
IntervalVector interval_affine(std::span<const double> wc, std::span<const double> wr,
                               std::span<const double> bc, std::span<const double> br,
                               std::size_t rows, std::size_t cols, const IntervalVector& x);

IntervalVector interval_relu(const IntervalVector& v);
IntervalVector interval_tanh(const IntervalVector& v);

/// Per-action logit enclosure over every parameter vector in the box.
IntervalVector logit_bounds(const Orthotope& box, std::span<const double> x);

/// Tempered-softmax probability mass on the safe actions of an exact logit
/// vector.
double safe_mass(std::span<const double> logits, ActionSet safe, double beta);

/// Greedy (lowest-index argmax) action lies in `safe`.
bool hard_spec(std::span<const double> logits, ActionSet safe);

/// S / (S + U) with S = sum_safe exp(beta lo_a), U = sum_unsafe exp(beta hi_a).
double surrogate_lower_bound(const IntervalVector& bounds, ActionSet safe, double beta);

/// Value and gradients with respect to the bound endpoints (g_lo is nonzero
/// only on safe actions, g_hi only on unsafe ones).
double surrogate_lower_bound_grad(const IntervalVector& bounds, ActionSet safe, double beta,
                                  std::span<double> g_lo, std::span<double> g_hi);

/// log S - log U, the log-odds form of the same bound. Unlike the bound
/// itself its gradient does not vanish when the bound saturates at 0 or 1.
double surrogate_log_odds_grad(const IntervalVector& bounds, ActionSet safe, double beta,
                               std::span<double> g_lo, std::span<double> g_hi);
double surrogate_log_odds(const IntervalVector& bounds, ActionSet safe, double beta);

/// max_{safe} lo > max_{unsafe} hi
bool hard_certificate(const IntervalVector& bounds, ActionSet safe);

struct StateBounds {
  IntervalVector logits;
  double surrogate_lb = 0.0;
  bool hard_cert = false;
};

StateBounds state_bounds(const Orthotope& box, std::span<const double> x, ActionSet safe, double beta);

struct DatasetBound {
  double global_lb = 1.0;
  std::size_t argmin = 0;
  double hard_cert_rate = 1.0;
  std::vector<StateBounds> per_state;
};

/// Exact minimum over dataset states. Throws InvalidArgument on an empty
/// dataset.
DatasetBound dataset_lower_bound(const Orthotope& box, const envs::SafetyDataset& dataset, double beta,
                                 unsigned threads = 1);

enum class Aggregation { Min, SoftMin };

/// Quantity being aggregated: the bound itself or its log-odds.
enum class Scale { Probability, LogOdds };

struct BoundGradient {
  double value = 0.0;  // aggregated bound (soft or exact min)
  double exact_min = 0.0;
  std::size_t argmin = 0;
  std::vector<double> d_alpha;
};

/// Subgradient of the aggregated bound with respect to alpha. Min routes the
/// gradient to the lowest-index minimising state; SoftMin uses
/// -log(sum exp(-k b_s)) / k with weights softmax(-k b).
BoundGradient lower_bound_subgradient(const Orthotope& box, const envs::SafetyDataset& dataset,
                                      double beta, Aggregation agg = Aggregation::Min,
                                      double sharpness = 500.0, unsigned threads = 1,
                                      Scale scale = Scale::Probability);

/// Bound and its gradient for a single state (accumulated into d_alpha).
double state_bound_grad(const Orthotope& box, std::span<const double> x, ActionSet safe, double beta,
                        double weight, std::span<double> d_alpha, Scale scale = Scale::Probability);

nlohmann::json to_json(const StateBounds& b);

}  // namespace safeadapt::ibp
