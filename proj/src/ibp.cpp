#include "safeadapt/ibp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include "safeadapt/errors.hpp"
#include "safeadapt/kernels.hpp"

namespace safeadapt::ibp {
namespace {

// Four-corner rule for inputs that may be negative. Ties go to the first
// corner in (wl*xl, wl*xu, wu*xl, wu*xu) order so forward and backward agree.
struct Corner {
  bool upper_w;
  bool upper_x;
};

constexpr Corner kCorners[4] = {{false, false}, {false, true}, {true, false}, {true, true}};

void corners(double wl, double wu, double xl, double xu, int& imin, int& imax, double& pmin,
             double& pmax) {
  const double p[4] = {wl * xl, wl * xu, wu * xl, wu * xu};
  imin = imax = 0;
  for (int i = 1; i < 4; ++i) {
    if (p[i] < p[imin]) imin = i;
    if (p[i] > p[imax]) imax = i;
  }
  pmin = p[imin];
  pmax = p[imax];
}

void general_row(const double* wc, const double* wr, const double* xl, const double* xu,
                 std::size_t n, double* lo, double* hi) {
  double lo_sum = 0.0;
  double hi_sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    int imin, imax;
    double pmin, pmax;
    corners(wc[j] - wr[j], wc[j] + wr[j], xl[j], xu[j], imin, imax, pmin, pmax);
    lo_sum += pmin;
    hi_sum += pmax;
  }
  *lo = lo_sum;
  *hi = hi_sum;
}

void general_row_backward(const double* wc, const double* wr, const double* xl, const double* xu,
                          std::size_t n, double g_lo, double g_hi, double* g_wr, double* g_xl,
                          double* g_xu) {
  for (std::size_t j = 0; j < n; ++j) {
    const double wl = wc[j] - wr[j];
    const double wu = wc[j] + wr[j];
    int imin, imax;
    double pmin, pmax;
    corners(wl, wu, xl[j], xu[j], imin, imax, pmin, pmax);
    const Corner cl = kCorners[imin];
    const Corner ch = kCorners[imax];
    const double x_lo = cl.upper_x ? xu[j] : xl[j];
    const double x_hi = ch.upper_x ? xu[j] : xl[j];
    g_wr[j] += g_lo * (cl.upper_w ? x_lo : -x_lo) + g_hi * (ch.upper_w ? x_hi : -x_hi);
    if (g_xl == nullptr) continue;
    (cl.upper_x ? g_xu[j] : g_xl[j]) += g_lo * (cl.upper_w ? wu : wl);
    (ch.upper_x ? g_xu[j] : g_xl[j]) += g_hi * (ch.upper_w ? wu : wl);
  }
}

bool nonnegative(const IntervalVector& x) {
  return std::all_of(x.lo.begin(), x.lo.end(), [](double v) { return v >= 0.0; });
}

void check_mask(ActionSet safe, std::size_t k) {
  if (safe.empty() || safe == ActionSet::full(k) || (safe.bits() >> k) != 0) {
    throw InvalidArgument("safe action mask must be nonempty and not full");
  }
}

void affine_into(const double* wc, const double* wr, const double* bc, const double* br,
                 std::size_t rows, std::size_t cols, const IntervalVector& x, IntervalVector& out) {
  out.lo.resize(rows);
  out.hi.resize(rows);
  const bool nonneg = nonnegative(x);
  const auto& k = kernels::active();
  for (std::size_t r = 0; r < rows; ++r) {
    double lo, hi;
    if (nonneg) {
      k.interval_row_nonneg(wc + r * cols, wr + r * cols, x.lo.data(), x.hi.data(), cols, &lo, &hi);
    } else {
      general_row(wc + r * cols, wr + r * cols, x.lo.data(), x.hi.data(), cols, &lo, &hi);
    }
    out.lo[r] = lo + bc[r] - br[r];
    out.hi[r] = hi + bc[r] + br[r];
  }
}

void activate_into(nn::Activation a, const IntervalVector& z, IntervalVector& h) {
  h = (a == nn::Activation::Relu) ? interval_relu(z) : interval_tanh(z);
}

// Per-layer intervals for one state: pre[l] before activation, post[l] after.
struct IntervalTrace {
  IntervalVector input;
  std::vector<IntervalVector> pre;
  std::vector<IntervalVector> post;
};

void propagate(const Orthotope& box, std::span<const double> x, IntervalTrace& t) {
  const nn::ParamVector& p = box.center;
  if (x.size() != p.spec.input_dim) throw DimensionError("state encoding does not match network input");
  if (box.alpha.size() != p.values.size()) throw DimensionError("half-width vector has wrong size");
  const std::size_t L = p.spec.num_layers();
  t.input = IntervalVector::point(x);
  t.pre.resize(L);
  t.post.resize(L - 1);
  const IntervalVector* in = &t.input;
  for (std::size_t l = 0; l < L; ++l) {
    const nn::LayerSlice& s = p.layout[l];
    affine_into(p.values.data() + s.w_offset, box.alpha.data() + s.w_offset,
                p.values.data() + s.b_offset, box.alpha.data() + s.b_offset, s.rows, s.cols, *in,
                t.pre[l]);
    if (l + 1 == L) break;
    activate_into(p.spec.activation, t.pre[l], t.post[l]);
    in = &t.post[l];
  }
}

template <class F>
void parallel_for(std::size_t n, unsigned threads, F&& f) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i, 0u);
    return;
  }
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += threads) f(i, t);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

IntervalVector IntervalVector::point(std::span<const double> x) {
  IntervalVector v;
  v.lo.assign(x.begin(), x.end());
  v.hi.assign(x.begin(), x.end());
  return v;
}

Orthotope::Orthotope(nn::ParamVector c, std::vector<double> a) : center(std::move(c)), alpha(std::move(a)) {
  validate();
}

Orthotope::Orthotope(nn::ParamVector c) : center(std::move(c)), alpha(center.values.size(), 0.0) {}

bool Orthotope::contains(std::span<const double> theta) const {
  if (theta.size() != alpha.size()) return false;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    if (!(theta[i] >= center.values[i] - alpha[i] && theta[i] <= center.values[i] + alpha[i])) return false;
  }
  return true;
}

void Orthotope::validate() const {
  if (alpha.size() != center.values.size()) throw DimensionError("half-width vector has wrong size");
  for (double a : alpha) {
    if (!(a >= 0.0) || !std::isfinite(a)) throw InvalidArgument("half-widths must be finite and nonnegative");
  }
}

IntervalVector interval_affine(std::span<const double> wc, std::span<const double> wr,
                               std::span<const double> bc, std::span<const double> br,
                               std::size_t rows, std::size_t cols, const IntervalVector& x) {
  if (wc.size() != rows * cols || wr.size() != rows * cols || bc.size() != rows || br.size() != rows ||
      x.size() != cols) {
    throw DimensionError("interval_affine: shapes do not agree");
  }
  for (double v : wr) {
    if (v < 0.0) throw InvalidArgument("interval_affine: negative half-width");
  }
  for (double v : br) {
    if (v < 0.0) throw InvalidArgument("interval_affine: negative half-width");
  }
  IntervalVector out;
  affine_into(wc.data(), wr.data(), bc.data(), br.data(), rows, cols, x, out);
  return out;
}

IntervalVector interval_relu(const IntervalVector& v) {
  IntervalVector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.lo[i] = std::max(v.lo[i], 0.0);
    out.hi[i] = std::max(v.hi[i], 0.0);
  }
  return out;
}

IntervalVector interval_tanh(const IntervalVector& v) {
  IntervalVector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.lo[i] = std::tanh(v.lo[i]);
    out.hi[i] = std::tanh(v.hi[i]);
  }
  return out;
}

IntervalVector logit_bounds(const Orthotope& box, std::span<const double> x) {
  IntervalTrace t;
  propagate(box, x, t);
  return std::move(t.pre.back());
}

double safe_mass(std::span<const double> logits, ActionSet safe, double beta) {
  if (!(beta > 0.0)) throw InvalidArgument("inverse temperature must be positive");
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  double total = 0.0;
  for (std::size_t a = 0; a < logits.size(); ++a) {
    const double e = std::exp(beta * (logits[a] - m));
    total += e;
    if (safe.contains(a)) s += e;
  }
  return s / total;
}

bool hard_spec(std::span<const double> logits, ActionSet safe) {
  return safe.contains(nn::greedy_action(logits));
}

double surrogate_lower_bound(const IntervalVector& bounds, ActionSet safe, double beta) {
  std::vector<double> unused_lo(bounds.size()), unused_hi(bounds.size());
  return surrogate_lower_bound_grad(bounds, safe, beta, unused_lo, unused_hi);
}

double surrogate_lower_bound_grad(const IntervalVector& bounds, ActionSet safe, double beta,
                                  std::span<double> g_lo, std::span<double> g_hi) {
  const std::size_t k = bounds.size();
  check_mask(safe, k);
  if (!(beta > 0.0)) throw InvalidArgument("inverse temperature must be positive");
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < k; ++a) m = std::max(m, beta * (safe.contains(a) ? bounds.lo[a] : bounds.hi[a]));
  if (!std::isfinite(m)) throw NumericError("non-finite logit bounds");
  double s = 0.0;
  double u = 0.0;
  for (std::size_t a = 0; a < k; ++a) {
    if (safe.contains(a)) {
      s += std::exp(beta * bounds.lo[a] - m);
    } else {
      u += std::exp(beta * bounds.hi[a] - m);
    }
  }
  const double z = s + u;
  const double f = s / z;
  const double one_minus_f = u / z;
  for (std::size_t a = 0; a < k; ++a) {
    if (safe.contains(a)) {
      g_lo[a] = beta * (std::exp(beta * bounds.lo[a] - m) / z) * one_minus_f;
      g_hi[a] = 0.0;
    } else {
      g_lo[a] = 0.0;
      g_hi[a] = -beta * (std::exp(beta * bounds.hi[a] - m) / z) * f;
    }
  }
  return f;
}

double surrogate_log_odds_grad(const IntervalVector& bounds, ActionSet safe, double beta,
                               std::span<double> g_lo, std::span<double> g_hi) {
  const std::size_t k = bounds.size();
  check_mask(safe, k);
  if (!(beta > 0.0)) throw InvalidArgument("inverse temperature must be positive");
  double ms = -std::numeric_limits<double>::infinity();
  double mu = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < k; ++a) {
    if (safe.contains(a)) {
      ms = std::max(ms, beta * bounds.lo[a]);
    } else {
      mu = std::max(mu, beta * bounds.hi[a]);
    }
  }
  if (!std::isfinite(ms) || !std::isfinite(mu)) throw NumericError("non-finite logit bounds");
  double s = 0.0;
  double u = 0.0;
  for (std::size_t a = 0; a < k; ++a) {
    if (safe.contains(a)) {
      s += std::exp(beta * bounds.lo[a] - ms);
    } else {
      u += std::exp(beta * bounds.hi[a] - mu);
    }
  }
  for (std::size_t a = 0; a < k; ++a) {
    if (safe.contains(a)) {
      g_lo[a] = beta * std::exp(beta * bounds.lo[a] - ms) / s;
      g_hi[a] = 0.0;
    } else {
      g_lo[a] = 0.0;
      g_hi[a] = -beta * std::exp(beta * bounds.hi[a] - mu) / u;
    }
  }
  return (ms + std::log(s)) - (mu + std::log(u));
}

double surrogate_log_odds(const IntervalVector& bounds, ActionSet safe, double beta) {
  std::vector<double> g_lo(bounds.size()), g_hi(bounds.size());
  return surrogate_log_odds_grad(bounds, safe, beta, g_lo, g_hi);
}

bool hard_certificate(const IntervalVector& bounds, ActionSet safe) {
  check_mask(safe, bounds.size());
  double best_safe = -std::numeric_limits<double>::infinity();
  double best_unsafe = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < bounds.size(); ++a) {
    if (safe.contains(a)) {
      best_safe = std::max(best_safe, bounds.lo[a]);
    } else {
      best_unsafe = std::max(best_unsafe, bounds.hi[a]);
    }
  }
  return best_safe > best_unsafe;
}

StateBounds state_bounds(const Orthotope& box, std::span<const double> x, ActionSet safe, double beta) {
  StateBounds b;
  b.logits = logit_bounds(box, x);
  b.surrogate_lb = surrogate_lower_bound(b.logits, safe, beta);
  b.hard_cert = hard_certificate(b.logits, safe);
  return b;
}

DatasetBound dataset_lower_bound(const Orthotope& box, const envs::SafetyDataset& dataset, double beta,
                                 unsigned threads) {
  if (dataset.empty()) throw InvalidArgument("dataset bound of an empty safety dataset");
  DatasetBound out;
  out.per_state.resize(dataset.size());
  parallel_for(dataset.size(), threads, [&](std::size_t i, unsigned) {
    const auto& e = dataset.entries[i];
    out.per_state[i] = state_bounds(box, e.encoding, e.safe_mask, beta);
  });
  std::size_t certified = 0;
  out.global_lb = out.per_state[0].surrogate_lb;
  out.argmin = 0;
  for (std::size_t i = 0; i < out.per_state.size(); ++i) {
    if (out.per_state[i].surrogate_lb < out.global_lb) {
      out.global_lb = out.per_state[i].surrogate_lb;
      out.argmin = i;
    }
    if (out.per_state[i].hard_cert) ++certified;
  }
  out.hard_cert_rate = static_cast<double>(certified) / static_cast<double>(dataset.size());
  return out;
}

double state_bound_grad(const Orthotope& box, std::span<const double> x, ActionSet safe, double beta,
                        double weight, std::span<double> d_alpha, Scale scale) {
  const nn::ParamVector& p = box.center;
  if (d_alpha.size() != p.values.size()) throw DimensionError("gradient buffer has wrong size");
  IntervalTrace t;
  propagate(box, x, t);
  const std::size_t L = p.spec.num_layers();
  const std::size_t k = p.spec.output_dim;
  std::vector<double> g_lo(k), g_hi(k);
  const double f = scale == Scale::Probability ? surrogate_lower_bound_grad(t.pre.back(), safe, beta, g_lo, g_hi)
                                               : surrogate_log_odds_grad(t.pre.back(), safe, beta, g_lo, g_hi);
  for (std::size_t a = 0; a < k; ++a) {
    g_lo[a] *= weight;
    g_hi[a] *= weight;
  }
  const auto& kern = kernels::active();
  std::vector<double> gx_lo, gx_hi;
  for (std::size_t l = L; l-- > 0;) {
    const nn::LayerSlice& s = p.layout[l];
    const IntervalVector& in = (l == 0) ? t.input : t.post[l - 1];
    const bool nonneg = nonnegative(in);
    const double* wc = p.values.data() + s.w_offset;
    const double* wr = box.alpha.data() + s.w_offset;
    double* gw = d_alpha.data() + s.w_offset;
    double* gb = d_alpha.data() + s.b_offset;
    const bool need_input = l > 0;
    if (need_input) {
      gx_lo.assign(s.cols, 0.0);
      gx_hi.assign(s.cols, 0.0);
    }
    for (std::size_t r = 0; r < s.rows; ++r) {
      if (g_lo[r] == 0.0 && g_hi[r] == 0.0) continue;
      gb[r] += g_hi[r] - g_lo[r];
      double* gxl = need_input ? gx_lo.data() : nullptr;
      double* gxu = need_input ? gx_hi.data() : nullptr;
      if (nonneg) {
        kern.interval_row_nonneg_backward(wc + r * s.cols, wr + r * s.cols, in.lo.data(), in.hi.data(), s.cols,
                                          g_lo[r], g_hi[r], gw + r * s.cols, gxl, gxu);
      } else {
        general_row_backward(wc + r * s.cols, wr + r * s.cols, in.lo.data(), in.hi.data(), s.cols, g_lo[r],
                             g_hi[r], gw + r * s.cols, gxl, gxu);
      }
    }
    if (!need_input) break;
    const IntervalVector& z = t.pre[l - 1];
    const IntervalVector& h = t.post[l - 1];
    g_lo.assign(s.cols, 0.0);
    g_hi.assign(s.cols, 0.0);
    for (std::size_t j = 0; j < s.cols; ++j) {
      if (p.spec.activation == nn::Activation::Relu) {
        g_lo[j] = z.lo[j] > 0.0 ? gx_lo[j] : 0.0;
        g_hi[j] = z.hi[j] > 0.0 ? gx_hi[j] : 0.0;
      } else {
        g_lo[j] = gx_lo[j] * (1.0 - h.lo[j] * h.lo[j]);
        g_hi[j] = gx_hi[j] * (1.0 - h.hi[j] * h.hi[j]);
      }
    }
  }
  return f;
}

BoundGradient lower_bound_subgradient(const Orthotope& box, const envs::SafetyDataset& dataset, double beta,
                                      Aggregation agg, double sharpness, unsigned threads, Scale scale) {
  const DatasetBound db = dataset_lower_bound(box, dataset, beta, threads);
  const std::size_t n = dataset.size();
  std::vector<double> v(n);
  std::size_t vmin = 0;
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = scale == Scale::Probability
               ? db.per_state[i].surrogate_lb
               : surrogate_log_odds(db.per_state[i].logits, dataset.entries[i].safe_mask, beta);
    if (v[i] < v[vmin]) vmin = i;
  }
  BoundGradient out;
  out.exact_min = v[vmin];
  out.argmin = vmin;
  out.d_alpha.assign(box.alpha.size(), 0.0);
  if (agg == Aggregation::Min) {
    const auto& e = dataset.entries[vmin];
    out.value = state_bound_grad(box, e.encoding, e.safe_mask, beta, 1.0, out.d_alpha, scale);
    return out;
  }
  if (!(sharpness > 0.0)) throw InvalidArgument("soft-min sharpness must be positive");
  std::vector<double> w(n);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = std::exp(-sharpness * (v[i] - v[vmin]));
    z += w[i];
  }
  out.value = v[vmin] - std::log(z) / sharpness;
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] /= z;
    // Weights this small cannot move the iterate; skipping them saves most of
    // the reverse passes once the bound separates.
    if (w[i] > 1e-10) active.push_back(i);
  }
  const unsigned nt = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(active.size())));
  std::vector<std::vector<double>> partial(nt, std::vector<double>(box.alpha.size(), 0.0));
  parallel_for(active.size(), nt, [&](std::size_t i, unsigned t) {
    const auto& e = dataset.entries[active[i]];
    state_bound_grad(box, e.encoding, e.safe_mask, beta, w[active[i]], partial[t], scale);
  });
  for (const auto& part : partial) {
    for (std::size_t j = 0; j < part.size(); ++j) out.d_alpha[j] += part[j];
  }
  return out;
}

nlohmann::json to_json(const StateBounds& b) {
  return {{"logit_lo", b.logits.lo},
          {"logit_hi", b.logits.hi},
          {"surrogate_lb", b.surrogate_lb},
          {"hard_cert", b.hard_cert}};
}

}  // namespace safeadapt::ibp
