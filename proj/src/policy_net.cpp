#include "safeadapt/policy_net.hpp"

#include <algorithm>
#include <cmath>

#include "safeadapt/errors.hpp"
#include "safeadapt/kernels.hpp"

namespace safeadapt::nn {

std::string to_string(Activation a) { return a == Activation::Relu ? "relu" : "tanh"; }

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "tanh") return Activation::Tanh;
  throw ConfigError("unknown activation '" + s + "'");
}

std::size_t MlpSpec::max_width() const {
  std::size_t w = std::max(input_dim, output_dim);
  for (std::size_t h : hidden) w = std::max(w, h);
  return w;
}

std::size_t MlpSpec::num_params() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < num_layers(); ++l) n += layer_out(l) * (layer_in(l) + 1);
  return n;
}

void MlpSpec::validate() const {
  if (hidden.empty()) throw DimensionError("network needs at least one hidden layer");
  if (input_dim == 0 || output_dim == 0) throw DimensionError("network widths must be positive");
  for (std::size_t h : hidden) {
    if (h == 0) throw DimensionError("network widths must be positive");
  }
}

std::vector<LayerSlice> make_layout(const MlpSpec& spec) {
  std::vector<LayerSlice> layout;
  std::size_t offset = 0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    LayerSlice s;
    s.rows = spec.layer_out(l);
    s.cols = spec.layer_in(l);
    s.w_offset = offset;
    s.b_offset = offset + s.rows * s.cols;
    offset = s.b_offset + s.rows;
    layout.push_back(s);
  }
  return layout;
}

ParamVector::ParamVector(MlpSpec s)
    : spec(std::move(s)), layout(make_layout(spec)), values(spec.num_params(), 0.0) {}

namespace {

// rows x cols matrix with orthonormal rows (rows <= cols) or columns.
void orthogonal_fill(std::span<double> w, std::size_t rows, std::size_t cols, double gain, Rng& rng) {
  const std::size_t n = std::max(rows, cols);
  const std::size_t k = std::min(rows, cols);
  std::vector<std::vector<double>> q(k, std::vector<double>(n));
  for (std::size_t i = 0; i < k; ++i) {
    for (;;) {
      for (double& v : q[i]) v = rng.normal();
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t j = 0; j < i; ++j) {
          double d = 0.0;
          for (std::size_t t = 0; t < n; ++t) d += q[i][t] * q[j][t];
          for (std::size_t t = 0; t < n; ++t) q[i][t] -= d * q[j][t];
        }
      }
      double norm = 0.0;
      for (double v : q[i]) norm += v * v;
      norm = std::sqrt(norm);
      if (norm > 1e-8) {
        for (double& v : q[i]) v /= norm;
        break;
      }
    }
  }
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      w[r * cols + c] = gain * (rows <= cols ? q[r][c] : q[c][r]);
    }
  }
}

double activate(Activation a, double v) { return a == Activation::Relu ? (v > 0.0 ? v : 0.0) : std::tanh(v); }

void check_input(const ParamVector& p, std::size_t n) {
  if (p.values.size() != p.spec.num_params() || p.layout.size() != p.spec.num_layers()) {
    throw DimensionError("parameter vector does not match its network spec");
  }
  if (n != p.spec.input_dim) {
    throw DimensionError("input has dimension " + std::to_string(n) + ", network expects " +
                         std::to_string(p.spec.input_dim));
  }
}

}  // namespace

ParamVector init_params(const MlpSpec& spec, Rng& rng, double final_gain) {
  spec.validate();
  ParamVector p(spec);
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const double gain = (l + 1 == spec.num_layers()) ? final_gain : std::sqrt(2.0);
    orthogonal_fill(p.weights(l), p.layout[l].rows, p.layout[l].cols, gain, rng);
  }
  return p;
}

std::vector<double> forward_trace(const ParamVector& p, std::span<const double> x, Trace& trace) {
  check_input(p, x.size());
  const auto& k = kernels::active();
  const std::size_t L = p.spec.num_layers();
  trace.input.assign(x.begin(), x.end());
  trace.pre.resize(L);
  trace.post.resize(L - 1);
  const std::vector<double>* in = &trace.input;
  for (std::size_t l = 0; l < L; ++l) {
    const LayerSlice& s = p.layout[l];
    std::vector<double>& z = trace.pre[l];
    z.resize(s.rows);
    const double* w = p.values.data() + s.w_offset;
    const double* b = p.values.data() + s.b_offset;
    for (std::size_t r = 0; r < s.rows; ++r) z[r] = k.dot(w + r * s.cols, in->data(), s.cols) + b[r];
    if (l + 1 == L) break;
    std::vector<double>& h = trace.post[l];
    h.resize(s.rows);
    for (std::size_t r = 0; r < s.rows; ++r) h[r] = activate(p.spec.activation, z[r]);
    in = &h;
  }
  return trace.pre.back();
}

std::vector<double> forward(const ParamVector& p, std::span<const double> x) {
  Trace t;
  return forward_trace(p, x, t);
}

void backward(const ParamVector& p, const Trace& trace, std::span<const double> upstream,
              std::span<double> grad) {
  if (upstream.size() != p.spec.output_dim) throw DimensionError("upstream gradient has wrong size");
  if (grad.size() != p.values.size()) throw DimensionError("gradient buffer has wrong size");
  const auto& k = kernels::active();
  const std::size_t L = p.spec.num_layers();
  std::vector<double> g(upstream.begin(), upstream.end());
  std::vector<double> g_in;
  for (std::size_t l = L; l-- > 0;) {
    const LayerSlice& s = p.layout[l];
    const std::vector<double>& in = (l == 0) ? trace.input : trace.post[l - 1];
    double* gw = grad.data() + s.w_offset;
    double* gb = grad.data() + s.b_offset;
    for (std::size_t r = 0; r < s.rows; ++r) {
      if (g[r] == 0.0) continue;
      k.axpy(g[r], in.data(), gw + r * s.cols, s.cols);
      gb[r] += g[r];
    }
    if (l == 0) break;
    g_in.assign(s.cols, 0.0);
    const double* w = p.values.data() + s.w_offset;
    for (std::size_t r = 0; r < s.rows; ++r) {
      if (g[r] != 0.0) k.axpy(g[r], w + r * s.cols, g_in.data(), s.cols);
    }
    const std::vector<double>& z = trace.pre[l - 1];
    const std::vector<double>& h = trace.post[l - 1];
    for (std::size_t j = 0; j < s.cols; ++j) {
      if (p.spec.activation == Activation::Relu) {
        if (!(z[j] > 0.0)) g_in[j] = 0.0;
      } else {
        g_in[j] *= 1.0 - h[j] * h[j];
      }
    }
    g.swap(g_in);
  }
}

std::vector<double> grad(const ParamVector& p, std::span<const double> x,
                         std::span<const double> upstream) {
  Trace t;
  forward_trace(p, x, t);
  std::vector<double> g(p.values.size(), 0.0);
  backward(p, t, upstream, g);
  return g;
}

double ActionDistribution::entropy() const {
  double h = 0.0;
  for (std::size_t a = 0; a < probs.size(); ++a) {
    if (probs[a] > 0.0) h -= probs[a] * log_probs[a];
  }
  return h;
}

ActionDistribution action_dist(std::span<const double> logits, double beta) {
  if (!(beta > 0.0)) throw InvalidArgument("inverse temperature must be positive");
  if (logits.empty()) throw DimensionError("empty logit vector");
  ActionDistribution d;
  d.beta = beta;
  d.logits.assign(logits.begin(), logits.end());
  const double m = *std::max_element(logits.begin(), logits.end());
  if (!std::isfinite(m)) throw NumericError("non-finite logits");
  double sum = 0.0;
  d.probs.resize(logits.size());
  for (std::size_t a = 0; a < logits.size(); ++a) {
    d.probs[a] = std::exp(beta * (logits[a] - m));
    sum += d.probs[a];
  }
  const double log_sum = std::log(sum);
  d.log_probs.resize(logits.size());
  for (std::size_t a = 0; a < logits.size(); ++a) {
    d.probs[a] /= sum;
    d.log_probs[a] = beta * (logits[a] - m) - log_sum;
  }
  return d;
}

std::size_t greedy_action(std::span<const double> logits) {
  std::size_t best = 0;
  for (std::size_t a = 1; a < logits.size(); ++a) {
    if (logits[a] > logits[best]) best = a;
  }
  return best;
}

std::size_t sample_action(const ActionDistribution& dist, Rng& rng) {
  const double u = rng.uniform();
  double c = 0.0;
  for (std::size_t a = 0; a < dist.probs.size(); ++a) {
    c += dist.probs[a];
    if (u < c) return a;
  }
  // Rounding left u above the final partial sum; take the last positive entry.
  for (std::size_t a = dist.probs.size(); a-- > 0;) {
    if (dist.probs[a] > 0.0) return a;
  }
  return 0;
}

nlohmann::json to_json(const MlpSpec& spec) {
  return {{"input_dim", spec.input_dim},
          {"hidden", spec.hidden},
          {"output_dim", spec.output_dim},
          {"activation", to_string(spec.activation)}};
}

MlpSpec spec_from_json(const nlohmann::json& j) {
  try {
    MlpSpec s;
    s.input_dim = j.at("input_dim").get<std::size_t>();
    s.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    s.output_dim = j.at("output_dim").get<std::size_t>();
    s.activation = activation_from_string(j.value("activation", std::string("relu")));
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed network spec: ") + e.what());
  }
}

nlohmann::json to_json(const ParamVector& p) {
  nlohmann::json layout = nlohmann::json::array();
  for (std::size_t l = 0; l < p.layout.size(); ++l) {
    const LayerSlice& s = p.layout[l];
    layout.push_back({{"layer", l},
                      {"shape", {s.rows, s.cols}},
                      {"w_offset", s.w_offset},
                      {"b_offset", s.b_offset}});
  }
  return {{"spec", to_json(p.spec)}, {"layout", std::move(layout)}, {"values", p.values}};
}

ParamVector params_from_json(const nlohmann::json& j) {
  try {
    ParamVector p(spec_from_json(j.at("spec")));
    const auto values = j.at("values").get<std::vector<double>>();
    if (values.size() != p.values.size()) {
      throw ConfigError("checkpoint has " + std::to_string(values.size()) + " values, spec needs " +
                        std::to_string(p.values.size()));
    }
    if (j.contains("layout")) {
      const auto& layout = j.at("layout");
      if (layout.size() != p.layout.size()) throw ConfigError("checkpoint layout does not match spec");
      for (std::size_t l = 0; l < layout.size(); ++l) {
        if (layout[l].at("w_offset").get<std::size_t>() != p.layout[l].w_offset ||
            layout[l].at("b_offset").get<std::size_t>() != p.layout[l].b_offset) {
          throw ConfigError("checkpoint layout does not match spec");
        }
      }
    }
    p.values = values;
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  }
}

}  // namespace safeadapt::nn
