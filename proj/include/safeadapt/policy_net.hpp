#pragma once

// Fully connected actor/critic networks stored as one flat parameter vector.
// Layer l holds W_l (out x in, row-major) followed by b_l.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "safeadapt/rng.hpp"

namespace safeadapt::nn {

enum class Activation { Relu, Tanh };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct MlpSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;
  std::size_t output_dim = 0;
  Activation activation = Activation::Relu;

  std::size_t num_layers() const { return hidden.size() + 1; }
  std::size_t layer_in(std::size_t l) const { return l == 0 ? input_dim : hidden[l - 1]; }
  std::size_t layer_out(std::size_t l) const { return l == hidden.size() ? output_dim : hidden[l]; }
  std::size_t max_width() const;
  std::size_t num_params() const;

  /// Throws DimensionError unless there is at least one hidden layer and every
  /// width is positive.
  void validate() const;

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

struct LayerSlice {
  std::size_t rows = 0;  // outputs
  std::size_t cols = 0;  // inputs
  std::size_t w_offset = 0;
  std::size_t b_offset = 0;
};

std::vector<LayerSlice> make_layout(const MlpSpec& spec);

struct ParamVector {
  MlpSpec spec;
  std::vector<LayerSlice> layout;
  std::vector<double> values;

  ParamVector() = default;
  /// Zero-initialised parameters for `spec`.
  explicit ParamVector(MlpSpec s);

  std::size_t size() const { return values.size(); }
  std::span<double> weights(std::size_t l) {
    return {values.data() + layout[l].w_offset, layout[l].rows * layout[l].cols};
  }
  std::span<const double> weights(std::size_t l) const {
    return {values.data() + layout[l].w_offset, layout[l].rows * layout[l].cols};
  }
  std::span<double> bias(std::size_t l) { return {values.data() + layout[l].b_offset, layout[l].rows}; }
  std::span<const double> bias(std::size_t l) const {
    return {values.data() + layout[l].b_offset, layout[l].rows};
  }
};

/// Orthogonal initialisation (Gram-Schmidt on a Gaussian matrix) with gain
/// sqrt(2) on hidden layers and `final_gain` on the output layer; zero biases.
ParamVector init_params(const MlpSpec& spec, Rng& rng, double final_gain);

/// Intermediate values kept by forward_trace for the reverse pass.
struct Trace {
  std::vector<double> input;
  std::vector<std::vector<double>> pre;   // per layer, before activation
  std::vector<std::vector<double>> post;  // per hidden layer, after activation
};

std::vector<double> forward(const ParamVector& p, std::span<const double> x);
std::vector<double> forward_trace(const ParamVector& p, std::span<const double> x, Trace& trace);

/// Accumulates d<upstream, output>/dtheta into grad (same length as p.values).
/// The ReLU subgradient at 0 is 0.
void backward(const ParamVector& p, const Trace& trace, std::span<const double> upstream,
              std::span<double> grad);

/// Gradient of <upstream, forward(p, x)> with respect to every parameter.
std::vector<double> grad(const ParamVector& p, std::span<const double> x,
                         std::span<const double> upstream);

struct ActionDistribution {
  std::vector<double> logits;
  std::vector<double> probs;
  std::vector<double> log_probs;
  double beta = 1.0;

  double entropy() const;
};

/// Tempered softmax exp(beta z_a) / sum exp(beta z_b), max-shifted.
ActionDistribution action_dist(std::span<const double> logits, double beta = 1.0);

/// Argmax with ties resolved toward the lowest index.
std::size_t greedy_action(std::span<const double> logits);

/// Inverse-CDF draw.
std::size_t sample_action(const ActionDistribution& dist, Rng& rng);

nlohmann::json to_json(const MlpSpec& spec);
MlpSpec spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ParamVector& p);
ParamVector params_from_json(const nlohmann::json& j);

}  // namespace safeadapt::nn
