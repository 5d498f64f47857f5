#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fmirl/core/error.hpp"
#include "fmirl/core/random.hpp"
#include "fmirl/nn/autodiff.hpp"
#include "fmirl/nn/param_store.hpp"

namespace fmirl::nn {

enum class Activation { tanh, relu, silu };

inline Tensor activate(const Tensor& h, Activation act) {
  switch (act) {
    case Activation::tanh: return Tensor(h.array().tanh());
    case Activation::relu: return Tensor(h.array().max(0.0));
    case Activation::silu: return silu_value(h);
  }
  return h;
}

inline Var activate(Var h, Activation act) {
  switch (act) {
    case Activation::tanh: return tanh(h);
    case Activation::relu: return relu(h);
    case Activation::silu: return silu(h);
  }
  return h;
}

inline std::string layer_weight(const std::string& prefix, std::size_t i) {
  return prefix + ".l" + std::to_string(i) + ".W";
}
inline std::string layer_bias(const std::string& prefix, std::size_t i) {
  return prefix + ".l" + std::to_string(i) + ".b";
}

/// Number of consecutive affine layers stored under `prefix`.
inline std::size_t mlp_depth(const ParamStore& params, const std::string& prefix) {
  std::size_t n = 0;
  while (params.contains(layer_weight(prefix, n))) ++n;
  return n;
}

/// Creates layers `prefix.l{i}.W/b` for the given widths (input first, output last).
/// Glorot-uniform weights, zero biases; the output layer is scaled by `out_gain`.
inline void mlp_init(ParamStore& params, const std::string& prefix, const std::vector<Eigen::Index>& widths,
                     Rng& rng, double out_gain = 1.0) {
  if (widths.size() < 2) throw ConfigError("mlp '" + prefix + "' needs at least input and output widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const Eigen::Index in = widths[i], out = widths[i + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out)) * (i + 2 == widths.size() ? out_gain : 1.0);
    Tensor w(in, out);
    for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = rng.uniform(-limit, limit);
    params.add(layer_weight(prefix, i), std::move(w));
    params.add(layer_bias(prefix, i), Tensor::Zero(1, out));
  }
}

/// Inference-only forward pass: hidden layers use `activation`, output is linear.
inline Tensor mlp_forward(const ParamStore& params, const std::string& prefix, const Tensor& input,
                          Activation activation) {
  const std::size_t depth = mlp_depth(params, prefix);
  if (depth == 0) throw ConfigError("mlp '" + prefix + "' has no layers");
  Tensor h = input;
  for (std::size_t i = 0; i < depth; ++i) {
    const Tensor& w = params.at(layer_weight(prefix, i)).value;
    const Tensor& b = params.at(layer_bias(prefix, i)).value;
    if (h.cols() != w.rows())
      throw ConfigError("layer " + layer_weight(prefix, i) + ": expected input width " + std::to_string(w.rows()) +
                        ", got " + std::to_string(h.cols()));
    Tensor z = h * w;
    z.rowwise() += b.row(0);
    h = (i + 1 < depth) ? activate(z, activation) : std::move(z);
  }
  return h;
}

/// Recorded forward pass; gradients flow to every layer parameter.
inline Var mlp_forward(Tape& tape, ParamStore& params, const std::string& prefix, Var input, Activation activation) {
  const std::size_t depth = mlp_depth(params, prefix);
  if (depth == 0) throw ConfigError("mlp '" + prefix + "' has no layers");
  Var h = input;
  for (std::size_t i = 0; i < depth; ++i) {
    Parameter& w = params.at(layer_weight(prefix, i));
    if (h.cols() != w.value.rows())
      throw ConfigError("layer " + layer_weight(prefix, i) + ": expected input width " +
                        std::to_string(w.value.rows()) + ", got " + std::to_string(h.cols()));
    Var z = affine(h, tape.param(w), tape.param(params.at(layer_bias(prefix, i))));
    h = (i + 1 < depth) ? activate(z, activation) : z;
  }
  return h;
}

/// Convenience bundle of prefix + activation for a network living in a ParamStore.
struct Mlp {
  std::string prefix;
  Activation activation = Activation::tanh;

  Tensor operator()(const ParamStore& params, const Tensor& input) const {
    return mlp_forward(params, prefix, input, activation);
  }
  Var operator()(Tape& tape, ParamStore& params, Var input) const {
    return mlp_forward(tape, params, prefix, input, activation);
  }
};

}  // namespace fmirl::nn
