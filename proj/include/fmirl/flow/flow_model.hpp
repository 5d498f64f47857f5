#pragma once

// Conditional flow matching over joint state-action vectors x = (s, a).
//
// Path: x_t = (1 - t) x0 + t x1 with x0 ~ N(0, sigma0^2 I), target velocity
// u = x1 - x0. The velocity net v(x, t | c) is conditioned on a class label
// c in {agent = 0, expert = 1}.

#include <cmath>
#include <concepts>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "fmirl/core/error.hpp"
#include "fmirl/core/random.hpp"
#include "fmirl/nn/adam.hpp"
#include "fmirl/nn/autodiff.hpp"
#include "fmirl/nn/mlp.hpp"

namespace fmirl::flow {

using nn::Tensor;
using nn::Var;
using nn::Vector;

enum class Condition : int { agent = 0, expert = 1 };

struct FlowConfig {
  int state_dim = 1;
  int action_dim = 1;
  double noise_scale = 0.5;  // std of x0
  int num_steps = 100;       // Euler steps for generation
  int hidden_layers = 4;
  int hidden_units = 128;
  int embed_dim = 4;  // learned per-class embedding width

  int joint_dim() const { return state_dim + action_dim; }

  void validate() const {
    if (state_dim < 0 || action_dim < 0 || joint_dim() < 2) throw ConfigError("flow: joint_dim must be >= 2");
    if (num_steps < 1) throw ConfigError("flow: num_steps must be >= 1");
    if (!(noise_scale > 0.0)) throw ConfigError("flow: noise_scale must be > 0");
    if (hidden_layers < 0 || hidden_units < 1 || embed_dim < 1) throw ConfigError("flow: bad network size");
  }
};

/// Raw t plus sin/cos at angular frequencies 2*pi and 4*pi.
inline constexpr int kTimeFeatures = 5;

inline void time_features(double t, double* out) {
  constexpr double w = 2.0 * std::numbers::pi;
  out[0] = t;
  out[1] = std::sin(w * t);
  out[2] = std::cos(w * t);
  out[3] = std::sin(2.0 * w * t);
  out[4] = std::cos(2.0 * w * t);
}

inline Tensor time_features(const Vector& t) {
  Tensor f(t.size(), kTimeFeatures);
  for (Eigen::Index i = 0; i < t.size(); ++i) time_features(t[i], f.row(i).data());
  return f;
}

struct PathSample {
  Vector x0;
  Vector x1;
  double t = 0.0;
  Vector xt;
  Vector u;
};

inline PathSample make_path(Vector x0, Vector x1, double t) {
  PathSample p{std::move(x0), std::move(x1), t, {}, {}};
  p.xt = (1.0 - t) * p.x0 + t * p.x1;
  p.u = p.x1 - p.x0;
  return p;
}

inline PathSample sample_path(const Vector& x1, Rng& rng, const FlowConfig& cfg) {
  if (x1.size() != cfg.joint_dim())
    throw DataError("sample_path: expected dimension " + std::to_string(cfg.joint_dim()) + ", got " +
                    std::to_string(x1.size()));
  if (!x1.allFinite()) throw DataError("sample_path: non-finite target");
  const double t = rng.uniform();
  Vector x0(x1.size());
  for (Eigen::Index k = 0; k < x0.size(); ++k) x0[k] = cfg.noise_scale * rng.normal();
  return make_path(std::move(x0), x1, t);
}

/// A batch of straight-line path draws, one row per draw.
struct PathBatch {
  Tensor x0, x1, xt, u;
  Vector t;
};

inline PathBatch make_paths(Tensor x0, Tensor x1, Vector t) {
  PathBatch b;
  b.xt = ((1.0 - t.array()).matrix().asDiagonal() * x0) + (t.asDiagonal() * x1);
  b.u = x1 - x0;
  b.x0 = std::move(x0);
  b.x1 = std::move(x1);
  b.t = std::move(t);
  return b;
}

/// One draw per row of `targets`, t ~ U[0,1]. Per row the stream order is t, then x0.
inline PathBatch draw_paths(const Tensor& targets, Rng& rng, double sigma0) {
  const Eigen::Index n = targets.rows(), d = targets.cols();
  Tensor x0(n, d);
  Vector t(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    t[i] = rng.uniform();
    for (Eigen::Index k = 0; k < d; ++k) x0(i, k) = sigma0 * rng.normal();
  }
  return make_paths(std::move(x0), targets, std::move(t));
}

/// `samples` draws per target row (rows i*S .. i*S+S-1 belong to target i), with
/// stratified times t_j = (j + u_j) / S, u_j ~ U[0,1).
inline PathBatch draw_stratified_paths(const Tensor& targets, Eigen::Index samples, Rng& rng, double sigma0) {
  if (samples < 1) throw UsageError("stratified draw needs S >= 1");
  const Eigen::Index n = targets.rows(), d = targets.cols();
  Tensor x0(n * samples, d);
  Tensor x1(n * samples, d);
  Vector t(n * samples);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < samples; ++j) {
      const Eigen::Index r = i * samples + j;
      t[r] = (static_cast<double>(j) + rng.uniform()) / static_cast<double>(samples);
      for (Eigen::Index k = 0; k < d; ++k) x0(r, k) = sigma0 * rng.normal();
      x1.row(r) = targets.row(i);
    }
  }
  return make_paths(std::move(x0), std::move(x1), std::move(t));
}

/// Anything that maps (x [B x d], t [B], c [B]) to velocities [B x d].
template <class F>
concept VelocityField = requires(const F& f, const Tensor& x, const Vector& t, std::span<const Condition> c) {
  { f(x, t, c) } -> std::convertible_to<Tensor>;
};

/// v_theta(x, t | c): MLP over [x, time features, class embedding].
class VectorFieldNet {
 public:
  VectorFieldNet(FlowConfig cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    std::vector<Eigen::Index> widths{cfg_.joint_dim() + kTimeFeatures + cfg_.embed_dim};
    for (int i = 0; i < cfg_.hidden_layers; ++i) widths.push_back(cfg_.hidden_units);
    widths.push_back(cfg_.joint_dim());
    nn::mlp_init(params_, "v", widths, rng);
    Tensor emb(2, cfg_.embed_dim);
    for (Eigen::Index k = 0; k < emb.size(); ++k) emb.data()[k] = rng.normal();
    params_.add("v.embed", std::move(emb));
  }

  const FlowConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  Tensor operator()(const Tensor& x, const Vector& t, std::span<const Condition> c) const {
    return nn::mlp_forward(params_, "v", features(x, t, c), nn::Activation::silu);
  }

  /// Recorded forward pass for training.
  Var forward(nn::Tape& tape, const Tensor& x, const Vector& t, std::span<const Condition> c) {
    check(x, t, c);
    Var xv = tape.constant(x);
    Var tf = tape.constant(time_features(t));
    Var emb = nn::gather_rows(tape.param(params_.at("v.embed")), labels(c));
    Var in = nn::concat_cols({xv, tf, emb});
    return nn::mlp_forward(tape, params_, "v", in, nn::Activation::silu);
  }

 private:
  void check(const Tensor& x, const Vector& t, std::span<const Condition> c) const {
    if (x.cols() != cfg_.joint_dim())
      throw ConfigError("vector field: expected joint_dim " + std::to_string(cfg_.joint_dim()) + ", got " +
                        std::to_string(x.cols()));
    if (t.size() != x.rows() || static_cast<Eigen::Index>(c.size()) != x.rows())
      throw ConfigError("vector field: batch size mismatch between x, t and c");
  }

  static std::vector<int> labels(std::span<const Condition> c) {
    std::vector<int> idx(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) idx[i] = static_cast<int>(c[i]);
    return idx;
  }

  Tensor features(const Tensor& x, const Vector& t, std::span<const Condition> c) const {
    check(x, t, c);
    const Tensor& emb = params_.at("v.embed").value;
    Tensor in(x.rows(), x.cols() + kTimeFeatures + cfg_.embed_dim);
    in.leftCols(x.cols()) = x;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      time_features(t[i], in.row(i).data() + x.cols());
      in.row(i).tail(cfg_.embed_dim) = emb.row(static_cast<int>(c[i]));
    }
    return in;
  }

  FlowConfig cfg_;
  nn::ParamStore params_;
};

static_assert(VelocityField<VectorFieldNet>);

// ---- losses ----

/// Per-row squared error ||v - u||^2 for a fixed set of path draws (no gradient).
template <VelocityField F>
Vector path_errors(const F& field, const PathBatch& paths, std::span<const Condition> c) {
  const Tensor v = field(paths.xt, paths.t, c);
  return (v - paths.u).rowwise().squaredNorm();
}

/// Recorded per-row squared error [B x 1].
inline Var path_errors(nn::Tape& tape, VectorFieldNet& net, const PathBatch& paths, std::span<const Condition> c) {
  Var v = net.forward(tape, paths.xt, paths.t, c);
  return nn::sum_cols(nn::square(v - tape.constant(paths.u)));
}

inline void check_batch(const Tensor& x1, std::span<const Condition> c, int joint_dim) {
  if (x1.rows() == 0) throw UsageError("cfm_loss: empty batch");
  if (static_cast<Eigen::Index>(c.size()) != x1.rows()) throw UsageError("cfm_loss: one label per row required");
  if (x1.cols() != joint_dim) throw ConfigError("cfm_loss: batch width does not match joint_dim");
  if (!x1.allFinite()) throw DataError("cfm_loss: non-finite batch");
}

/// Mean CFM loss on fixed path draws, recorded for backprop.
inline Var cfm_loss(nn::Tape& tape, VectorFieldNet& net, const PathBatch& paths, std::span<const Condition> c) {
  return nn::mean(path_errors(tape, net, paths, c));
}

/// Mean CFM loss with one fresh (t, x0) per batch row.
inline Var cfm_loss(nn::Tape& tape, VectorFieldNet& net, const Tensor& x1, std::span<const Condition> c, Rng& rng) {
  check_batch(x1, c, net.config().joint_dim());
  return cfm_loss(tape, net, draw_paths(x1, rng, net.config().noise_scale), c);
}

/// Loss value only; same draw order as the recorded version.
template <VelocityField F>
double cfm_loss_value(const F& field, const Tensor& x1, std::span<const Condition> c, Rng& rng,
                      const FlowConfig& cfg) {
  check_batch(x1, c, cfg.joint_dim());
  return path_errors(field, draw_paths(x1, rng, cfg.noise_scale), c).mean();
}

/// One optimizer step on the CFM loss over `batch` rows drawn with replacement
/// from (data, labels). Returns the pre-step loss.
inline double cfm_train_step(VectorFieldNet& net, nn::Adam& opt, const Tensor& data, std::span<const Condition> labels,
                             Eigen::Index batch, Rng& rng) {
  if (data.rows() == 0) throw UsageError("cfm_train_step: empty dataset");
  if (static_cast<Eigen::Index>(labels.size()) != data.rows()) throw UsageError("cfm_train_step: one label per row");
  Tensor x1(batch, data.cols());
  std::vector<Condition> c(static_cast<std::size_t>(batch));
  for (Eigen::Index i = 0; i < batch; ++i) {
    const std::size_t k = rng.index(static_cast<std::size_t>(data.rows()));
    x1.row(i) = data.row(static_cast<Eigen::Index>(k));
    c[static_cast<std::size_t>(i)] = labels[k];
  }
  nn::Tape tape;
  Var loss = cfm_loss(tape, net, x1, c, rng);
  const double value = loss.value()(0, 0);
  if (!std::isfinite(value)) throw NumericalError("cfm_train_step: non-finite loss");
  net.params().zero_grad();
  tape.backward(loss);
  opt.step(net.params());
  return value;
}

// ---- generation ----

/// Explicit Euler from a given start state.
template <VelocityField F>
Tensor euler_integrate(const F& field, Condition c, Tensor x, int num_steps) {
  const std::vector<Condition> labels(static_cast<std::size_t>(x.rows()), c);
  const double dt = 1.0 / static_cast<double>(num_steps);
  Vector t(x.rows());
  for (int k = 0; k < num_steps; ++k) {
    t.setConstant(static_cast<double>(k) * dt);
    x += dt * field(x, t, labels);
    if (!x.allFinite()) throw NumericalError("euler_generate: non-finite state at step " + std::to_string(k));
  }
  return x;
}

/// Integrates dx/dt = v(x, t | c) with `num_steps` explicit Euler steps from
/// x0 ~ N(0, sigma0^2 I). Returns `n` samples as rows.
template <VelocityField F>
Tensor euler_generate(const F& field, Condition c, Eigen::Index n, const FlowConfig& cfg, Rng& rng) {
  const Eigen::Index d = cfg.joint_dim();
  Tensor x(n, d);
  for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = cfg.noise_scale * rng.normal();
  return euler_integrate(field, c, std::move(x), cfg.num_steps);
}

// ---- Monte-Carlo distance ----

inline constexpr Eigen::Index kMaxRowsPerChunk = 8192;

/// Dist(x1 | c) for every row of `targets`, averaging S stratified draws.
template <VelocityField F>
Vector estimate_dist_batch(const F& field, const Tensor& targets, Condition c, Eigen::Index samples, Rng& rng,
                           const FlowConfig& cfg) {
  if (samples < 1) throw UsageError("estimate_dist: S must be >= 1");
  if (targets.cols() != cfg.joint_dim()) throw ConfigError("estimate_dist: target width does not match joint_dim");
  if (!targets.allFinite()) throw DataError("estimate_dist: non-finite target");
  const Eigen::Index n = targets.rows();
  const Eigen::Index per_chunk = std::max<Eigen::Index>(1, kMaxRowsPerChunk / samples);
  Vector out(n);
  for (Eigen::Index start = 0; start < n; start += per_chunk) {
    const Eigen::Index m = std::min(per_chunk, n - start);
    const PathBatch paths = draw_stratified_paths(targets.middleRows(start, m), samples, rng, cfg.noise_scale);
    const std::vector<Condition> labels(static_cast<std::size_t>(m * samples), c);
    const Vector err = path_errors(field, paths, labels);
    for (Eigen::Index i = 0; i < m; ++i) out[start + i] = err.segment(i * samples, samples).mean();
  }
  return out;
}

template <VelocityField F>
double estimate_dist(const F& field, const Vector& s, const Vector& a, Condition c, Eigen::Index samples, Rng& rng,
                     const FlowConfig& cfg) {
  Tensor x1(1, s.size() + a.size());
  x1.row(0) << s.transpose(), a.transpose();
  return estimate_dist_batch(field, x1, c, samples, rng, cfg)[0];
}

/// Both class-conditioned distances per target, sharing the (t, x0) draws
/// between the two conditions.
struct DistPair {
  Vector expert;  // Dist(x | c = 1)
  Vector agent;   // Dist(x | c = 0)
};

template <VelocityField F>
DistPair estimate_dist_pair(const F& field, const Tensor& targets, Eigen::Index samples, Rng& rng,
                            const FlowConfig& cfg) {
  if (samples < 1) throw UsageError("estimate_dist: S must be >= 1");
  if (targets.cols() != cfg.joint_dim()) throw ConfigError("estimate_dist: target width does not match joint_dim");
  if (!targets.allFinite()) throw DataError("estimate_dist: non-finite target");
  const Eigen::Index n = targets.rows();
  const Eigen::Index per_chunk = std::max<Eigen::Index>(1, kMaxRowsPerChunk / (2 * samples));
  DistPair out{Vector(n), Vector(n)};
  for (Eigen::Index start = 0; start < n; start += per_chunk) {
    const Eigen::Index m = std::min(per_chunk, n - start);
    const Eigen::Index rows = m * samples;
    const PathBatch paths = draw_stratified_paths(targets.middleRows(start, m), samples, rng, cfg.noise_scale);
    // Stack expert-conditioned rows on top of agent-conditioned rows.
    Tensor xt(2 * rows, paths.xt.cols());
    xt << paths.xt, paths.xt;
    Vector t(2 * rows);
    t << paths.t, paths.t;
    std::vector<Condition> labels(static_cast<std::size_t>(2 * rows), Condition::agent);
    std::fill(labels.begin(), labels.begin() + rows, Condition::expert);
    const Tensor v = field(xt, t, labels);
    const Vector e1 = (v.topRows(rows) - paths.u).rowwise().squaredNorm();
    const Vector e0 = (v.bottomRows(rows) - paths.u).rowwise().squaredNorm();
    for (Eigen::Index i = 0; i < m; ++i) {
      out.expert[start + i] = e1.segment(i * samples, samples).mean();
      out.agent[start + i] = e0.segment(i * samples, samples).mean();
    }
  }
  return out;
}

}  // namespace fmirl::flow
