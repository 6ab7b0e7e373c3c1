#pragma once

// Small feed-forward networks for the learned rank score: the bid-multiplier
// actor pi(b, x) and the critic Q(s, a). Backprop is written out by hand and
// also carries a forward-mode tangent along one input direction, so that
// penalties on d(pi)/d(bid) can be differentiated w.r.t. the parameters.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "deepgsp/auction.hpp"
#include "deepgsp/error.hpp"

namespace deepgsp {

enum class Activation : std::uint32_t { kIdentity = 0, kTanh = 1, kSoftplus = 2 };

namespace detail {

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

inline double activate(Activation act, double z) {
  switch (act) {
    case Activation::kTanh: return std::tanh(z);
    case Activation::kSoftplus: return softplus(z);
    case Activation::kIdentity: break;
  }
  return z;
}

// First and second derivative given pre-activation z and output a.
inline double activate_d1(Activation act, double z, double a) {
  switch (act) {
    case Activation::kTanh: return 1.0 - a * a;
    case Activation::kSoftplus: return sigmoid(z);
    case Activation::kIdentity: break;
  }
  return 1.0;
}

inline double activate_d2(Activation act, double z, double a) {
  switch (act) {
    case Activation::kTanh: return -2.0 * a * (1.0 - a * a);
    case Activation::kSoftplus: {
      const double s = sigmoid(z);
      return s * (1.0 - s);
    }
    case Activation::kIdentity: break;
  }
  return 0.0;
}

}  // namespace detail

// Multi-layer perceptron with a scalar output. Parameters live in one flat
// buffer: for each layer, the row-major weight matrix (out x in) followed by
// the bias vector.
class Mlp {
 public:
  struct Layer {
    std::size_t in = 0;
    std::size_t out = 0;
    Activation act = Activation::kIdentity;
    std::size_t offset = 0;  // into params_
  };

  // Cached activations of one evaluation; tangents are filled only by
  // forward_tangent.
  struct Tape {
    std::vector<std::vector<double>> z, a, zdot, adot;
    bool has_tangent = false;
  };

  Mlp() = default;

  Mlp(std::vector<std::size_t> dims, Activation hidden, Activation output) {
    require(dims.size() >= 2, "network needs at least an input and output");
    require(dims.back() == 1, "network output must be scalar");
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      require(dims[l] > 0 && dims[l + 1] > 0, "zero-width layer");
      Layer layer{dims[l], dims[l + 1],
                  l + 2 == dims.size() ? output : hidden, off};
      off += layer.in * layer.out + layer.out;
      layers_.push_back(layer);
    }
    params_.assign(off, 0.0);
  }

  std::size_t input_dim() const { return layers_.empty() ? 0 : layers_[0].in; }
  std::size_t num_params() const { return params_.size(); }
  const std::vector<Layer>& layers() const { return layers_; }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  std::vector<std::size_t> dims() const {
    std::vector<std::size_t> d;
    if (layers_.empty()) return d;
    d.push_back(layers_[0].in);
    for (const auto& l : layers_) d.push_back(l.out);
    return d;
  }

  // Uniform in +-sqrt(6 / (fan_in + fan_out)); biases zero.
  void init_glorot(std::mt19937_64& rng) {
    for (const auto& l : layers_) {
      const double lim = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
      std::uniform_real_distribution<double> u(-lim, lim);
      for (std::size_t k = 0; k < l.in * l.out; ++k) params_[l.offset + k] = u(rng);
      for (std::size_t k = 0; k < l.out; ++k) params_[l.offset + l.in * l.out + k] = 0.0;
    }
  }

  double forward(std::span<const double> input, Tape& tape) const {
    return run(input, {}, tape).first;
  }

  // Output and its directional derivative along `direction` in input space.
  std::pair<double, double> forward_tangent(std::span<const double> input,
                                            std::span<const double> direction,
                                            Tape& tape) const {
    require(direction.size() == input.size(), "tangent direction size");
    return run(input, direction, tape);
  }

  // Allocation-free evaluation for hot loops.
  double evaluate(std::span<const double> input) const {
    thread_local std::vector<double> cur, next;
    cur.assign(input.begin(), input.end());
    for (const auto& l : layers_) {
      next.resize(l.out);
      const double* w = params_.data() + l.offset;
      const double* b = w + l.in * l.out;
      for (std::size_t o = 0; o < l.out; ++o) {
        double s = b[o];
        const double* row = w + o * l.in;
        for (std::size_t i = 0; i < l.in; ++i) s += row[i] * cur[i];
        next[o] = detail::activate(l.act, s);
      }
      std::swap(cur, next);
    }
    return cur[0];
  }

  // Reverse pass. `out_adj` is dL/d(output); `tangent_adj` is dL/d(tangent of
  // output) and requires a tape from forward_tangent. Parameter gradients are
  // accumulated into `grad` unless it is empty; the input adjoint (primal
  // path) is written to `input_adj` when it is non-empty.
  void backward(const Tape& tape, double out_adj, double tangent_adj,
                std::span<double> grad, std::span<double> input_adj = {}) const {
    const bool want_grad = !grad.empty();
    require(!want_grad || grad.size() == params_.size(), "gradient buffer size");
    const bool tan = tape.has_tangent && tangent_adj != 0.0;
    thread_local std::vector<double> abar, adotbar, zbar, zdotbar, abar_prev,
        adotbar_prev;
    abar.assign(1, out_adj);
    adotbar.assign(1, tangent_adj);
    for (std::size_t li = layers_.size(); li-- > 0;) {
      const Layer& l = layers_[li];
      const auto& z = tape.z[li + 1];
      const auto& a = tape.a[li + 1];
      const auto& a_prev = tape.a[li];
      zbar.resize(l.out);
      zdotbar.assign(l.out, 0.0);
      for (std::size_t o = 0; o < l.out; ++o) {
        const double d1 = detail::activate_d1(l.act, z[o], a[o]);
        zbar[o] = d1 * abar[o];
        if (tan) {
          const double d2 = detail::activate_d2(l.act, z[o], a[o]);
          zbar[o] += d2 * tape.zdot[li + 1][o] * adotbar[o];
          zdotbar[o] = d1 * adotbar[o];
        }
      }
      const double* w = params_.data() + l.offset;
      abar_prev.assign(l.in, 0.0);
      adotbar_prev.assign(l.in, 0.0);
      for (std::size_t o = 0; o < l.out; ++o) {
        const double* row = w + o * l.in;
        for (std::size_t i = 0; i < l.in; ++i) abar_prev[i] += row[i] * zbar[o];
        if (tan) {
          for (std::size_t i = 0; i < l.in; ++i) adotbar_prev[i] += row[i] * zdotbar[o];
        }
        if (!want_grad) continue;
        double* gw = grad.data() + l.offset;
        gw[l.in * l.out + o] += zbar[o];
        double* grow = gw + o * l.in;
        for (std::size_t i = 0; i < l.in; ++i) grow[i] += zbar[o] * a_prev[i];
        if (tan) {
          const auto& adot_prev = tape.adot[li];
          for (std::size_t i = 0; i < l.in; ++i) grow[i] += zdotbar[o] * adot_prev[i];
        }
      }
      std::swap(abar, abar_prev);
      std::swap(adotbar, adotbar_prev);
    }
    if (!input_adj.empty()) {
      require(input_adj.size() == abar.size(), "input adjoint size");
      std::copy(abar.begin(), abar.end(), input_adj.begin());
    }
  }

 private:
  std::pair<double, double> run(std::span<const double> input,
                                std::span<const double> direction,
                                Tape& tape) const {
    require(input.size() == input_dim(), "network input size mismatch");
    const bool tan = !direction.empty();
    const std::size_t nl = layers_.size();
    tape.has_tangent = tan;
    tape.z.resize(nl + 1);
    tape.a.resize(nl + 1);
    tape.a[0].assign(input.begin(), input.end());
    if (tan) {
      tape.zdot.resize(nl + 1);
      tape.adot.resize(nl + 1);
      tape.adot[0].assign(direction.begin(), direction.end());
    }
    for (std::size_t li = 0; li < nl; ++li) {
      const Layer& l = layers_[li];
      const double* w = params_.data() + l.offset;
      const double* b = w + l.in * l.out;
      auto& z = tape.z[li + 1];
      auto& a = tape.a[li + 1];
      const auto& prev = tape.a[li];
      z.resize(l.out);
      a.resize(l.out);
      for (std::size_t o = 0; o < l.out; ++o) {
        double s = b[o];
        const double* row = w + o * l.in;
        for (std::size_t i = 0; i < l.in; ++i) s += row[i] * prev[i];
        z[o] = s;
        a[o] = detail::activate(l.act, s);
      }
      if (tan) {
        auto& zd = tape.zdot[li + 1];
        auto& ad = tape.adot[li + 1];
        const auto& prev_d = tape.adot[li];
        zd.resize(l.out);
        ad.resize(l.out);
        for (std::size_t o = 0; o < l.out; ++o) {
          double s = 0.0;
          const double* row = w + o * l.in;
          for (std::size_t i = 0; i < l.in; ++i) s += row[i] * prev_d[i];
          zd[o] = s;
          ad[o] = detail::activate_d1(l.act, z[o], a[o]) * s;
        }
      }
    }
    return {tape.a[nl][0], tan ? tape.adot[nl][0] : 0.0};
  }

  std::vector<Layer> layers_;
  std::vector<double> params_;
};

// Per-feature affine standardization, stored with the model.
struct AffineNormalizer {
  std::vector<double> mean;
  std::vector<double> scale;

  bool fitted() const { return !mean.empty(); }
  std::size_t dim() const { return mean.size(); }

  // Rows are samples; zero-variance columns get scale 1.
  static AffineNormalizer fit(const std::vector<std::vector<double>>& rows) {
    require(!rows.empty(), "cannot fit a normalizer on no data");
    const std::size_t d = rows.front().size();
    AffineNormalizer n;
    n.mean.assign(d, 0.0);
    n.scale.assign(d, 0.0);
    for (const auto& r : rows) {
      require(r.size() == d, "ragged normalizer data");
      for (std::size_t j = 0; j < d; ++j) n.mean[j] += r[j];
    }
    for (auto& m : n.mean) m /= static_cast<double>(rows.size());
    for (const auto& r : rows)
      for (std::size_t j = 0; j < d; ++j) n.scale[j] += (r[j] - n.mean[j]) * (r[j] - n.mean[j]);
    for (auto& s : n.scale) {
      s = std::sqrt(s / static_cast<double>(rows.size()));
      if (!(s > 1e-12)) s = 1.0;
    }
    return n;
  }

  static AffineNormalizer identity(std::size_t d) {
    return {std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)};
  }
};

namespace detail {

inline constexpr double kLogFloor = 1e-9;

// Positive, heavy-tailed columns (bid, predicted rates, product price) enter
// the networks on a log scale; everything else is passed through.
inline bool log_scaled_column(std::size_t j) {
  return j == 0 || j == kPctr + 1 || j == kPacr + 1 || j == kPcvr + 1 ||
         j == kProductPrice + 1;
}

inline double state_value(std::size_t j, double v) {
  return log_scaled_column(j) ? std::log(std::max(v, 0.0) + kLogFloor) : v;
}

}  // namespace detail

// Network-space state (log bid, transformed features) before normalization.
inline std::vector<double> state_vector(double bid, std::span<const double> features) {
  std::vector<double> s;
  s.reserve(features.size() + 1);
  s.push_back(detail::state_value(0, bid));
  for (std::size_t j = 0; j < features.size(); ++j)
    s.push_back(detail::state_value(j + 1, features[j]));
  return s;
}

struct NetArchitecture {
  std::vector<std::size_t> hidden{64, 32};
  Activation hidden_act = Activation::kTanh;
};

// Bid-multiplier network pi(b, x) > 0 (softplus output). The rank score is
// b * pi(b, x).
class BidMultiplierNet {
 public:
  BidMultiplierNet() = default;

  BidMultiplierNet(std::size_t feature_len, const NetArchitecture& arch = {}) {
    std::vector<std::size_t> dims{feature_len + 1};
    dims.insert(dims.end(), arch.hidden.begin(), arch.hidden.end());
    dims.push_back(1);
    net_ = Mlp(dims, arch.hidden_act, Activation::kSoftplus);
  }

  BidMultiplierNet(Mlp net, AffineNormalizer norm)
      : net_(std::move(net)), norm_(std::move(norm)) {
    require(!norm_.fitted() || norm_.dim() == net_.input_dim(),
            "normalizer does not match the network input");
  }

  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }
  const AffineNormalizer& normalizer() const { return norm_; }
  std::size_t feature_len() const { return net_.input_dim() - 1; }

  void set_normalizer(AffineNormalizer norm) {
    require(norm.dim() == net_.input_dim(), "normalizer dimension");
    norm_ = std::move(norm);
  }

  double multiplier(double bid, std::span<const double> x) const {
    thread_local std::vector<double> in;
    normalized_input(bid, x, in);
    return net_.evaluate(in);
  }

  // (pi, d pi / d bid) with the derivative taken w.r.t. the raw bid.
  std::pair<double, double> multiplier_and_bid_grad(double bid,
                                                    std::span<const double> x,
                                                    Mlp::Tape& tape) const {
    thread_local std::vector<double> in, dir;
    normalized_input(bid, x, in);
    dir.assign(in.size(), 0.0);
    dir[0] = 1.0 / ((std::max(bid, 0.0) + detail::kLogFloor) * norm_.scale[0]);
    return net_.forward_tangent(in, dir, tape);
  }

  std::pair<double, double> multiplier_and_bid_grad(double bid,
                                                    std::span<const double> x) const {
    Mlp::Tape tape;
    return multiplier_and_bid_grad(bid, x, tape);
  }

  double bid_grad(double bid, std::span<const double> x) const {
    return multiplier_and_bid_grad(bid, x).second;
  }

  double rank_score(double bid, std::span<const double> x) const {
    return bid * multiplier(bid, x);
  }

  // Accumulates dL/dtheta given dL/dpi and dL/d(dpi/db) at (bid, x).
  void accumulate_grad(double bid, std::span<const double> x, double d_pi,
                       double d_pi_bid, std::span<double> grad) const {
    Mlp::Tape tape;
    multiplier_and_bid_grad(bid, x, tape);
    net_.backward(tape, d_pi, d_pi_bid, grad);
  }

 private:
  void normalized_input(double bid, std::span<const double> x,
                        std::vector<double>& in) const {
    require(norm_.fitted(), "actor normalizer has not been fitted",
            ErrorKind::kValidation);
    require(x.size() + 1 == net_.input_dim(), "actor feature length mismatch");
    in.resize(x.size() + 1);
    in[0] = (detail::state_value(0, bid) - norm_.mean[0]) / norm_.scale[0];
    for (std::size_t j = 0; j < x.size(); ++j)
      in[j + 1] = (detail::state_value(j + 1, x[j]) - norm_.mean[j + 1]) / norm_.scale[j + 1];
  }

  Mlp net_;
  AffineNormalizer norm_;
};

// Rank scorer backed by a learned multiplier network.
struct DeepGspScorer {
  const BidMultiplierNet* net = nullptr;

  double score_at(const AdCandidate& c, double bid) const {
    return bid * net->multiplier(bid, c.features);
  }
  RankedEntry entry(const AdCandidate& c) const {
    const double pi = net->multiplier(c.bid, c.features);
    return {0, c.ad_id, c.bid, c.bid * pi, pi, 0.0};
  }
};

// Critic Q(s, a). The action (a rank score, nonnegative) enters as
// log(a + kActionFloor) so that multiplicative score changes look additive.
class CriticNet {
 public:
  static constexpr double kActionFloor = 1e-9;

  CriticNet() = default;

  CriticNet(std::size_t feature_len, const NetArchitecture& arch = {}) {
    std::vector<std::size_t> dims{feature_len + 2};
    dims.insert(dims.end(), arch.hidden.begin(), arch.hidden.end());
    dims.push_back(1);
    net_ = Mlp(dims, arch.hidden_act, Activation::kIdentity);
  }

  CriticNet(Mlp net, AffineNormalizer norm) : net_(std::move(net)), norm_(std::move(norm)) {
    require(!norm_.fitted() || norm_.dim() == net_.input_dim(),
            "normalizer does not match the network input");
  }

  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }
  const AffineNormalizer& normalizer() const { return norm_; }
  std::size_t feature_len() const { return net_.input_dim() - 2; }

  void set_normalizer(AffineNormalizer norm) {
    require(norm.dim() == net_.input_dim(), "normalizer dimension");
    norm_ = std::move(norm);
  }

  // Raw input row (bid, x..., log action) used to fit the normalizer.
  static std::vector<double> raw_input(double bid, std::span<const double> x, double action) {
    std::vector<double> r = state_vector(bid, x);
    r.push_back(std::log(std::max(action, 0.0) + kActionFloor));
    return r;
  }

  double value(double bid, std::span<const double> x, double action) const {
    thread_local std::vector<double> in;
    normalized_input(bid, x, action, in);
    return net_.evaluate(in);
  }

  // (Q, dQ/da)
  std::pair<double, double> value_and_action_grad(double bid, std::span<const double> x,
                                                  double action) const {
    thread_local std::vector<double> in, in_adj;
    thread_local Mlp::Tape tape;
    normalized_input(bid, x, action, in);
    const double q = net_.forward(in, tape);
    in_adj.assign(in.size(), 0.0);
    net_.backward(tape, 1.0, 0.0, {}, in_adj);
    const std::size_t last = in.size() - 1;
    const double dq = in_adj[last] / norm_.scale[last] /
                      (std::max(action, 0.0) + kActionFloor);
    return {q, dq};
  }

  // Accumulates dL/dtheta given dL/dQ; returns Q.
  double accumulate_grad(double bid, std::span<const double> x, double action,
                         double d_q, std::span<double> grad) const {
    thread_local std::vector<double> in;
    thread_local Mlp::Tape tape;
    normalized_input(bid, x, action, in);
    const double q = net_.forward(in, tape);
    net_.backward(tape, d_q, 0.0, grad);
    return q;
  }

 private:
  void normalized_input(double bid, std::span<const double> x, double action,
                        std::vector<double>& in) const {
    require(norm_.fitted(), "critic normalizer has not been fitted");
    require(x.size() + 2 == net_.input_dim(), "critic feature length mismatch");
    in.resize(x.size() + 2);
    in[0] = (detail::state_value(0, bid) - norm_.mean[0]) / norm_.scale[0];
    for (std::size_t j = 0; j < x.size(); ++j)
      in[j + 1] = (detail::state_value(j + 1, x[j]) - norm_.mean[j + 1]) / norm_.scale[j + 1];
    const std::size_t last = x.size() + 1;
    in[last] = (std::log(std::max(action, 0.0) + kActionFloor) - norm_.mean[last]) /
               norm_.scale[last];
  }

  Mlp net_;
  AffineNormalizer norm_;
};

// --- monotonicity penalty -----------------------------------------------------

struct BidState {
  double bid = 0.0;
  std::vector<double> features;
};

struct PenaltyResult {
  double loss = 0.0;
  std::size_t active = 0;  // points where the hinge is on
  std::vector<double> grad;
};

// Point-wise hinge on d(rank score)/d(bid) = pi + b * dpi/db, summed over the
// batch. Subgradient 0 at the hinge point.
inline PenaltyResult mono_penalty(std::span<const BidState> batch,
                                  const BidMultiplierNet& actor) {
  require(!batch.empty(), "monotonicity penalty needs a nonempty batch");
  PenaltyResult r;
  r.grad.assign(actor.net().num_params(), 0.0);
  Mlp::Tape tape;
  for (const auto& s : batch) {
    const auto [pi, dpi] = actor.multiplier_and_bid_grad(s.bid, s.features, tape);
    const double slope = pi + s.bid * dpi;
    if (slope < 0.0) {
      r.loss += -slope;
      ++r.active;
      actor.net().backward(tape, -1.0, -s.bid, r.grad);
    }
  }
  return r;
}

// Sum of squared bid elasticities e = b * (dpi/db) / pi. Multiplier pricing
// charges the critical bid only when pi is flat in the bid; this term keeps it
// close to flat.
inline PenaltyResult elasticity_penalty(std::span<const BidState> batch,
                                        const BidMultiplierNet& actor) {
  require(!batch.empty(), "elasticity penalty needs a nonempty batch");
  PenaltyResult r;
  r.grad.assign(actor.net().num_params(), 0.0);
  Mlp::Tape tape;
  for (const auto& s : batch) {
    const auto [pi, dpi] = actor.multiplier_and_bid_grad(s.bid, s.features, tape);
    const double e = s.bid * dpi / pi;
    r.loss += e * e;
    if (e != 0.0) ++r.active;
    actor.net().backward(tape, -2.0 * e * e / pi, 2.0 * e * s.bid / pi, r.grad);
  }
  return r;
}

// --- optimizer ----------------------------------------------------------------

enum class OptimizerKind { kSgd, kAdam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double max_grad_norm = 0.0;  // 0 disables clipping
};

struct OptimizerState {
  std::vector<double> m, v;
  long step = 0;
};

// Applies one update in place. A non-finite gradient aborts the step before
// any parameter is touched.
inline void sgd_step(std::span<double> params, std::span<const double> grads,
                     OptimizerState& state, const OptimizerConfig& cfg) {
  require(params.size() == grads.size(), "parameter / gradient size mismatch");
  double sq = 0.0;
  for (double g : grads) {
    if (!std::isfinite(g))
      throw Error(ErrorKind::kNumerical, "non-finite gradient; step aborted");
    sq += g * g;
  }
  double clip = 1.0;
  if (cfg.max_grad_norm > 0.0 && sq > cfg.max_grad_norm * cfg.max_grad_norm)
    clip = cfg.max_grad_norm / std::sqrt(sq);
  if (cfg.kind == OptimizerKind::kSgd) {
    for (std::size_t k = 0; k < params.size(); ++k) params[k] -= cfg.lr * clip * grads[k];
    ++state.step;
    return;
  }
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
    state.step = 0;
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double g = grads[k] * clip;
    state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g;
    state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g * g;
    params[k] -= cfg.lr * (state.m[k] / c1) / (std::sqrt(state.v[k] / c2) + cfg.epsilon);
  }
}

// --- checkpoints --------------------------------------------------------------
//
// Little-endian layout:
//   8 bytes  magic "DGSPNET\0"
//   u32      format version (1)
//   u32      role (0 = actor, 1 = critic)
//   u32      layer count L
//   u32 x (L+1) layer widths, input first
//   u32 x L  activation codes
//   u32      normalizer dimension d
//   f64 x d  normalizer means, then f64 x d scales
//   f64 ...  per layer: weights (row-major out x in), then biases

enum class NetRole : std::uint32_t { kActor = 0, kCritic = 1 };

namespace detail {

inline constexpr char kMagic[8] = {'D', 'G', 'S', 'P', 'N', 'E', 'T', '\0'};
inline constexpr std::uint32_t kFormatVersion = 1;

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f64(std::ostream& os, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw Error(ErrorKind::kIo, "checkpoint truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline double get_f64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw Error(ErrorKind::kIo, "checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

inline void write_net(std::ostream& os, NetRole role, const Mlp& net,
                      const AffineNormalizer& norm) {
  os.write(kMagic, sizeof kMagic);
  put_u32(os, kFormatVersion);
  put_u32(os, static_cast<std::uint32_t>(role));
  const auto dims = net.dims();
  put_u32(os, static_cast<std::uint32_t>(net.layers().size()));
  for (auto d : dims) put_u32(os, static_cast<std::uint32_t>(d));
  for (const auto& l : net.layers()) put_u32(os, static_cast<std::uint32_t>(l.act));
  put_u32(os, static_cast<std::uint32_t>(norm.dim()));
  for (double m : norm.mean) put_f64(os, m);
  for (double s : norm.scale) put_f64(os, s);
  for (double p : net.params()) put_f64(os, p);
  if (!os) throw Error(ErrorKind::kIo, "failed writing checkpoint");
}

inline std::pair<Mlp, AffineNormalizer> read_net(std::istream& is, NetRole expected) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw Error(ErrorKind::kIo, "not a network checkpoint (bad magic)");
  const auto version = get_u32(is);
  if (version != kFormatVersion)
    throw Error(ErrorKind::kIo, "unsupported checkpoint version " + std::to_string(version));
  const auto role = get_u32(is);
  if (role != static_cast<std::uint32_t>(expected))
    throw Error(ErrorKind::kIo, "checkpoint holds a different network role");
  const auto nl = get_u32(is);
  if (nl == 0 || nl > 64) throw Error(ErrorKind::kIo, "implausible layer count");
  std::vector<std::size_t> dims(nl + 1);
  for (auto& d : dims) {
    d = get_u32(is);
    if (d == 0 || d > (1u << 20)) throw Error(ErrorKind::kIo, "implausible layer width");
  }
  std::vector<Activation> acts(nl);
  for (auto& a : acts) {
    const auto code = get_u32(is);
    if (code > 2) throw Error(ErrorKind::kIo, "unknown activation code");
    a = static_cast<Activation>(code);
  }
  for (std::size_t l = 0; l + 1 < nl; ++l)
    if (acts[l] != acts[0]) throw Error(ErrorKind::kIo, "mixed hidden activations");
  Mlp net(dims, acts[0], acts.back());
  AffineNormalizer norm;
  const auto nd = get_u32(is);
  if (nd != dims[0]) throw Error(ErrorKind::kIo, "normalizer dimension mismatch");
  norm.mean.resize(nd);
  norm.scale.resize(nd);
  for (auto& m : norm.mean) m = get_f64(is);
  for (auto& s : norm.scale) s = get_f64(is);
  for (auto& p : net.params()) p = get_f64(is);
  return {std::move(net), std::move(norm)};
}

}  // namespace detail

inline void save_actor(std::ostream& os, const BidMultiplierNet& actor) {
  detail::write_net(os, NetRole::kActor, actor.net(), actor.normalizer());
}

inline BidMultiplierNet load_actor(std::istream& is) {
  auto [net, norm] = detail::read_net(is, NetRole::kActor);
  return BidMultiplierNet(std::move(net), std::move(norm));
}

inline void save_critic(std::ostream& os, const CriticNet& critic) {
  detail::write_net(os, NetRole::kCritic, critic.net(), critic.normalizer());
}

inline CriticNet load_critic(std::istream& is) {
  auto [net, norm] = detail::read_net(is, NetRole::kCritic);
  return CriticNet(std::move(net), std::move(norm));
}

inline void save_actor(const std::string& path, const BidMultiplierNet& actor) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::kIo, "cannot open " + path + " for writing");
  save_actor(os, actor);
}

inline BidMultiplierNet load_actor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::kIo, "cannot open " + path);
  return load_actor(is);
}

inline void save_critic(const std::string& path, const CriticNet& critic) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::kIo, "cannot open " + path + " for writing");
  save_critic(os, critic);
}

inline CriticNet load_critic(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::kIo, "cannot open " + path);
  return load_critic(is);
}

}  // namespace deepgsp
