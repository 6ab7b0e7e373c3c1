#pragma once

// Single-step actor-critic training of the bid-multiplier network. Each
// auction round is one step: every candidate's (state, rank score) pair is an
// experience, all of them share the round's scalarized platform objective F,
// and each carries its own smooth-transition penalty.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "deepgsp/audit.hpp"
#include "deepgsp/auction.hpp"
#include "deepgsp/error.hpp"
#include "deepgsp/parallel.hpp"
#include "deepgsp/rank_net.hpp"
#include "deepgsp/simulator.hpp"

namespace deepgsp {

// What an advertiser's utility is held against.
enum class UtilityReference {
  // Per round, against the benchmark mechanism run on the same request. The
  // period mean of this reference is u_bar, but the round-to-round noise of
  // which ads happen to be shown cancels.
  kCounterfactual,
  // Per period of consecutive rounds, against the frozen mean u_bar.
  kPeriodMean,
  // Per period, against the benchmark run on the same requests of the period.
  kPeriodCounterfactual,
};

inline bool uses_counterfactual(UtilityReference r) { return r != UtilityReference::kPeriodMean; }

struct TrainConfig {
  std::array<double, kNumMetrics> weights{1.0, 0.0, 0.0, 0.0, 0.0};
  double epsilon = 1.0;  // tolerated utility loss ratio
  double eta = 3.0;      // smooth-transition penalty weight
  double gamma = 1.0;    // monotonicity penalty weight
  double kappa = 1.0;    // bid-elasticity penalty weight
  double noise_std = 0.3;
  double noise_decay = 1.0;  // per iteration
  double noise_min = 0.02;
  std::size_t batch_rounds = 64;
  UtilityReference reference = UtilityReference::kPeriodCounterfactual;
  bool shared_penalty = true;
  std::size_t period_rounds = 64;  // period references only
  bool exempt_non_winners = false;  // period references only
  double actor_lr = 1e-4;
  double critic_lr = 1e-3;
  std::size_t critic_steps = 5;  // per actor step
  std::size_t pretrain_rounds = 2000;
  std::size_t pretrain_epochs = 40;
  std::size_t pretrain_minibatch = 256;
  std::size_t warm_start_steps = 1500;
  std::size_t iterations = 800;
  std::size_t benchmark_rounds = 2000;
  std::size_t eval_every = 20;
  std::size_t eval_rounds = 1000;
  std::uint64_t eval_seed = 1001;
  std::size_t buffer_capacity = 20000;  // experiences; 0 = on-policy batches only
  std::size_t critic_minibatch = 640;  // sampled from the buffer when enabled
  bool select_best = true;          // keep the best held-out checkpoint
  std::uint64_t seed = 42;
  std::size_t workers = 1;
  NetArchitecture arch;

  void collect_problems(Problems& p) const {
    collect_weight_problems(weights, p);
    p.check(epsilon >= 0.0 && epsilon <= 1.0, "train.epsilon must lie in [0,1]");
    p.check(eta > 0.0, "train.eta must be positive");
    p.check(gamma >= 0.0, "train.gamma must be nonnegative");
    p.check(kappa >= 0.0, "train.kappa must be nonnegative");
    p.check(noise_std >= 0.0 && noise_min >= 0.0, "train noise must be nonnegative");
    p.check(noise_decay > 0.0 && noise_decay <= 1.0, "train.noise_decay must lie in (0,1]");
    p.check(batch_rounds >= 1, "train.batch_rounds must be >= 1");
    p.check(actor_lr > 0.0 && critic_lr > 0.0, "learning rates must be positive");
    p.check(critic_steps >= 1, "train.critic_steps must be >= 1");
    p.check(pretrain_rounds >= 1, "train.pretrain_rounds must be >= 1");
    p.check(pretrain_minibatch >= 1, "train.pretrain_minibatch must be >= 1");
    p.check(critic_minibatch >= 1, "train.critic_minibatch must be >= 1");
    p.check(benchmark_rounds >= 1, "train.benchmark_rounds must be >= 1");
    p.check(eval_every >= 1 && eval_rounds >= 1, "train evaluation cadence must be positive");
    p.check(!arch.hidden.empty(), "network needs at least one hidden layer");
  }

  void validate() const {
    Problems p;
    collect_problems(p);
    p.raise_if_any();
  }
};

struct Experience {
  std::uint64_t round = 0;
  double bid = 0.0;
  std::vector<double> features;
  double action = 0.0;   // rank score actually used
  double reward = 0.0;   // shaped
  double f = 0.0;        // shared platform objective of the round
  double utility = 0.0;  // normalized advertiser utility in the round
  double benchmark_utility = 0.0;  // same request under the benchmark mechanism
  double period_utility = 0.0;  // mean of `utility` over the reward period
  bool won = false;
};

inline double shaped_reward(double f, double u, double u_bar, double epsilon, double eta) {
  require(eta > 0.0, "shaped_reward: eta must be positive");
  return f - eta * std::max(0.0, (1.0 - epsilon) * u_bar - u);
}

// Frozen per-advertiser benchmark utilities and the scale they are measured in.
struct TransitionBenchmark {
  std::vector<double> u_bar;  // normalized, per advertiser
  double scale = 1.0;         // utilities are divided by this
};

inline TransitionBenchmark make_benchmark(const World& world, std::size_t rounds,
                                          std::uint64_t seed, std::size_t workers = 1) {
  TransitionBenchmark b;
  const auto raw = benchmark_utilities(world, GspScorer{1.0}, rounds, seed,
                                       FeedbackMode::kExpected, workers);
  const double mean = std::accumulate(raw.begin(), raw.end(), 0.0) /
                      static_cast<double>(raw.size());
  b.scale = mean > 0.0 ? mean : 1.0;
  b.u_bar.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) b.u_bar[i] = raw[i] / b.scale;
  return b;
}

struct RewardSpec {
  std::span<const double> weights;
  double epsilon = 1.0;
  double eta = 3.0;
  const TransitionBenchmark* benchmark = nullptr;
  UtilityReference reference = UtilityReference::kPeriodCounterfactual;
  std::size_t period_rounds = 64;  // period references: rounds per period; 0 = whole batch
  bool exempt_non_winners = false;  // period references: skip ads with no win in the period
  // Every ad of a round receives the round's mean penalty, as it receives F.
  // Without this an ad's reward ignores the utility it takes from the others.
  bool shared_penalty = true;
};

inline RewardSpec reward_spec(const TrainConfig& cfg, const TransitionBenchmark& benchmark) {
  return {cfg.weights,   cfg.epsilon,   cfg.eta,
          &benchmark,    cfg.reference, cfg.period_rounds,
          cfg.exempt_non_winners, cfg.shared_penalty};
}

namespace detail {
inline constexpr std::uint64_t kTrainRequestStream = 21;
inline constexpr std::uint64_t kTrainNoiseStream = 22;
inline constexpr std::uint64_t kWarmStartStream = 23;
inline constexpr std::uint64_t kPretrainStream = 24;
inline constexpr std::uint64_t kMonoStream = 25;
inline constexpr std::uint64_t kBenchmarkSalt = 0x5851f42d4c957f2dULL;
inline constexpr std::uint64_t kPretrainSalt = 0x14057b7ef767814fULL;
}  // namespace detail

// Utilities are compared with the benchmark per period of consecutive rounds.
// With `exempt_non_winners`, advertisers without a win in the period are not
// penalized; a policy can then dodge the constraint by starving an ad.
inline void share_penalty(std::span<Experience> batch, std::size_t n_adv) {
  for (std::size_t lo = 0; lo + n_adv <= batch.size(); lo += n_adv) {
    double pen = 0.0;
    for (std::size_t i = 0; i < n_adv; ++i) pen += batch[lo + i].f - batch[lo + i].reward;
    pen /= static_cast<double>(n_adv);
    for (std::size_t i = 0; i < n_adv; ++i) batch[lo + i].reward = batch[lo + i].f - pen;
  }
}

// `batch` holds n_adv consecutive experiences per round.
inline void assign_rewards(std::span<Experience> batch, std::size_t n_adv,
                           const RewardSpec& reward) {
  if (reward.reference == UtilityReference::kCounterfactual) {
    for (auto& e : batch) {
      e.period_utility = e.utility;
      e.reward = shaped_reward(e.f, e.utility, e.benchmark_utility, reward.epsilon, reward.eta);
    }
    if (reward.shared_penalty) share_penalty(batch, n_adv);
    return;
  }
  const std::size_t n_rounds = n_adv ? batch.size() / n_adv : 0;
  const std::size_t len = reward.period_rounds ? reward.period_rounds : n_rounds;
  for (std::size_t lo = 0; lo < n_rounds; lo += len) {
    const std::size_t hi = std::min(n_rounds, lo + len);
    for (std::size_t i = 0; i < n_adv; ++i) {
      double u = 0.0, u0 = 0.0;
      bool won = false;
      for (std::size_t k = lo; k < hi; ++k) {
        u += batch[k * n_adv + i].utility;
        u0 += batch[k * n_adv + i].benchmark_utility;
        won = won || batch[k * n_adv + i].won;
      }
      u /= static_cast<double>(hi - lo);
      u0 /= static_cast<double>(hi - lo);
      const double ref = reward.reference == UtilityReference::kPeriodMean
                             ? reward.benchmark->u_bar[i]
                             : u0;
      for (std::size_t k = lo; k < hi; ++k) {
        Experience& e = batch[k * n_adv + i];
        e.period_utility = u;
        e.reward = won || !reward.exempt_non_winners
                       ? shaped_reward(e.f, u, ref, reward.epsilon, reward.eta)
                       : e.f;
      }
    }
  }
  if (reward.shared_penalty) share_penalty(batch, n_adv);
}

// Runs rounds [first_round, first_round + n_rounds) with multipliers
// pi~ = base(c) * exp(n), n ~ Normal(0, noise_std^2), and returns one
// experience per candidate. `base` maps a candidate to its multiplier.
template <class BaseMultiplier>
std::vector<Experience> collect_batch(const World& world, BaseMultiplier&& base,
                                      const RewardSpec& reward, double noise_std,
                                      std::uint64_t seed, std::uint64_t first_round,
                                      std::size_t n_rounds, std::size_t workers = 1) {
  require(reward.benchmark != nullptr, "collect_batch: benchmark utilities required");
  const std::size_t n_adv = world.advertisers.size();
  require(reward.benchmark->u_bar.size() == n_adv, "benchmark size mismatch");
  std::vector<Experience> out(n_rounds * n_adv);
  constexpr std::size_t kChunk = 16;
  const std::size_t n_chunks = (n_rounds + kChunk - 1) / kChunk;
  parallel_chunks(n_chunks, workers, [&](std::size_t chunk) {
    const std::size_t lo = chunk * kChunk;
    const std::size_t hi = std::min(n_rounds, lo + kChunk);
    for (std::size_t k = lo; k < hi; ++k) {
      const std::uint64_t round = first_round + k;
      auto req_rng = stream_rng(seed, detail::kTrainRequestStream, round);
      auto noise_rng = stream_rng(seed, detail::kTrainNoiseStream, round);
      std::normal_distribution<double> normal(0.0, 1.0);
      const SampledRequest sr = sample_request(world, req_rng);
      std::vector<RankedEntry> entries(n_adv);
      for (std::size_t i = 0; i < n_adv; ++i) {
        const AdCandidate& c = sr.request.candidates[i];
        const double n = normal(noise_rng);
        const double pi = base(c) * std::exp(noise_std * n);
        entries[i] = {i, c.ad_id, c.bid, c.bid * pi, pi, 0.0};
      }
      AuctionOutcome outcome = allocate(sr.request, entries);
      for (std::size_t w = 0; w < outcome.winners.size(); ++w)
        outcome.winners[w].price_per_click = price_by_multiplier(outcome, w);
      std::mt19937_64 unused;
      const auto fb = simulate_feedback(sr, outcome, unused, FeedbackMode::kExpected, round);
      std::vector<double> u0(n_adv, 0.0);
      if (uses_counterfactual(reward.reference) && reward.epsilon < 1.0) {
        std::vector<RankedEntry> bench_entries(n_adv);
        for (std::size_t i = 0; i < n_adv; ++i) {
          const AdCandidate& c = sr.request.candidates[i];
          bench_entries[i] = {i, c.ad_id, c.bid, c.bid * c.pctr(), c.pctr(), 0.0};
        }
        AuctionOutcome bench = allocate(sr.request, bench_entries);
        for (std::size_t w = 0; w < bench.winners.size(); ++w)
          bench.winners[w].price_per_click = price_by_multiplier(bench, w);
        for (const auto& r : simulate_feedback(sr, bench, unused, FeedbackMode::kExpected, round))
          u0[r.candidate] += r.utility();
      }
      MetricsAccumulator acc;
      std::vector<double> u(n_adv, 0.0);
      std::vector<char> won(n_adv, 0);
      for (const auto& r : fb) {
        acc.add(r);
        u[r.candidate] += r.utility();
      }
      for (const auto& w : outcome.winners) won[w.candidate] = 1;
      const MetricsRecord m = compute_metrics(acc, world.normalizers);
      const double f = scalarize(m.scaled, reward.weights);
      for (std::size_t i = 0; i < n_adv; ++i) {
        Experience& e = out[k * n_adv + i];
        const AdCandidate& c = sr.request.candidates[i];
        e.round = round;
        e.bid = c.bid;
        e.features = c.features;
        e.action = entries[i].score;
        e.f = f;
        e.utility = u[i] / reward.benchmark->scale;
        e.benchmark_utility = u0[i] / reward.benchmark->scale;
        e.won = won[i] != 0;
      }
    }
  });
  assign_rewards(out, n_adv, reward);
  return out;
}

inline double mean_reward(std::span<const Experience> batch) {
  require(!batch.empty(), "mean_reward: empty batch");
  double s = 0.0;
  for (const auto& e : batch) s += e.reward;
  return s / static_cast<double>(batch.size());
}

// --- critic -------------------------------------------------------------------

inline AffineNormalizer fit_critic_normalizer(std::span<const Experience> batch) {
  std::vector<std::vector<double>> rows;
  rows.reserve(batch.size());
  for (const auto& e : batch) rows.push_back(CriticNet::raw_input(e.bid, e.features, e.action));
  return AffineNormalizer::fit(rows);
}

inline double critic_loss(const CriticNet& critic, std::span<const Experience> batch) {
  require(!batch.empty(), "critic loss: empty batch");
  double s = 0.0;
  for (const auto& e : batch) {
    const double d = critic.value(e.bid, e.features, e.action) - e.reward;
    s += d * d;
  }
  return s / static_cast<double>(batch.size());
}

// Gradient of the mean squared error against the observed reward (the
// single-step target). Returns the loss.
inline double critic_loss_grad(const CriticNet& critic, std::span<const Experience> batch,
                               std::span<double> grad) {
  require(!batch.empty(), "critic update: empty batch");
  std::fill(grad.begin(), grad.end(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const auto& e : batch) {
    const double q = critic.value(e.bid, e.features, e.action);
    const double d = q - e.reward;
    loss += d * d * inv_n;
    critic.accumulate_grad(e.bid, e.features, e.action, 2.0 * d * inv_n, grad);
  }
  if (!std::isfinite(loss)) throw Error(ErrorKind::kNumerical, "critic loss is not finite");
  return loss;
}

inline double critic_update(CriticNet& critic, std::span<const Experience> batch,
                            OptimizerState& state, const OptimizerConfig& opt) {
  std::vector<double> grad(critic.net().num_params());
  const double loss = critic_loss_grad(critic, batch, grad);
  sgd_step(critic.net().params(), grad, state, opt);
  return loss;
}

struct PretrainResult {
  double train_mse = 0.0;
  double validation_mse = 0.0;
  std::size_t epochs = 0;
};

// Regression of Q(s, a) onto logged rewards with minibatch Adam. The last
// tenth of the log is held out; training stops after `patience` epochs
// without validation improvement and keeps the best parameters.
inline PretrainResult pretrain_critic(CriticNet& critic, std::span<const Experience> log,
                                      std::size_t max_epochs, std::size_t minibatch,
                                      const OptimizerConfig& opt, std::uint64_t seed,
                                      std::size_t patience = 5) {
  require(!log.empty(), "pretrain_critic: empty log");
  if (!critic.normalizer().fitted()) critic.set_normalizer(fit_critic_normalizer(log));
  const std::size_t n_val = log.size() >= 20 ? log.size() / 10 : 0;
  const auto train = log.first(log.size() - n_val);
  const auto val = n_val ? log.last(n_val) : train;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  auto rng = stream_rng(seed, detail::kPretrainStream, 0);
  OptimizerState state;
  std::vector<double> grad(critic.net().num_params());
  std::vector<Experience> mb;
  PretrainResult r;
  double best = critic_loss(critic, val);
  std::vector<double> best_params(critic.net().params().begin(), critic.net().params().end());
  std::size_t stale = 0;
  for (std::size_t ep = 0; ep < max_epochs; ++ep) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t s = 0; s < order.size(); s += minibatch) {
      mb.clear();
      for (std::size_t k = s; k < std::min(order.size(), s + minibatch); ++k)
        mb.push_back(train[order[k]]);
      critic_loss_grad(critic, mb, grad);
      sgd_step(critic.net().params(), grad, state, opt);
    }
    ++r.epochs;
    const double v = critic_loss(critic, val);
    if (!std::isfinite(v))
      throw Error(ErrorKind::kNumerical,
                  "critic pretraining diverged at epoch " + std::to_string(ep));
    if (v < best) {
      best = v;
      std::copy(critic.net().params().begin(), critic.net().params().end(),
                best_params.begin());
      stale = 0;
    } else if (++stale >= patience) {
      break;
    }
  }
  std::copy(best_params.begin(), best_params.end(), critic.net().params().begin());
  r.validation_mse = best;
  r.train_mse = critic_loss(critic, train);
  return r;
}

// --- actor --------------------------------------------------------------------

struct ActorLoss {
  double total = 0.0;
  double q_term = 0.0;     // mean of -Q(s, b * pi(s))
  double mono_term = 0.0;  // mean hinge, before gamma
  double elasticity_term = 0.0;  // mean squared bid elasticity, before kappa
  std::size_t mono_active = 0;
};

// Loss and parameter gradient of
//   mean(-Q(s, b pi(s))) + gamma * mean hinge + kappa * mean elasticity^2.
// The critic is held fixed. The penalties are evaluated on `reg_states`; pass
// the batch states, possibly with extra bids.
inline ActorLoss actor_loss_grad(const BidMultiplierNet& actor, const CriticNet& critic,
                                 std::span<const Experience> batch,
                                 std::span<const BidState> reg_states, double gamma,
                                 double kappa, std::span<double> grad) {
  require(!batch.empty(), "actor update: empty batch");
  std::fill(grad.begin(), grad.end(), 0.0);
  ActorLoss l;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const auto& e : batch) {
    const double pi = actor.multiplier(e.bid, e.features);
    const auto [q, dq_da] = critic.value_and_action_grad(e.bid, e.features, e.bid * pi);
    l.q_term -= q * inv_n;
    actor.accumulate_grad(e.bid, e.features, -dq_da * e.bid * inv_n, 0.0, grad);
  }
  if (!reg_states.empty()) {
    const double inv_m = 1.0 / static_cast<double>(reg_states.size());
    const PenaltyResult p = mono_penalty(reg_states, actor);
    l.mono_term = p.loss * inv_m;
    l.mono_active = p.active;
    if (gamma > 0.0)
      for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += gamma * inv_m * p.grad[k];
    if (kappa > 0.0) {
      const PenaltyResult el = elasticity_penalty(reg_states, actor);
      l.elasticity_term = el.loss * inv_m;
      for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += kappa * inv_m * el.grad[k];
    }
  }
  l.total = l.q_term + gamma * l.mono_term + kappa * l.elasticity_term;
  if (!std::isfinite(l.total)) throw Error(ErrorKind::kNumerical, "actor loss is not finite");
  return l;
}

inline ActorLoss actor_update(BidMultiplierNet& actor, const CriticNet& critic,
                              std::span<const Experience> batch,
                              std::span<const BidState> reg_states, double gamma, double kappa,
                              OptimizerState& state, const OptimizerConfig& opt) {
  std::vector<double> grad(actor.net().num_params());
  const ActorLoss l = actor_loss_grad(actor, critic, batch, reg_states, gamma, kappa, grad);
  sgd_step(actor.net().params(), grad, state, opt);
  return l;
}

// Log-uniform bid rescaling over [lo, hi] times the observed bid.
inline double rescale_bid(double bid, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
  return bid * std::exp(u(rng));
}

// Fits the actor's normalizer on `states` and regresses log pi onto
// log pCTR, the benchmark's multiplier, over bids spread across the audit
// grid range so the start point is flat in the bid.
inline double warm_start_actor(BidMultiplierNet& actor, std::span<const BidState> states,
                               std::size_t steps, std::size_t minibatch,
                               const OptimizerConfig& opt, std::uint64_t seed,
                               double bid_lo = 0.1, double bid_hi = 10.0) {
  require(!states.empty(), "warm start needs states");
  std::vector<std::vector<double>> rows;
  rows.reserve(states.size());
  for (const auto& s : states) rows.push_back(state_vector(s.bid, s.features));
  actor.set_normalizer(AffineNormalizer::fit(rows));
  auto rng = stream_rng(seed, detail::kWarmStartStream, 0);
  auto init_rng = stream_rng(seed, detail::kWarmStartStream, 1);
  actor.net().init_glorot(init_rng);
  std::uniform_int_distribution<std::size_t> pick(0, states.size() - 1);
  OptimizerState state;
  std::vector<double> grad(actor.net().num_params());
  double loss = 0.0;
  for (std::size_t step = 0; step < steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    loss = 0.0;
    const double inv = 1.0 / static_cast<double>(minibatch);
    for (std::size_t k = 0; k < minibatch; ++k) {
      const BidState& s = states[pick(rng)];
      const double b = rescale_bid(s.bid, bid_lo, bid_hi, rng);
      const double target = std::log(std::max(s.features[kPctr], 1e-6));
      const double pi = actor.multiplier(b, s.features);
      const double d = std::log(pi) - target;
      loss += d * d * inv;
      actor.accumulate_grad(b, s.features, 2.0 * d / pi * inv, 0.0, grad);
    }
    sgd_step(actor.net().params(), grad, state, opt);
  }
  return loss;
}

// --- training loop ------------------------------------------------------------

struct TrainReportRow {
  std::size_t iteration = 0;
  double noise_std = 0.0;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double mono_loss = 0.0;
  double eval_f = 0.0;
  double eval_reward = 0.0;
  double eval_utility = 0.0;  // mean normalized utility per advertiser-round
  double tm_spot = 0.0;
  double mean_payment = 0.0;  // per winner per round
};

struct TrainResult {
  BidMultiplierNet actor;
  CriticNet critic;
  TransitionBenchmark benchmark;
  PretrainResult pretrain;
  std::vector<TrainReportRow> report;
  std::size_t best_iteration = 0;
};

struct HeldOut {
  double f = 0.0;
  double reward = 0.0;
  double utility = 0.0;
  double mean_payment = 0.0;
};

inline HeldOut held_out_objective(const World& world, const BidMultiplierNet& actor,
                                  const RewardSpec& reward, std::uint64_t seed,
                                  std::size_t rounds, std::size_t workers) {
  const auto batch = collect_batch(
      world, [&](const AdCandidate& c) { return actor.multiplier(c.bid, c.features); }, reward,
      0.0, seed, 0, rounds, workers);
  HeldOut h;
  const double n = static_cast<double>(batch.size());
  for (const auto& e : batch) {
    h.reward += e.reward / n;
    h.utility += e.utility / n;
  }
  double f = 0.0;
  for (std::size_t k = 0; k < batch.size(); k += world.advertisers.size()) f += batch[k].f;
  h.f = f / static_cast<double>(rounds);
  EvalOptions opt;
  opt.rounds = std::min<std::size_t>(rounds, 256);
  opt.seed = seed;
  opt.workers = workers;
  h.mean_payment = evaluate(world, DeepGspScorer{&actor}, opt).mean_ppc;
  return h;
}

inline TrainResult train(const World& world, const TrainConfig& cfg) {
  cfg.validate();
  TrainResult res;
  res.benchmark = make_benchmark(world, cfg.benchmark_rounds,
                                 cfg.seed ^ detail::kBenchmarkSalt, cfg.workers);
  const RewardSpec reward = reward_spec(cfg, res.benchmark);

  OptimizerConfig critic_opt;
  critic_opt.lr = cfg.critic_lr;
  OptimizerConfig actor_opt;
  actor_opt.lr = cfg.actor_lr;

  // Critic pretraining on benchmark-mechanism logs.
  const std::uint64_t pre_seed = cfg.seed ^ detail::kPretrainSalt;
  const auto log = collect_batch(
      world, [](const AdCandidate& c) { return c.pctr(); }, reward, cfg.noise_std, pre_seed,
      0, cfg.pretrain_rounds, cfg.workers);
  res.critic = CriticNet(world.feature_len(), cfg.arch);
  {
    auto rng = stream_rng(cfg.seed, detail::kPretrainStream, 1);
    res.critic.net().init_glorot(rng);
  }
  res.pretrain = pretrain_critic(res.critic, log, cfg.pretrain_epochs, cfg.pretrain_minibatch,
                                 critic_opt, cfg.seed);

  res.actor = BidMultiplierNet(world.feature_len(), cfg.arch);
  std::vector<BidState> states;
  states.reserve(log.size());
  for (const auto& e : log) states.push_back({e.bid, e.features});
  warm_start_actor(res.actor, states, cfg.warm_start_steps, 256, actor_opt, cfg.seed);

  const auto spot_states = sample_states(world, 20, cfg.eval_seed);
  AuditConfig spot_cfg;
  auto record = [&](std::size_t it, double noise, double closs, const ActorLoss& al) {
    const HeldOut h =
        held_out_objective(world, res.actor, reward, cfg.eval_seed, cfg.eval_rounds, cfg.workers);
    TrainReportRow row;
    row.iteration = it;
    row.noise_std = noise;
    row.critic_loss = closs;
    row.actor_loss = al.total;
    row.mono_loss = al.mono_term;
    row.eval_f = h.f;
    row.eval_reward = h.reward;
    row.eval_utility = h.utility;
    row.tm_spot = monotonicity_metric(res.actor, spot_states, spot_cfg).t_m;
    row.mean_payment = h.mean_payment;
    res.report.push_back(row);
    return h.reward;
  };

  double best_reward = record(0, cfg.noise_std, res.pretrain.validation_mse, ActorLoss{});
  BidMultiplierNet best = res.actor;
  res.best_iteration = 0;

  OptimizerState critic_state, actor_state;
  std::deque<Experience> buffer;
  std::vector<Experience> critic_batch;
  std::vector<BidState> mono_states;
  auto mono_rng = stream_rng(cfg.seed, detail::kMonoStream, 0);
  auto buffer_rng = stream_rng(cfg.seed, detail::kMonoStream, 1);
  if (cfg.buffer_capacity > 0) {
    // The benchmark log seeds the buffer and ages out as on-policy data arrives.
    const std::size_t keep = std::min(cfg.buffer_capacity, log.size());
    buffer.assign(log.end() - static_cast<std::ptrdiff_t>(keep), log.end());
  }
  double noise = cfg.noise_std;
  std::uint64_t next_round = 0;
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    const auto batch = collect_batch(
        world, [&](const AdCandidate& c) { return res.actor.multiplier(c.bid, c.features); },
        reward, noise, cfg.seed, next_round, cfg.batch_rounds, cfg.workers);
    next_round += cfg.batch_rounds;

    double closs = 0.0;
    if (cfg.buffer_capacity > 0) {
      buffer.insert(buffer.end(), batch.begin(), batch.end());
      while (buffer.size() > cfg.buffer_capacity) buffer.pop_front();
      std::uniform_int_distribution<std::size_t> pick(0, buffer.size() - 1);
      for (std::size_t k = 0; k < cfg.critic_steps; ++k) {
        critic_batch.clear();
        for (std::size_t j = 0; j < cfg.critic_minibatch; ++j)
          critic_batch.push_back(buffer[pick(buffer_rng)]);
        closs = critic_update(res.critic, critic_batch, critic_state, critic_opt);
      }
    } else {
      for (std::size_t k = 0; k < cfg.critic_steps; ++k)
        closs = critic_update(res.critic, batch, critic_state, critic_opt);
    }

    mono_states.clear();
    for (const auto& e : batch) {
      mono_states.push_back({e.bid, e.features});
      mono_states.push_back({rescale_bid(e.bid, 0.1, 10.0, mono_rng), e.features});
    }
    const ActorLoss al =
        actor_update(res.actor, res.critic, batch, mono_states, cfg.gamma, cfg.kappa,
                     actor_state, actor_opt);
    noise = std::max(cfg.noise_min, noise * cfg.noise_decay);

    if (it % cfg.eval_every == 0 || it == cfg.iterations) {
      const double r = record(it, noise, closs, al);
      if (r > best_reward) {
        best_reward = r;
        best = res.actor;
        res.best_iteration = it;
      }
    }
  }
  if (cfg.select_best) res.actor = std::move(best);
  return res;
}

inline void write_train_report_csv(std::ostream& os, std::span<const TrainReportRow> rows) {
  os << "iteration,noise_std,critic_loss,actor_loss,mono_loss,eval_f,eval_reward,"
        "eval_utility,tm_spot,mean_payment\n";
  char buf[320];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.6g,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g,%.6f,%.8g\n",
                  r.iteration, r.noise_std, r.critic_loss, r.actor_loss, r.mono_loss, r.eval_f,
                  r.eval_reward, r.eval_utility, r.tm_spot, r.mean_payment);
    os << buf;
  }
}

}  // namespace deepgsp
