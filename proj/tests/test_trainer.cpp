#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "deepgsp/trainer.hpp"
#include "gradcheck.hpp"

using namespace deepgsp;
using namespace deepgsp::testing;

namespace {

World tiny_world() {
  WorldConfig c;
  c.advertisers = 4;
  c.slots = 2;
  c.slot_factors = {1.0, 0.7};
  c.user_features = 2;
  c.calibration_rounds = 300;
  c.seed = 5;
  return make_world(c);
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.arch.hidden = {8, 4};
  t.pretrain_rounds = 200;
  t.pretrain_epochs = 5;
  t.warm_start_steps = 100;
  t.iterations = 6;
  t.batch_rounds = 8;
  t.eval_every = 3;
  t.eval_rounds = 50;
  t.benchmark_rounds = 200;
  t.buffer_capacity = 500;
  t.critic_minibatch = 32;
  t.critic_steps = 2;
  return t;
}

std::vector<Experience> fixed_state_log(double bid, std::vector<double> x, std::size_t n,
                                        const std::function<double(double)>& reward) {
  std::vector<Experience> log;
  for (std::size_t k = 0; k < n; ++k) {
    Experience e;
    e.bid = bid;
    e.features = x;
    e.action = bid * (0.02 + 0.2 * static_cast<double>(k % 97) / 96.0);
    e.reward = reward(e.action);
    log.push_back(e);
  }
  return log;
}

CriticNet small_critic(std::size_t len, std::uint64_t seed) {
  NetArchitecture arch;
  arch.hidden = {16, 8};
  CriticNet c(len, arch);
  auto rng = stream_rng(seed, 0, 0);
  c.net().init_glorot(rng);
  return c;
}

}  // namespace

TEST(ShapedReward, Examples) {
  EXPECT_DOUBLE_EQ(shaped_reward(0.7, 0.0, 3.0, 1.0, 10.0), 0.7);
  EXPECT_DOUBLE_EQ(shaped_reward(0.7, 0.9, 1.0, 0.2, 10.0), 0.7);
  EXPECT_NEAR(shaped_reward(0.5, 0.6, 1.0, 0.2, 2.0), 0.1, 1e-15);
  EXPECT_THROW(shaped_reward(0.5, 0.6, 1.0, 0.2, 0.0), Error);
}

TEST(TrainConfig, ReportsEveryProblem) {
  TrainConfig t;
  t.weights = {0.5, 0.1, 0.0, 0.0, 0.0};
  t.epsilon = 1.5;
  t.eta = 0.0;
  t.actor_lr = -1.0;
  Problems p;
  t.collect_problems(p);
  EXPECT_EQ(p.list().size(), 4u);
  EXPECT_THROW(t.validate(), Error);
  EXPECT_NO_THROW(TrainConfig{}.validate());
}

TEST(Benchmark, NormalizedToUnitMean) {
  const World w = tiny_world();
  const auto b = make_benchmark(w, 300, 9);
  ASSERT_EQ(b.u_bar.size(), 4u);
  double mean = 0.0;
  for (double u : b.u_bar) mean += u / 4.0;
  EXPECT_NEAR(mean, 1.0, 1e-12);
  EXPECT_GT(b.scale, 0.0);
}

TEST(CollectBatch, CardinalitySharingAndShaping) {
  const World w = tiny_world();
  const auto bench = make_benchmark(w, 300, 9);
  const std::array<double, kNumMetrics> weights{0.5, 0.5, 0.0, 0.0, 0.0};
  const RewardSpec spec{weights, 0.1,  10.0,  &bench, UtilityReference::kPeriodMean,
                        64,      false, false};
  const auto batch = collect_batch(w, [](const AdCandidate& c) { return c.pctr(); }, spec, 0.3,
                                   11, 100, 25);
  ASSERT_EQ(batch.size(), 25u * 4u);
  std::vector<double> mean_u(4, 0.0);
  for (std::size_t k = 0; k < batch.size(); ++k) mean_u[k % 4] += batch[k].utility / 25.0;
  for (std::size_t k = 0; k < batch.size(); k += 4) {
    for (std::size_t i = 0; i < 4; ++i) {
      const auto& e = batch[k + i];
      EXPECT_EQ(e.round, batch[k].round);
      EXPECT_EQ(e.f, batch[k].f);
      EXPECT_NEAR(e.period_utility, mean_u[i], 1e-12);
      const double want = shaped_reward(e.f, e.period_utility, bench.u_bar[i], 0.1, 10.0);
      EXPECT_DOUBLE_EQ(e.reward, want);
      EXPECT_GE(e.action, 0.0);
      if (!e.won) {
        EXPECT_EQ(e.utility, 0.0);
      }
    }
  }
  EXPECT_EQ(batch.front().round, 100u);
}

TEST(PeriodRewards, HingeOnPeriodMeanAndLosersExempt) {
  TransitionBenchmark bench{{1.0, 1.0}, 1.0};
  std::array<double, kNumMetrics> weights{1.0, 0.0, 0.0, 0.0, 0.0};
  RewardSpec spec{weights, 0.2, 2.0, &bench, UtilityReference::kPeriodMean, 2, true, false};
  // Two rounds of two advertisers; ad 0 averages 0.6, ad 1 never wins.
  std::vector<Experience> batch(4);
  batch[0].utility = 0.9;
  batch[0].won = true;
  batch[2].utility = 0.3;
  batch[2].won = true;
  for (auto& e : batch) e.f = 0.5;
  assign_rewards(batch, 2, spec);
  EXPECT_NEAR(batch[0].reward, 0.1, 1e-12);
  EXPECT_NEAR(batch[2].reward, 0.1, 1e-12);
  EXPECT_EQ(batch[1].reward, 0.5);
  EXPECT_EQ(batch[3].reward, 0.5);
  spec.exempt_non_winners = false;
  assign_rewards(batch, 2, spec);
  EXPECT_NEAR(batch[1].reward, 0.5 - 2.0 * 0.8, 1e-12);
  EXPECT_NEAR(batch[0].reward, 0.1, 1e-12);
  // One-round periods: each round is judged alone.
  spec.exempt_non_winners = true;
  spec.period_rounds = 1;
  assign_rewards(batch, 2, spec);
  EXPECT_NEAR(batch[0].reward, 0.5, 1e-12);
  EXPECT_NEAR(batch[2].reward, 0.5 - 2.0 * 0.5, 1e-12);
}

TEST(PeriodRewards, CounterfactualPeriodMeansAndSharing) {
  TransitionBenchmark bench{{5.0, 5.0}, 1.0};  // unused by this reference
  std::array<double, kNumMetrics> weights{1.0, 0.0, 0.0, 0.0, 0.0};
  RewardSpec spec{weights, 0.5, 2.0, &bench, UtilityReference::kPeriodCounterfactual, 2, false,
                  false};
  // Ad 0 falls from a benchmark mean of 1.0 to 0.3; ad 1 gains.
  std::vector<Experience> batch(4);
  batch[0].utility = 0.6;
  batch[0].benchmark_utility = 2.0;
  batch[1].utility = 0.5;
  batch[3].utility = 0.5;
  batch[3].benchmark_utility = 0.2;
  for (auto& e : batch) e.f = 0.5;
  assign_rewards(batch, 2, spec);
  // 0.5 * 1.0 - 0.3 = 0.2 short.
  EXPECT_NEAR(batch[0].period_utility, 0.3, 1e-12);
  EXPECT_NEAR(batch[0].reward, 0.5 - 2.0 * 0.2, 1e-12);
  EXPECT_NEAR(batch[2].reward, 0.5 - 2.0 * 0.2, 1e-12);
  EXPECT_EQ(batch[1].reward, 0.5);
  spec.shared_penalty = true;
  assign_rewards(batch, 2, spec);
  for (const auto& e : batch) EXPECT_NEAR(e.reward, 0.5 - 0.2, 1e-12);
}

TEST(CollectBatch, CounterfactualReferenceOfTheBenchmarkIsItself) {
  const World w = tiny_world();
  const auto bench = make_benchmark(w, 300, 9);
  const std::array<double, kNumMetrics> weights{1.0, 0.0, 0.0, 0.0, 0.0};
  const RewardSpec spec{weights, 0.0, 10.0, &bench, UtilityReference::kCounterfactual};
  auto pctr = [](const AdCandidate& c) { return c.pctr(); };
  for (const auto& e : collect_batch(w, pctr, spec, 0.0, 14, 0, 40)) {
    EXPECT_EQ(e.utility, e.benchmark_utility);
    EXPECT_EQ(e.reward, e.f);
  }
  // Shading all but the first ad's multiplier changes who wins; the shortfall
  // is charged round by round.
  auto tilted = [](const AdCandidate& c) {
    return c.ad_id == "ad000" ? c.pctr() : 0.2 * c.pctr();
  };
  std::size_t charged = 0;
  const auto batch = collect_batch(w, tilted, spec, 0.0, 14, 0, 40);
  for (std::size_t k = 0; k < batch.size(); k += 4) {
    double pen = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      const auto& e = batch[k + i];
      pen += (e.f - shaped_reward(e.f, e.utility, e.benchmark_utility, 0.0, 10.0)) / 4.0;
    }
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(batch[k + i].reward, batch[k].f - pen, 1e-12);
    charged += pen > 0.0;
  }
  EXPECT_GT(charged, 0u);
  // Unshared, each ad carries only its own hinge.
  RewardSpec own = spec;
  own.shared_penalty = false;
  for (const auto& e : collect_batch(w, tilted, own, 0.0, 14, 0, 40))
    EXPECT_DOUBLE_EQ(e.reward, shaped_reward(e.f, e.utility, e.benchmark_utility, 0.0, 10.0));
}

TEST(CollectBatch, ObjectiveMatchesScaledMetricsOfTheRound) {
  const World w = tiny_world();
  const auto bench = make_benchmark(w, 300, 9);
  const std::array<double, kNumMetrics> weights{1.0, 0.0, 0.0, 0.0, 0.0};
  const RewardSpec spec{weights, 1.0, 10.0, &bench};
  // Noise-free pCTR multipliers are exactly GSP with sigma = 1.
  const auto batch = collect_batch(w, [](const AdCandidate& c) { return c.pctr(); }, spec, 0.0,
                                   13, 0, 10);
  for (std::size_t r = 0; r < 10; ++r) {
    auto rng = stream_rng(13, detail::kTrainRequestStream, r);
    const auto sr = sample_request(w, rng);
    const auto out = run_auction(sr.request, GspScorer{1.0});
    std::mt19937_64 unused;
    const auto fb = simulate_feedback(sr, out, unused, FeedbackMode::kExpected, r);
    MetricsAccumulator acc;
    for (const auto& rec : fb) acc.add(rec);
    const auto m = compute_metrics(acc, w.normalizers);
    EXPECT_NEAR(batch[r * 4].f, m.scaled[kRpm], 1e-12);
  }
}

TEST(CollectBatch, DeterministicAndWorkerIndependent) {
  const World w = tiny_world();
  const auto bench = make_benchmark(w, 300, 9);
  const std::array<double, kNumMetrics> weights{0.6, 0.1, 0.1, 0.1, 0.1};
  const RewardSpec spec{weights, 0.0, 10.0, &bench};
  auto base = [](const AdCandidate& c) { return c.pctr(); };
  const auto a = collect_batch(w, base, spec, 0.3, 3, 0, 70, 1);
  const auto b = collect_batch(w, base, spec, 0.3, 3, 0, 70, 3);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].action, b[k].action);
    EXPECT_EQ(a[k].reward, b[k].reward);
  }
  const auto c0 = collect_batch(w, base, spec, 0.0, 3, 0, 5);
  const auto c1 = collect_batch(w, base, spec, 0.0, 3, 0, 5);
  for (std::size_t k = 0; k < c0.size(); ++k) EXPECT_EQ(c0[k].action, c1[k].action);
}

TEST(Critic, LossGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 10; ++t) {
    const auto x = random_features(rng, kUserBegin + 2);
    auto log = fixed_state_log(1.5, x, 40, [](double a) { return std::sin(8.0 * a); });
    CriticNet critic = small_critic(x.size(), t);
    critic.set_normalizer(fit_critic_normalizer(log));
    std::vector<double> grad(critic.net().num_params());
    critic_loss_grad(critic, log, grad);
    const auto fd = fd_params(critic.net(), [&] { return critic_loss(critic, log); });
    EXPECT_LE(relative_error(grad, fd), 1e-4);
  }
}

TEST(Critic, PerfectCriticTakesNoStep) {
  std::mt19937_64 rng(22);
  const auto x = random_features(rng, kUserBegin);
  const auto log = fixed_state_log(2.0, x, 20, [](double) { return 0.37; });
  CriticNet critic = small_critic(x.size(), 1);
  critic.set_normalizer(fit_critic_normalizer(log));
  for (double& p : critic.net().params()) p = 0.0;
  critic.net().params().back() = 0.37;
  std::vector<double> grad(critic.net().num_params());
  EXPECT_NEAR(critic_loss_grad(critic, log, grad), 0.0, 1e-30);
  for (double g : grad) EXPECT_NEAR(g, 0.0, 1e-14);
}

TEST(Critic, FullBatchDescentReducesLoss) {
  std::mt19937_64 rng(23);
  const auto x = random_features(rng, kUserBegin);
  const auto log = fixed_state_log(1.0, x, 64, [](double a) { return 3.0 * a - 0.1; });
  CriticNet critic = small_critic(x.size(), 2);
  critic.set_normalizer(fit_critic_normalizer(log));
  OptimizerState st;
  OptimizerConfig opt;
  opt.lr = 1e-3;
  const double before = critic_loss(critic, log);
  for (int k = 0; k < 100; ++k) critic_update(critic, log, st, opt);
  EXPECT_LT(critic_loss(critic, log), before);
}

TEST(Critic, PretrainFitsConstantReward) {
  std::mt19937_64 rng(24);
  const auto x = random_features(rng, kUserBegin);
  const auto log = fixed_state_log(1.0, x, 400, [](double) { return 0.42; });
  CriticNet critic = small_critic(x.size(), 3);
  OptimizerConfig opt;
  opt.lr = 3e-3;
  const auto r = pretrain_critic(critic, log, 200, 64, opt, 1, 200);
  EXPECT_LE(r.validation_mse, 1e-4);
  EXPECT_LE(r.train_mse, 1e-4);
}

TEST(Critic, PretrainFitsLinearReward) {
  std::mt19937_64 rng(25);
  const auto x = random_features(rng, kUserBegin);
  const auto log = fixed_state_log(1.0, x, 512, [](double a) { return 0.2 + 2.0 * a; });
  CriticNet critic = small_critic(x.size(), 4);
  OptimizerConfig opt;
  opt.lr = 3e-3;
  // 125 epochs of 16 minibatches: 2000 steps.
  const auto r = pretrain_critic(critic, log, 125, 29, opt, 2, 125);
  EXPECT_LE(r.train_mse, 1e-3);
}

TEST(Critic, PretrainRejectsEmptyLog) {
  CriticNet critic(kUserBegin);
  EXPECT_THROW(pretrain_critic(critic, std::span<const Experience>{}, 1, 1, {}, 1), Error);
}

TEST(Actor, LossGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(26);
  for (int t = 0; t < 4; ++t) {
    auto g = make_grad_instance(rng);
    std::vector<Experience> batch;
    std::vector<BidState> reg;
    for (int k = 0; k < 6; ++k) {
      Experience e;
      e.features = random_features(rng, g.actor.feature_len());
      e.bid = 0.2 + 0.4 * k;
      batch.push_back(e);
      reg.push_back({e.bid, e.features});
      reg.push_back({3.0 * e.bid, e.features});
    }
    std::vector<double> grad(g.actor.net().num_params());
    actor_loss_grad(g.actor, g.critic, batch, reg, 0.5, 0.3, grad);
    const auto fd = fd_params(g.actor.net(), [&] {
      std::vector<double> scratch(grad.size());
      return actor_loss_grad(g.actor, g.critic, batch, reg, 0.5, 0.3, scratch).total;
    });
    EXPECT_LE(relative_error(grad, fd), 1e-3) << "instance " << t;
  }
}

TEST(Actor, ZeroPenaltiesIsPurePolicyGradient) {
  std::mt19937_64 rng(27);
  auto g = make_grad_instance(rng);
  std::vector<Experience> batch(5);
  for (std::size_t k = 0; k < batch.size(); ++k) {
    batch[k].features = random_features(rng, g.actor.feature_len());
    batch[k].bid = 1.0 + static_cast<double>(k);
  }
  std::vector<BidState> reg{{1.0, batch[0].features}};
  std::vector<double> with_reg(g.actor.net().num_params()), without(with_reg.size()),
      oracle(with_reg.size(), 0.0);
  actor_loss_grad(g.actor, g.critic, batch, reg, 0.0, 0.0, with_reg);
  actor_loss_grad(g.actor, g.critic, batch, {}, 0.0, 0.0, without);
  for (const auto& e : batch) {
    const double pi = g.actor.multiplier(e.bid, e.features);
    const double dq = g.critic.value_and_action_grad(e.bid, e.features, e.bid * pi).second;
    g.actor.accumulate_grad(e.bid, e.features, -dq * e.bid / 5.0, 0.0, oracle);
  }
  EXPECT_EQ(with_reg, without);
  EXPECT_LE(relative_error(without, oracle), 1e-12);
}

TEST(Actor, MonotonePenaltyInactiveWhileActionsGrow) {
  const World w = tiny_world();
  const auto states = sample_states(w, 40, 3);
  NetArchitecture arch;
  arch.hidden = {8};
  BidMultiplierNet actor(w.feature_len(), arch);
  OptimizerConfig opt;
  opt.lr = 1e-2;
  warm_start_actor(actor, states, 200, 64, opt, 1);
  // Q = tanh(normalized log action): strictly increasing in the action.
  CriticNet critic(w.feature_len(), arch);
  std::vector<std::vector<double>> rows;
  for (const auto& s : states)
    rows.push_back(CriticNet::raw_input(s.bid, s.features, s.bid * s.features[kPctr]));
  critic.set_normalizer(AffineNormalizer::fit(rows));
  for (double& p : critic.net().params()) p = 0.0;
  const std::size_t in = w.feature_len() + 2;
  critic.net().params()[in - 1] = 1.0;            // hidden unit 0 <- log action
  critic.net().params()[in * 8 + 8] = 1.0;        // output <- hidden unit 0
  std::vector<Experience> batch;
  for (std::size_t k = 0; k < 64; ++k) {
    Experience e;
    e.bid = states[k].bid;
    e.features = states[k].features;
    batch.push_back(e);
  }
  auto mean_action = [&] {
    double s = 0.0;
    for (const auto& e : batch) s += actor.rank_score(e.bid, e.features);
    return s / static_cast<double>(batch.size());
  };
  const double before = mean_action();
  OptimizerState st;
  OptimizerConfig aopt;
  aopt.lr = 1e-3;
  std::vector<BidState> reg;
  for (const auto& e : batch) reg.push_back({e.bid, e.features});
  for (int k = 0; k < 50; ++k) {
    const ActorLoss l = actor_update(actor, critic, batch, reg, 100.0, 0.0, st, aopt);
    EXPECT_EQ(l.mono_term, 0.0);
    EXPECT_EQ(l.mono_active, 0u);
  }
  EXPECT_GT(mean_action(), before);
}

TEST(WarmStart, MatchesPctrAndIsFlatInBid) {
  const World w = tiny_world();
  const auto states = sample_states(w, 100, 4);
  BidMultiplierNet actor(w.feature_len());
  OptimizerConfig opt;
  opt.lr = 3e-3;
  const double loss = warm_start_actor(actor, states, 600, 128, opt, 2);
  EXPECT_LT(loss, 0.05);
  double elas = 0.0;
  for (std::size_t k = 0; k < 50; ++k) {
    const auto& s = states[k];
    const auto [pi, dpi] = actor.multiplier_and_bid_grad(s.bid, s.features);
    elas += std::abs(s.bid * dpi / pi) / 50.0;
  }
  EXPECT_LT(elas, 0.2);
}

TEST(Train, ZeroIterationsKeepsInitialActor) {
  const World w = tiny_world();
  TrainConfig cfg = tiny_train();
  cfg.iterations = 0;
  const auto r = train(w, cfg);
  ASSERT_EQ(r.report.size(), 1u);
  EXPECT_EQ(r.report[0].iteration, 0u);
  EXPECT_EQ(r.best_iteration, 0u);
  // The returned actor is the one scored at iteration 0.
  const RewardSpec spec = reward_spec(cfg, r.benchmark);
  const HeldOut h = held_out_objective(w, r.actor, spec, cfg.eval_seed, cfg.eval_rounds, 1);
  EXPECT_EQ(h.f, r.report[0].eval_f);
  EXPECT_EQ(h.reward, r.report[0].eval_reward);
}

TEST(Train, ReproducibleAndWorkerIndependent) {
  const World w = tiny_world();
  TrainConfig cfg = tiny_train();
  const auto a = train(w, cfg);
  const auto b = train(w, cfg);
  cfg.workers = 3;
  const auto c = train(w, cfg);
  std::ostringstream ra, rb, rc;
  write_train_report_csv(ra, a.report);
  write_train_report_csv(rb, b.report);
  write_train_report_csv(rc, c.report);
  EXPECT_EQ(ra.str(), rb.str());
  EXPECT_EQ(ra.str(), rc.str());
  EXPECT_EQ(a.report.size(), 3u);  // iterations 0, 3, 6
  EXPECT_EQ(std::vector<double>(a.actor.net().params().begin(), a.actor.net().params().end()),
            std::vector<double>(c.actor.net().params().begin(), c.actor.net().params().end()));
}

TEST(Train, ReportCsvHeader) {
  std::ostringstream os;
  write_train_report_csv(os, {});
  EXPECT_EQ(os.str().substr(0, 28), "iteration,noise_std,critic_l");
}
