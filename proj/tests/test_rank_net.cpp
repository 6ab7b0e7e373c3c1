#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "deepgsp/rank_net.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace deepgsp;
using namespace deepgsp::testing;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected a deepgsp::Error";
  return ErrorKind::kValidation;
}

std::vector<BidState> random_states(std::mt19937_64& rng, std::size_t n, std::size_t len) {
  std::uniform_real_distribution<double> u(0.1, 6.0);
  std::vector<BidState> s;
  for (std::size_t i = 0; i < n; ++i) s.push_back({u(rng), random_features(rng, len)});
  return s;
}

}  // namespace

TEST(Activations, Softplus) {
  EXPECT_NEAR(detail::softplus(0.0), std::log(2.0), 1e-15);
  EXPECT_NEAR(detail::softplus(50.0), 50.0, 1e-12);
  EXPECT_GT(detail::softplus(-50.0), 0.0);
  EXPECT_TRUE(std::isfinite(detail::softplus(800.0)));
}

TEST(Mlp, LayoutAndZeroWeights) {
  Mlp net({3, 4, 1}, Activation::kTanh, Activation::kIdentity);
  EXPECT_EQ(net.num_params(), 3u * 4u + 4u + 4u + 1u);
  EXPECT_EQ(net.input_dim(), 3u);
  EXPECT_EQ(net.dims(), (std::vector<std::size_t>{3, 4, 1}));
  auto p = net.params();
  p.back() = 0.25;  // output bias
  const std::vector<double> in{1.0, -2.0, 3.0};
  EXPECT_DOUBLE_EQ(net.evaluate(in), 0.25);
}

TEST(Mlp, HandComputedForward) {
  // One hidden unit: y = 2 * tanh(0.5 * x0 - x1 + 0.1) - 0.3
  Mlp net({2, 1, 1}, Activation::kTanh, Activation::kIdentity);
  auto p = net.params();
  p[0] = 0.5;
  p[1] = -1.0;
  p[2] = 0.1;
  p[3] = 2.0;
  p[4] = -0.3;
  const std::vector<double> in{0.8, 0.2};
  EXPECT_NEAR(net.evaluate(in), 2.0 * std::tanh(0.4 - 0.2 + 0.1) - 0.3, 1e-15);
}

TEST(Mlp, RejectsBadShapes) {
  EXPECT_EQ(kind_of([] { Mlp({3}, Activation::kTanh, Activation::kIdentity); }),
            ErrorKind::kValidation);
  EXPECT_EQ(kind_of([] { Mlp({3, 0, 1}, Activation::kTanh, Activation::kIdentity); }),
            ErrorKind::kValidation);
  EXPECT_EQ(kind_of([] { Mlp({3, 2}, Activation::kTanh, Activation::kIdentity); }),
            ErrorKind::kValidation);
}

TEST(Normalizer, FitAndDegenerateColumn) {
  const auto n = AffineNormalizer::fit({{1.0, 5.0}, {3.0, 5.0}});
  EXPECT_DOUBLE_EQ(n.mean[0], 2.0);
  EXPECT_DOUBLE_EQ(n.scale[0], 1.0);
  EXPECT_DOUBLE_EQ(n.mean[1], 5.0);
  EXPECT_DOUBLE_EQ(n.scale[1], 1.0);
  EXPECT_EQ(kind_of([] { AffineNormalizer::fit({}); }), ErrorKind::kValidation);
  EXPECT_EQ(kind_of([] { AffineNormalizer::fit({{1.0}, {1.0, 2.0}}); }), ErrorKind::kValidation);
}

TEST(StateVector, LogScalesPositiveColumns) {
  std::vector<double> x(kUserBegin + 1, 0.0);
  x[kPctr] = 0.1;
  x[kBudgetRemaining] = 0.5;
  x[kUserBegin] = -0.7;
  const auto s = state_vector(2.0, x);
  ASSERT_EQ(s.size(), x.size() + 1);
  EXPECT_NEAR(s[0], std::log(2.0 + detail::kLogFloor), 1e-15);
  EXPECT_NEAR(s[1 + kPctr], std::log(0.1 + detail::kLogFloor), 1e-15);
  EXPECT_NEAR(s[1 + kPacr], std::log(detail::kLogFloor), 1e-12);
  EXPECT_DOUBLE_EQ(s[1 + kBudgetRemaining], 0.5);
  EXPECT_DOUBLE_EQ(s[1 + kUserBegin], -0.7);
}

TEST(BidMultiplierNet, PositiveAndRequiresNormalizer) {
  std::mt19937_64 rng(1);
  BidMultiplierNet raw(kUserBegin);
  const auto x = random_features(rng, kUserBegin);
  EXPECT_EQ(kind_of([&] { raw.multiplier(1.0, x); }), ErrorKind::kValidation);
  for (int t = 0; t < 20; ++t) {
    auto g = make_grad_instance(rng);
    for (double b : {0.0, 0.01, 1.0, 100.0}) {
      const double pi = g.actor.multiplier(b, g.features);
      EXPECT_GT(pi, 0.0);
      EXPECT_DOUBLE_EQ(g.actor.rank_score(b, g.features), b * pi);
    }
  }
}

TEST(BidMultiplierNet, ScorerUsesNetwork) {
  std::mt19937_64 rng(2);
  auto g = make_grad_instance(rng, kUserBegin + 2);
  AdCandidate c = make_candidate("a", 1.7, g.features[kPctr], kUserBegin + 2);
  c.features = g.features;
  const DeepGspScorer scorer{&g.actor};
  const auto e = scorer.entry(c);
  EXPECT_DOUBLE_EQ(e.multiplier, g.actor.multiplier(1.7, g.features));
  EXPECT_DOUBLE_EQ(e.score, 1.7 * e.multiplier);
  EXPECT_DOUBLE_EQ(scorer.score_at(c, 0.9), g.actor.rank_score(0.9, g.features));
}

TEST(Gradients, MatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 100; ++t) {
    auto g = make_grad_instance(rng);
    const auto r = check_gradients(g);
    EXPECT_LE(r.actor_params, 1e-4) << "instance " << t;
    EXPECT_LE(r.actor_mixed_params, 1e-4) << "instance " << t;
    EXPECT_LE(r.actor_bid, 1e-4) << "instance " << t;
    EXPECT_LE(r.critic_params, 1e-4) << "instance " << t;
    EXPECT_LE(r.critic_action, 1e-4) << "instance " << t;
  }
}

TEST(Gradients, InputAdjointMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  Mlp net({5, 8, 6, 1}, Activation::kTanh, Activation::kSoftplus);
  net.init_glorot(rng);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> in(5);
  for (double& v : in) v = n(rng);
  Mlp::Tape tape;
  net.forward(in, tape);
  std::vector<double> adj(5, 0.0);
  net.backward(tape, 1.0, 0.0, {}, adj);
  for (std::size_t j = 0; j < in.size(); ++j) {
    const double fd = fd_scalar(
        [&](double v) {
          auto x = in;
          x[j] = v;
          return net.evaluate(x);
        },
        in[j]);
    EXPECT_LE(relative_error(adj[j], fd, 1e-8), 1e-4) << "input " << j;
  }
}

TEST(Penalties, MonoPenaltyGradient) {
  std::mt19937_64 rng(5);
  int with_active = 0;
  for (int t = 0; t < 30; ++t) {
    auto g = make_grad_instance(rng);
    // Large weights make the score non-monotone somewhere.
    for (double& w : g.actor.net().params()) w *= 3.0;
    const auto states = random_states(rng, 16, g.actor.feature_len());
    const auto r = mono_penalty(states, g.actor);
    if (r.active == 0) {
      EXPECT_EQ(r.loss, 0.0);
      continue;
    }
    ++with_active;
    const auto fd =
        fd_params(g.actor.net(), [&] { return mono_penalty(states, g.actor).loss; }, 1e-6);
    EXPECT_LE(relative_error(r.grad, fd), 1e-4) << "instance " << t;
  }
  EXPECT_GT(with_active, 0);
}

TEST(Penalties, ElasticityPenaltyGradient) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 30; ++t) {
    auto g = make_grad_instance(rng);
    const auto states = random_states(rng, 16, g.actor.feature_len());
    const auto r = elasticity_penalty(states, g.actor);
    double oracle = 0.0;
    for (const auto& s : states) {
      const double pi = g.actor.multiplier(s.bid, s.features);
      const double dpi =
          fd_scalar([&](double b) { return g.actor.multiplier(b, s.features); }, s.bid);
      oracle += (s.bid * dpi / pi) * (s.bid * dpi / pi);
    }
    EXPECT_LE(relative_error(r.loss, oracle), 1e-6);
    const auto fd =
        fd_params(g.actor.net(), [&] { return elasticity_penalty(states, g.actor).loss; });
    EXPECT_LE(relative_error(r.grad, fd), 1e-4) << "instance " << t;
  }
}

TEST(Penalties, ConstantMultiplierIsFlat) {
  std::mt19937_64 rng(7);
  auto g = make_grad_instance(rng);
  for (double& w : g.actor.net().params()) w = 0.0;
  const auto states = random_states(rng, 32, g.actor.feature_len());
  const auto mono = mono_penalty(states, g.actor);
  const auto elas = elasticity_penalty(states, g.actor);
  EXPECT_EQ(mono.loss, 0.0);
  EXPECT_EQ(mono.active, 0u);
  EXPECT_EQ(elas.loss, 0.0);
  EXPECT_EQ(kind_of([&] { mono_penalty({}, g.actor); }), ErrorKind::kValidation);
}

TEST(Optimizer, SgdStep) {
  std::vector<double> p{1.0, -2.0};
  const std::vector<double> g{0.5, -1.0};
  OptimizerState st;
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::kSgd;
  cfg.lr = 0.1;
  sgd_step(p, g, st, cfg);
  EXPECT_DOUBLE_EQ(p[0], 0.95);
  EXPECT_DOUBLE_EQ(p[1], -1.9);
}

TEST(Optimizer, AdamFirstStepMovesByLearningRate) {
  std::vector<double> p{1.0, -2.0, 0.0};
  const std::vector<double> g{0.5, -3.0, 1e-3};
  OptimizerState st;
  OptimizerConfig cfg;
  cfg.lr = 0.01;
  sgd_step(p, g, st, cfg);
  EXPECT_NEAR(p[0], 0.99, 1e-8);
  EXPECT_NEAR(p[1], -1.99, 1e-8);
  EXPECT_NEAR(p[2], -0.01, 1e-7);
  EXPECT_EQ(st.step, 1);
}

TEST(Optimizer, ClipsGradientNorm) {
  std::vector<double> p{0.0, 0.0};
  const std::vector<double> g{3.0, 4.0};
  OptimizerState st;
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::kSgd;
  cfg.lr = 1.0;
  cfg.max_grad_norm = 1.0;
  sgd_step(p, g, st, cfg);
  EXPECT_NEAR(p[0], -0.6, 1e-15);
  EXPECT_NEAR(p[1], -0.8, 1e-15);
}

TEST(Optimizer, NonFiniteGradientLeavesParamsUntouched) {
  std::vector<double> p{1.0, 2.0};
  const std::vector<double> g{0.1, std::nan("")};
  OptimizerState st;
  EXPECT_EQ(kind_of([&] { sgd_step(p, g, st, {}); }), ErrorKind::kNumerical);
  EXPECT_EQ(p, (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(st.step, 0);
}

TEST(Checkpoint, ActorRoundTrip) {
  std::mt19937_64 rng(8);
  auto g = make_grad_instance(rng);
  std::stringstream ss;
  save_actor(ss, g.actor);
  const auto back = load_actor(ss);
  ASSERT_EQ(back.net().num_params(), g.actor.net().num_params());
  for (int t = 0; t < 20; ++t) {
    const auto x = random_features(rng, g.actor.feature_len());
    const double b = 0.1 + 0.3 * t;
    EXPECT_EQ(back.multiplier(b, x), g.actor.multiplier(b, x));
  }
}

TEST(Checkpoint, CriticRoundTripAndRoleCheck) {
  std::mt19937_64 rng(9);
  auto g = make_grad_instance(rng);
  std::stringstream ss;
  save_critic(ss, g.critic);
  const std::string bytes = ss.str();
  std::stringstream in(bytes);
  const auto back = load_critic(in);
  EXPECT_EQ(back.value(1.2, g.features, 0.3), g.critic.value(1.2, g.features, 0.3));
  std::stringstream wrong(bytes);
  EXPECT_EQ(kind_of([&] { load_actor(wrong); }), ErrorKind::kIo);
}

TEST(Checkpoint, CorruptInputIsAnIoError) {
  std::mt19937_64 rng(10);
  auto g = make_grad_instance(rng);
  std::stringstream ss;
  save_actor(ss, g.actor);
  std::string bytes = ss.str();
  std::stringstream truncated(bytes.substr(0, bytes.size() / 2));
  EXPECT_EQ(kind_of([&] { load_actor(truncated); }), ErrorKind::kIo);
  bytes[0] = 'X';
  std::stringstream bad_magic(bytes);
  EXPECT_EQ(kind_of([&] { load_actor(bad_magic); }), ErrorKind::kIo);
  EXPECT_EQ(kind_of([] { load_actor(std::string("/nonexistent/actor.bin")); }), ErrorKind::kIo);
}
