#pragma once

// Synthetic market and feedback oracle. A World is a fixed population of
// advertisers with hidden response rates; every round draws a user, fresh
// valuations and noisy predictions, runs an auction, and realizes (or takes
// the expectation of) clicks, add-to-carts and orders.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "deepgsp/auction.hpp"
#include "deepgsp/error.hpp"
#include "deepgsp/parallel.hpp"

namespace deepgsp {

// --- configuration ------------------------------------------------------------

struct BetaParams {
  double a = 1.0;
  double b = 1.0;
};

struct ValuationConfig {
  double mu_mean = 0.3;    // mean of per-advertiser log-valuation location
  double mu_spread = 0.3;  // spread of the location across advertisers
  double sigma = 0.4;      // per-round log-normal scale
};

struct ResponseConfig {
  BetaParams ctr{2.0, 38.0};    // base click-through rate
  BetaParams cart{2.0, 8.0};    // add-to-cart given click
  BetaParams order{2.0, 18.0};  // order given click
  double price_mu = 3.0;        // product price ~ LogNormal(mu, sigma)
  double price_sigma = 0.5;
  // Strength of the user x category interaction on the CTR.
  double user_affinity = 0.5;
};

struct PredictionConfig {
  double noise = 0.3;       // nu: log-normal noise scale on predicted rates
  double bias_share = 0.5;  // fraction of the noise that is a per-ad bias
};

enum class BiddingMode { kTruthful, kShaded };

struct WorldConfig {
  std::size_t advertisers = 10;
  std::size_t slots = 3;
  std::vector<double> slot_factors{1.0, 0.75, 0.55};
  std::size_t user_features = 4;
  std::size_t categories = 4;
  ValuationConfig valuation;
  ResponseConfig response;
  PredictionConfig prediction;
  BiddingMode bidding = BiddingMode::kTruthful;
  double shade_factor = 1.0;
  bool identical_advertisers = false;
  double normalizer_headroom = 2.0;
  std::size_t calibration_rounds = 2000;
  std::uint64_t seed = 1;

  std::size_t feature_len() const { return kUserBegin + user_features; }

  void collect_problems(Problems& p) const {
    p.check(advertisers >= 1, "world.advertisers must be >= 1");
    p.check(slots >= 1 && slots <= advertisers, "world.slots must be in [1, advertisers]");
    p.check(slot_factors.size() == slots, "world.slot_factors must have one entry per slot");
    for (std::size_t k = 0; k < std::min(slots, slot_factors.size()); ++k) {
      p.check(slot_factors[k] > 0.0 && slot_factors[k] <= 1.0,
              "world.slot_factors entries must lie in (0,1]");
      if (k > 0)
        p.check(slot_factors[k] <= slot_factors[k - 1],
                "world.slot_factors must be non-increasing");
    }
    p.check(categories >= 1, "world.categories must be >= 1");
    for (const BetaParams* b : {&response.ctr, &response.cart, &response.order})
      p.check(b->a > 0.0 && b->b > 0.0, "beta parameters must be positive");
    p.check(valuation.sigma >= 0.0 && valuation.mu_spread >= 0.0,
            "valuation scales must be nonnegative");
    p.check(response.price_sigma >= 0.0, "response.price_sigma must be nonnegative");
    p.check(prediction.noise >= 0.0, "prediction.noise must be nonnegative");
    p.check(prediction.bias_share >= 0.0 && prediction.bias_share <= 1.0,
            "prediction.bias_share must lie in [0,1]");
    p.check(shade_factor > 0.0, "bidding.shade_factor must be positive");
    p.check(normalizer_headroom > 0.0, "world.normalizer_headroom must be positive");
    p.check(calibration_rounds >= 1, "world.calibration_rounds must be >= 1");
  }

  void validate() const {
    Problems p;
    collect_problems(p);
    p.raise_if_any();
  }
};

// --- world --------------------------------------------------------------------

struct AdvertiserProfile {
  std::string ad_id;
  std::size_t category = 0;
  double base_ctr = 0.0;
  double cart_rate = 0.0;   // P(cart | click)
  double order_rate = 0.0;  // P(order | click)
  double product_price = 0.0;
  double value_mu = 0.0;
  std::array<double, 3> prediction_bias{};  // per-ad bias for pCTR, pACR, pCVR
};

enum Metric : std::size_t { kRpm = 0, kCtr = 1, kAcr = 2, kCvr = 3, kGpm = 4 };
inline constexpr std::size_t kNumMetrics = 5;
inline constexpr std::array<const char*, kNumMetrics> kMetricNames{"RPM", "CTR", "ACR",
                                                                  "CVR", "GPM"};

struct MetricNormalizers {
  std::array<double, kNumMetrics> scale{1.0, 1.0, 1.0, 1.0, 1.0};
};

struct World {
  WorldConfig config;
  std::vector<AdvertiserProfile> advertisers;
  MetricNormalizers normalizers;

  std::size_t feature_len() const { return config.feature_len(); }

  // Same advertisers and normalizers, one slot.
  World single_slot() const {
    World w = *this;
    w.config.slots = 1;
    w.config.slot_factors.resize(1);
    return w;
  }
};

namespace detail {

inline constexpr std::uint64_t kProfileStream = 11;
inline constexpr std::uint64_t kRequestStream = 12;
inline constexpr std::uint64_t kFeedbackStream = 13;
inline constexpr std::uint64_t kCalibrationSeedSalt = 0x9e3779b97f4a7c15ULL;

inline double sample_beta(std::mt19937_64& rng, const BetaParams& p) {
  std::gamma_distribution<double> ga(p.a, 1.0), gb(p.b, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  return x / (x + y);
}

inline double clip01(double x) { return std::clamp(x, 0.0, 1.0); }

}  // namespace detail

// Draws the advertiser population; normalizers are left at 1.
inline World make_world_uncalibrated(const WorldConfig& cfg) {
  cfg.validate();
  World w;
  w.config = cfg;
  auto rng = stream_rng(cfg.seed, detail::kProfileStream, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::lognormal_distribution<double> price(cfg.response.price_mu, cfg.response.price_sigma);
  for (std::size_t i = 0; i < cfg.advertisers; ++i) {
    AdvertiserProfile p;
    char id[16];
    std::snprintf(id, sizeof id, "ad%03zu", i);
    p.ad_id = id;
    p.category = i % cfg.categories;
    p.base_ctr = detail::sample_beta(rng, cfg.response.ctr);
    p.cart_rate = detail::sample_beta(rng, cfg.response.cart);
    p.order_rate = detail::sample_beta(rng, cfg.response.order);
    p.product_price = price(rng);
    p.value_mu = cfg.valuation.mu_mean + cfg.valuation.mu_spread * normal(rng);
    for (auto& b : p.prediction_bias) b = normal(rng);
    w.advertisers.push_back(p);
  }
  if (cfg.identical_advertisers) {
    for (std::size_t i = 1; i < w.advertisers.size(); ++i) {
      const std::string id = w.advertisers[i].ad_id;
      w.advertisers[i] = w.advertisers[0];
      w.advertisers[i].ad_id = id;
    }
  }
  return w;
}

// --- requests -----------------------------------------------------------------

struct GroundTruth {
  double value = 0.0;
  double ctr = 0.0;
  double acr = 0.0;
  double cvr = 0.0;
  double product_price = 0.0;
};

// A request plus the hidden truth needed by the feedback oracle. Candidate i
// is always advertiser i.
struct SampledRequest {
  AuctionRequest request;
  std::vector<GroundTruth> truth;
};

inline SampledRequest sample_request(const World& world, std::mt19937_64& rng) {
  const WorldConfig& cfg = world.config;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SampledRequest out;
  out.request.slots = cfg.slots;
  out.request.slot_ctr_factors = cfg.slot_factors;
  std::vector<double> user(cfg.user_features);
  for (auto& u : user) u = normal(rng);

  const double nu = cfg.prediction.noise;
  const double rho = cfg.prediction.bias_share;
  const double kappa = cfg.response.user_affinity;
  out.request.candidates.reserve(world.advertisers.size());
  out.truth.reserve(world.advertisers.size());
  for (const auto& adv : world.advertisers) {
    GroundTruth t;
    t.value = std::exp(adv.value_mu + cfg.valuation.sigma * normal(rng));
    const double u_cat = cfg.user_features == 0 ? 0.0 : user[adv.category % cfg.user_features];
    const double affinity = std::exp(kappa * u_cat - 0.5 * kappa * kappa);
    t.ctr = detail::clip01(adv.base_ctr * affinity);
    t.acr = t.ctr * adv.cart_rate;
    t.cvr = t.ctr * adv.order_rate;
    t.product_price = adv.product_price;

    std::array<double, 3> predicted{t.ctr, t.acr, t.cvr};
    for (std::size_t k = 0; k < 3; ++k) {
      const double eps = normal(rng);
      if (nu > 0.0) {
        const double z = rho * adv.prediction_bias[k] + std::sqrt(1.0 - rho * rho) * eps;
        predicted[k] = detail::clip01(predicted[k] * std::exp(nu * z - 0.5 * nu * nu));
      }
    }

    AdCandidate c;
    c.ad_id = adv.ad_id;
    c.value = t.value;
    c.bid = cfg.bidding == BiddingMode::kTruthful ? t.value : cfg.shade_factor * t.value;
    c.features.resize(cfg.feature_len());
    c.features[kPctr] = predicted[0];
    c.features[kPacr] = predicted[1];
    c.features[kPcvr] = predicted[2];
    c.features[kProductPrice] = adv.product_price;
    c.features[kBudgetRemaining] = unit(rng);
    c.features[kCategory] = static_cast<double>(adv.category);
    std::copy(user.begin(), user.end(), c.features.begin() + kUserBegin);
    out.request.candidates.push_back(std::move(c));
    out.truth.push_back(t);
  }
  return out;
}

// --- feedback -----------------------------------------------------------------

enum class FeedbackMode {
  kSampled,   // Bernoulli draws
  kExpected,  // probabilities in place of draws (same expectations)
};

struct FeedbackRecord {
  std::uint64_t round = 0;
  std::string ad_id;
  std::size_t candidate = 0;
  std::size_t slot = 0;
  double bid = 0.0;
  double value = 0.0;
  double pctr = 0.0;
  double score = 0.0;
  double ppc = 0.0;
  double clicked = 0.0;
  double carted = 0.0;
  double ordered = 0.0;
  double gmv = 0.0;

  double payment() const { return clicked * ppc; }
  double utility() const { return clicked * (value - ppc); }
};

inline std::vector<FeedbackRecord> simulate_feedback(const SampledRequest& sr,
                                                     const AuctionOutcome& outcome,
                                                     std::mt19937_64& rng,
                                                     FeedbackMode mode = FeedbackMode::kSampled,
                                                     std::uint64_t round = 0) {
  const auto& beta = sr.request.slot_ctr_factors;
  std::vector<FeedbackRecord> recs;
  recs.reserve(outcome.winners.size());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t pos = 0; pos < outcome.winners.size(); ++pos) {
    const Winner& w = outcome.winners[pos];
    require(w.slot >= 1 && w.slot <= beta.size(), "winner slot outside slot factors");
    const GroundTruth& t = sr.truth[w.candidate];
    const AdCandidate& c = sr.request.candidates[w.candidate];
    const double p_click = beta[w.slot - 1] * t.ctr;
    const double p_cart = t.ctr > 0.0 ? std::min(1.0, t.acr / t.ctr) : 0.0;
    const double p_order = t.ctr > 0.0 ? std::min(1.0, t.cvr / t.ctr) : 0.0;

    FeedbackRecord r;
    r.round = round;
    r.ad_id = w.ad_id;
    r.candidate = w.candidate;
    r.slot = w.slot;
    r.bid = c.bid;
    r.value = c.value;
    r.pctr = c.pctr();
    r.score = outcome.ranking[pos].score;
    r.ppc = w.price_per_click;
    if (mode == FeedbackMode::kExpected) {
      r.clicked = p_click;
      r.carted = p_click * p_cart;
      r.ordered = p_click * p_order;
    } else {
      // Three draws per winner regardless of outcome keeps streams aligned.
      const double u_click = unit(rng), u_cart = unit(rng), u_order = unit(rng);
      r.clicked = u_click < p_click ? 1.0 : 0.0;
      r.carted = r.clicked > 0.0 && u_cart < p_cart ? 1.0 : 0.0;
      r.ordered = r.clicked > 0.0 && u_order < p_order ? 1.0 : 0.0;
    }
    r.gmv = r.ordered * t.product_price;
    recs.push_back(std::move(r));
  }
  return recs;
}

// --- metrics ------------------------------------------------------------------

struct MetricsAccumulator {
  double impressions = 0.0;
  double clicks = 0.0;
  double carts = 0.0;
  double orders = 0.0;
  double revenue = 0.0;
  double gmv = 0.0;

  void add(const FeedbackRecord& r) {
    impressions += 1.0;
    clicks += r.clicked;
    carts += r.carted;
    orders += r.ordered;
    revenue += r.payment();
    gmv += r.gmv;
  }
  MetricsAccumulator& operator+=(const MetricsAccumulator& o) {
    impressions += o.impressions;
    clicks += o.clicks;
    carts += o.carts;
    orders += o.orders;
    revenue += o.revenue;
    gmv += o.gmv;
    return *this;
  }
};

struct MetricsRecord {
  std::array<double, kNumMetrics> raw{};         // RPM, CTR, ACR, CVR, GPM
  std::array<double, kNumMetrics> scaled{};      // raw / normalizer
  std::array<double, kNumMetrics> normalized{};  // scaled, clamped to [0,1]
  double impressions = 0.0;
  double clicks = 0.0;
  double carts = 0.0;
  double orders = 0.0;
  bool empty = false;    // zero impressions: all metrics defined as 0
  bool clamped = false;  // some scaled metric fell outside [0,1]
};

inline MetricsRecord compute_metrics(const MetricsAccumulator& acc,
                                     const MetricNormalizers& norm = {}) {
  MetricsRecord m;
  m.impressions = acc.impressions;
  m.clicks = acc.clicks;
  m.carts = acc.carts;
  m.orders = acc.orders;
  if (acc.impressions <= 0.0) {
    m.empty = true;
    return m;
  }
  const double imp = acc.impressions;
  m.raw[kRpm] = acc.revenue / imp * 1000.0;
  m.raw[kCtr] = acc.clicks / imp;
  m.raw[kAcr] = acc.carts / imp;
  m.raw[kCvr] = acc.orders / imp;
  m.raw[kGpm] = acc.gmv / imp * 1000.0;
  for (std::size_t j = 0; j < kNumMetrics; ++j) {
    m.scaled[j] = m.raw[j] / norm.scale[j];
    m.normalized[j] = std::clamp(m.scaled[j], 0.0, 1.0);
    if (m.normalized[j] != m.scaled[j]) m.clamped = true;
  }
  return m;
}

inline MetricsRecord compute_metrics(std::span<const FeedbackRecord> recs,
                                     const MetricNormalizers& norm = {}) {
  MetricsAccumulator acc;
  for (const auto& r : recs) acc.add(r);
  return compute_metrics(acc, norm);
}

inline void collect_weight_problems(std::span<const double> w, Problems& p) {
  if (w.size() != kNumMetrics) {
    p.add("metric weights need exactly 5 entries (RPM,CTR,ACR,CVR,GPM)");
    return;
  }
  double sum = 0.0;
  bool ok = true;
  for (double x : w) {
    ok = ok && std::isfinite(x) && x >= 0.0;
    sum += x;
  }
  p.check(ok, "metric weights must be finite and nonnegative");
  p.check(!ok || std::abs(sum - 1.0) <= 1e-9, "metric weights must sum to 1");
}

inline void validate_weights(std::span<const double> w) {
  Problems p;
  collect_weight_problems(w, p);
  p.raise_if_any();
}

inline double scalarize(std::span<const double> values, std::span<const double> w) {
  require(values.size() == w.size(), "scalarize: weight / metric length mismatch");
  double f = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) f += w[j] * values[j];
  return f;
}

inline double scalarize(const MetricsRecord& m, std::span<const double> w) {
  return scalarize(m.normalized, w);
}

inline double advertiser_utility(std::span<const FeedbackRecord> recs) {
  double u = 0.0;
  for (const auto& r : recs) u += r.utility();
  return u;
}

// --- rounds and evaluation ----------------------------------------------------

struct RoundResult {
  SampledRequest sampled;
  AuctionOutcome outcome;
  std::vector<FeedbackRecord> feedback;
};

inline SampledRequest sample_round_request(const World& world, std::uint64_t seed,
                                           std::uint64_t round) {
  auto rng = stream_rng(seed, detail::kRequestStream, round);
  return sample_request(world, rng);
}

template <RankScorer S>
RoundResult simulate_round(const World& world, const S& scorer, std::uint64_t seed,
                           std::uint64_t round, FeedbackMode mode,
                           Pricing pricing = Pricing::kMultiplier,
                           const PricingConfig& pcfg = {}) {
  RoundResult r;
  r.sampled = sample_round_request(world, seed, round);
  r.outcome = run_auction(r.sampled.request, scorer, pricing, pcfg);
  auto fb_rng = stream_rng(seed, detail::kFeedbackStream, round);
  r.feedback = simulate_feedback(r.sampled, r.outcome, fb_rng, mode, round);
  return r;
}

struct EvalOptions {
  std::size_t rounds = 2000;
  std::uint64_t seed = 1;
  FeedbackMode mode = FeedbackMode::kExpected;
  Pricing pricing = Pricing::kMultiplier;
  PricingConfig pricing_config{};
  std::size_t workers = 1;
};

struct EvalResult {
  MetricsAccumulator totals;
  MetricsRecord metrics;
  std::vector<double> mean_utility;  // per advertiser, per round
  double mean_ppc = 0.0;             // over winners
  std::size_t rounds = 0;
};

namespace detail {
inline constexpr std::size_t kEvalChunk = 256;
}

// Chunked so the floating-point summation order is fixed regardless of the
// worker count.
template <RankScorer S>
EvalResult evaluate(const World& world, const S& scorer, const EvalOptions& opt) {
  require(opt.rounds >= 1, "evaluation needs at least one round");
  const std::size_t n_adv = world.advertisers.size();
  const std::size_t n_chunks = (opt.rounds + detail::kEvalChunk - 1) / detail::kEvalChunk;
  struct Partial {
    MetricsAccumulator acc;
    std::vector<double> utility;
    double ppc_sum = 0.0;
    std::size_t winners = 0;
  };
  std::vector<Partial> parts(n_chunks);
  parallel_chunks(n_chunks, opt.workers, [&](std::size_t chunk) {
    Partial& p = parts[chunk];
    p.utility.assign(n_adv, 0.0);
    const std::size_t lo = chunk * detail::kEvalChunk;
    const std::size_t hi = std::min(opt.rounds, lo + detail::kEvalChunk);
    for (std::size_t r = lo; r < hi; ++r) {
      const RoundResult rr =
          simulate_round(world, scorer, opt.seed, r, opt.mode, opt.pricing, opt.pricing_config);
      for (const auto& rec : rr.feedback) {
        p.acc.add(rec);
        p.utility[rec.candidate] += rec.utility();
        p.ppc_sum += rec.ppc;
        ++p.winners;
      }
    }
  });
  EvalResult out;
  out.rounds = opt.rounds;
  out.mean_utility.assign(n_adv, 0.0);
  double ppc_sum = 0.0;
  std::size_t winners = 0;
  for (const auto& p : parts) {
    out.totals += p.acc;
    for (std::size_t i = 0; i < n_adv; ++i) out.mean_utility[i] += p.utility[i];
    ppc_sum += p.ppc_sum;
    winners += p.winners;
  }
  for (auto& u : out.mean_utility) u /= static_cast<double>(opt.rounds);
  out.mean_ppc = winners ? ppc_sum / static_cast<double>(winners) : 0.0;
  out.metrics = compute_metrics(out.totals, world.normalizers);
  return out;
}

// Mean per-round utility of each advertiser under a benchmark mechanism.
template <RankScorer S>
std::vector<double> benchmark_utilities(const World& world, const S& benchmark,
                                        std::size_t rounds, std::uint64_t seed,
                                        FeedbackMode mode = FeedbackMode::kExpected,
                                        std::size_t workers = 1) {
  require(rounds >= 1, "benchmark needs at least one round");
  EvalOptions opt;
  opt.rounds = rounds;
  opt.seed = seed;
  opt.mode = mode;
  opt.workers = workers;
  return evaluate(world, benchmark, opt).mean_utility;
}

// Draws the population and fixes the metric normalizers at `headroom` times
// the benchmark (GSP, sigma = 1) metrics on a calibration run.
inline World make_world(const WorldConfig& cfg) {
  World w = make_world_uncalibrated(cfg);
  EvalOptions opt;
  opt.rounds = cfg.calibration_rounds;
  opt.seed = cfg.seed ^ detail::kCalibrationSeedSalt;
  const EvalResult cal = evaluate(w, GspScorer{1.0}, opt);
  for (std::size_t j = 0; j < kNumMetrics; ++j) {
    const double base = cal.metrics.raw[j];
    w.normalizers.scale[j] = base > 0.0 ? cfg.normalizer_headroom * base : 1.0;
  }
  return w;
}

inline void write_world_csv(std::ostream& os, const World& w) {
  os << "ad_id,category,base_ctr,cart_rate,order_rate,product_price,value_mu,"
        "bias_ctr,bias_acr,bias_cvr\n";
  char buf[320];
  for (const auto& a : w.advertisers) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g\n",
                  a.ad_id.c_str(), a.category, a.base_ctr, a.cart_rate, a.order_rate,
                  a.product_price, a.value_mu, a.prediction_bias[0], a.prediction_bias[1],
                  a.prediction_bias[2]);
    os << buf;
  }
}

inline void write_normalizers_csv(std::ostream& os, const MetricNormalizers& n) {
  os << "metric,scale\n";
  for (std::size_t j = 0; j < kNumMetrics; ++j) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s,%.10g\n", kMetricNames[j], n.scale[j]);
    os << buf;
  }
}

// --- episode log --------------------------------------------------------------

inline void write_episode_csv_header(std::ostream& os) {
  os << "round,ad_id,slot,bid,value,pctr,score,ppc,clicked,carted,ordered,gmv\n";
}

inline void write_episode_csv_rows(std::ostream& os, std::span<const FeedbackRecord> recs) {
  for (const auto& r : recs) {
    os << r.round << ',' << r.ad_id << ',' << r.slot << ',' << r.bid << ',' << r.value << ','
       << r.pctr << ',' << r.score << ',' << r.ppc << ',' << r.clicked << ',' << r.carted
       << ',' << r.ordered << ',' << r.gmv << '\n';
  }
}

}  // namespace deepgsp
