#pragma once

// Mechanism-agnostic auction engine: rank scoring, top-K allocation, and
// per-click pricing for GSP, uGSP, fixed-score and learned (Deep GSP) rank
// functions.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "deepgsp/error.hpp"

namespace deepgsp {

// Layout of AdCandidate::features. User features follow kUserBegin.
enum FeatureIndex : std::size_t {
  kPctr = 0,
  kPacr = 1,
  kPcvr = 2,
  kProductPrice = 3,
  kBudgetRemaining = 4,
  kCategory = 5,
  kUserBegin = 6,
};

struct AdCandidate {
  std::string ad_id;
  double bid = 0.0;
  // Private valuation per click; only the simulator knows it.
  double value = 0.0;
  std::vector<double> features;

  double pctr() const { return features[kPctr]; }
  double pacr() const { return features[kPacr]; }
  double pcvr() const { return features[kPcvr]; }
  double product_price() const { return features[kProductPrice]; }
};

struct AuctionRequest {
  std::vector<AdCandidate> candidates;
  std::size_t slots = 1;
  std::vector<double> slot_ctr_factors;
};

inline void validate_candidate(const AdCandidate& c, std::size_t feature_len) {
  require(c.features.size() == feature_len,
          "candidate " + c.ad_id + ": expected " + std::to_string(feature_len) +
              " features, got " + std::to_string(c.features.size()));
  require_finite(c.bid, "bid");
  require_finite(c.value, "value");
  require(c.bid >= 0.0, "candidate " + c.ad_id + ": negative bid");
  for (double f : c.features) require_finite(f, "feature");
  for (std::size_t k : {kPctr, kPacr, kPcvr}) {
    require(c.features[k] >= 0.0 && c.features[k] <= 1.0,
            "candidate " + c.ad_id + ": predicted rate outside [0,1]");
  }
  require(c.product_price() >= 0.0,
          "candidate " + c.ad_id + ": negative product price");
}

inline void validate_request(const AuctionRequest& req) {
  const std::size_t n = req.candidates.size();
  require(n >= 1, "auction request has no candidates");
  require(req.slots >= 1 && req.slots <= n,
          "slots must satisfy 1 <= K <= N (K=" + std::to_string(req.slots) +
              ", N=" + std::to_string(n) + ")");
  require(req.slot_ctr_factors.size() == req.slots,
          "slot_ctr_factors length must equal K");
  for (std::size_t k = 0; k < req.slots; ++k) {
    const double beta = req.slot_ctr_factors[k];
    require(beta > 0.0 && beta <= 1.0, "slot factor outside (0,1]");
    if (k > 0)
      require(beta <= req.slot_ctr_factors[k - 1],
              "slot factors must be non-increasing");
  }
  const std::size_t len = req.candidates.front().features.size();
  require(len >= kUserBegin, "feature vector shorter than the fixed prefix");
  for (const auto& c : req.candidates) validate_candidate(c, len);
}

// r = bid * multiplier + offset. offset is zero for every multiplicative
// mechanism; uGSP carries its bid-independent utility term there.
struct RankedEntry {
  std::size_t candidate = 0;
  std::string ad_id;
  double bid = 0.0;
  double score = 0.0;
  double multiplier = 0.0;
  double offset = 0.0;
};

struct Winner {
  std::string ad_id;
  std::size_t candidate = 0;
  std::size_t slot = 0;  // 1-based
  double price_per_click = 0.0;
};

struct AuctionOutcome {
  std::vector<Winner> winners;
  std::vector<std::string> losers;
  std::vector<RankedEntry> ranking;  // full ranking, best first
};

struct PricingConfig {
  double reserve_price = 0.0;
  double min_multiplier = 1e-9;
  // Bisection tolerance relative to the winner's bid.
  double bid_tolerance_rel = 1e-6;
};

enum class Pricing { kMultiplier, kExact };

// --- rank scores ------------------------------------------------------------

inline bool gsp_sigma_in_tuning_range(double sigma) {
  return sigma >= 0.5 && sigma <= 2.0;
}

inline double gsp_rank_score(double bid, double pctr, double sigma) {
  require_finite(bid, "bid");
  require_finite(pctr, "pctr");
  require_finite(sigma, "sigma");
  if (sigma == 0.0) return bid;
  if (pctr == 0.0) return 0.0;
  return bid * std::pow(pctr, sigma);
}

struct UgspWeights {
  double bid_ctr = 1.0;  // lambda_1, on bid * pCTR
  double ctr = 0.0;      // lambda_2
  double cvr = 0.0;      // lambda_3
  // Extra utility terms for the ACR / GMV trade-off sweeps.
  double acr = 0.0;
  double gmv = 0.0;  // on pCVR * product_price

  void validate() const {
    for (double w : {bid_ctr, ctr, cvr, acr, gmv}) {
      require_finite(w, "uGSP weight");
      require(w >= 0.0, "uGSP weights must be nonnegative");
    }
  }
};

inline double ugsp_rank_score(double bid, double pctr, double pcvr,
                              const UgspWeights& w) {
  w.validate();
  require_finite(bid, "bid");
  return w.bid_ctr * bid * pctr + w.ctr * pctr + w.cvr * pcvr;
}

// Hand-set nonlinear score used by the three-ad worked example.
inline double fixed_rank_score(double bid, double pctr) {
  require_finite(bid, "bid");
  require_finite(pctr, "pctr");
  return std::pow(bid / 10.0, 0.4) * std::pow(pctr, 0.7);
}

// --- scorers ------------------------------------------------------------------

// A scorer turns a candidate into a RankedEntry at its own bid, and can
// re-evaluate the rank score at any other bid with the features held fixed.
template <class S>
concept RankScorer = requires(const S& s, const AdCandidate& c, double bid) {
  { s.entry(c) } -> std::same_as<RankedEntry>;
  { s.score_at(c, bid) } -> std::convertible_to<double>;
};

struct GspScorer {
  double sigma = 1.0;

  double quality(const AdCandidate& c) const {
    if (sigma == 0.0) return 1.0;
    return c.pctr() == 0.0 ? 0.0 : std::pow(c.pctr(), sigma);
  }
  double score_at(const AdCandidate& c, double bid) const {
    return bid * quality(c);
  }
  RankedEntry entry(const AdCandidate& c) const {
    const double q = quality(c);
    return {0, c.ad_id, c.bid, c.bid * q, q, 0.0};
  }
};

struct UgspScorer {
  UgspWeights weights;

  double offset(const AdCandidate& c) const {
    return weights.ctr * c.pctr() + weights.cvr * c.pcvr() +
           weights.acr * c.pacr() + weights.gmv * c.pcvr() * c.product_price();
  }
  double score_at(const AdCandidate& c, double bid) const {
    return weights.bid_ctr * c.pctr() * bid + offset(c);
  }
  RankedEntry entry(const AdCandidate& c) const {
    const double m = weights.bid_ctr * c.pctr();
    const double o = offset(c);
    return {0, c.ad_id, c.bid, c.bid * m + o, m, o};
  }
};

struct FixedScorer {
  double score_at(const AdCandidate& c, double bid) const {
    return fixed_rank_score(bid, c.pctr());
  }
  RankedEntry entry(const AdCandidate& c) const {
    const double r = fixed_rank_score(c.bid, c.pctr());
    return {0, c.ad_id, c.bid, r, c.bid > 0.0 ? r / c.bid : 0.0, 0.0};
  }
};

// --- allocation ---------------------------------------------------------------

// Sort by score descending; ties go to the higher bid, then the smaller ad_id.
inline bool ranks_before(const RankedEntry& a, const RankedEntry& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.bid != b.bid) return a.bid > b.bid;
  return a.ad_id < b.ad_id;
}

inline AuctionOutcome allocate(const AuctionRequest& req,
                               std::vector<RankedEntry> scores) {
  require(scores.size() == req.candidates.size(),
          "allocate: one score per candidate required");
  require(req.slots >= 1 && req.slots <= req.candidates.size(),
          "allocate: invalid slot count");
  std::sort(scores.begin(), scores.end(), ranks_before);
  AuctionOutcome out;
  out.ranking = std::move(scores);
  out.winners.reserve(req.slots);
  for (std::size_t pos = 0; pos < out.ranking.size(); ++pos) {
    const auto& e = out.ranking[pos];
    if (pos < req.slots)
      out.winners.push_back({e.ad_id, e.candidate, pos + 1, 0.0});
    else
      out.losers.push_back(e.ad_id);
  }
  return out;
}

// --- pricing ------------------------------------------------------------------

// p = (r_next - offset) / multiplier for the winner at ranking position
// `winner_index` (0-based). The last ranked candidate pays the reserve.
inline double price_by_multiplier(const AuctionOutcome& out,
                                  std::size_t winner_index,
                                  const PricingConfig& cfg = {}) {
  require(winner_index < out.winners.size(), "winner index out of range");
  const auto& self = out.ranking[winner_index];
  if (winner_index + 1 >= out.ranking.size()) return cfg.reserve_price;
  const double next = out.ranking[winner_index + 1].score;
  if (self.multiplier <= cfg.min_multiplier) {
    // A bid-independent score with enough offset keeps the slot at bid 0.
    if (self.offset >= next && self.offset > 0.0) return 0.0;
    throw Error(ErrorKind::kDegenerateMultiplier,
                "bid multiplier of " + self.ad_id + " is degenerate (" +
                    std::to_string(self.multiplier) + ")");
  }
  const double p = std::max(0.0, (next - self.offset) / self.multiplier);
  // r_next <= r_i implies p <= bid; clamp the last-ulp rounding.
  return std::min(p, self.bid);
}

struct BisectionResult {
  double bid = 0.0;
  int iterations = 0;
};

// Smallest z in [0, bid_hi] with rank_fn(z) >= target, to absolute tolerance
// `tol`. Returns the upper end of the final bracket so rank_fn(z) >= target.
template <class RankFn>
BisectionResult price_exact_binary_search(RankFn&& rank_fn, double target,
                                          double bid_hi, double tol) {
  require_finite(target, "target");
  require_finite(bid_hi, "bid_hi");
  require(bid_hi >= 0.0, "bid_hi must be nonnegative");
  if (rank_fn(0.0) >= target) return {0.0, 0};
  if (!(rank_fn(bid_hi) >= target))
    throw Error(ErrorKind::kNoSolution,
                "critical-bid search: rank at bid_hi is below the target");
  require(tol > 0.0, "bisection tolerance must be positive");
  double lo = 0.0;
  double hi = bid_hi;
  int it = 0;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (rank_fn(mid) >= target)
      hi = mid;
    else
      lo = mid;
    ++it;
  }
  return {hi, it};
}

template <RankScorer S>
double price_exact(const AuctionRequest& req, const AuctionOutcome& out,
                   std::size_t winner_index, const S& scorer,
                   const PricingConfig& cfg = {}) {
  require(winner_index < out.winners.size(), "winner index out of range");
  if (winner_index + 1 >= out.ranking.size()) return cfg.reserve_price;
  const auto& self = out.ranking[winner_index];
  const AdCandidate& c = req.candidates[self.candidate];
  const double target = out.ranking[winner_index + 1].score;
  const double tol = std::max(cfg.bid_tolerance_rel * self.bid, 1e-300);
  auto rank_fn = [&](double z) { return scorer.score_at(c, z); };
  return price_exact_binary_search(rank_fn, target, self.bid, tol).bid;
}

// --- full auction -------------------------------------------------------------

template <RankScorer S>
std::vector<RankedEntry> score_candidates(const AuctionRequest& req,
                                          const S& scorer) {
  std::vector<RankedEntry> entries;
  entries.reserve(req.candidates.size());
  for (std::size_t i = 0; i < req.candidates.size(); ++i) {
    RankedEntry e = scorer.entry(req.candidates[i]);
    e.candidate = i;
    entries.push_back(std::move(e));
  }
  return entries;
}

template <RankScorer S>
AuctionOutcome run_auction(const AuctionRequest& req, const S& scorer,
                           Pricing pricing = Pricing::kMultiplier,
                           const PricingConfig& cfg = {}) {
  validate_request(req);
  AuctionOutcome out = allocate(req, score_candidates(req, scorer));
  for (std::size_t w = 0; w < out.winners.size(); ++w) {
    out.winners[w].price_per_click =
        pricing == Pricing::kMultiplier ? price_by_multiplier(out, w, cfg)
                                        : price_exact(req, out, w, scorer, cfg);
  }
  return out;
}

// Expected totals under the convention Revenue_i = PPC_i * pCTR_i and
// CTR = sum of winners' pCTR (slot factors ignored).
struct ExpectedTotals {
  double revenue = 0.0;
  double ctr = 0.0;
};

inline ExpectedTotals expected_totals(const AuctionRequest& req,
                                      const AuctionOutcome& out) {
  ExpectedTotals t;
  for (const auto& w : out.winners) {
    const double pctr = req.candidates[w.candidate].pctr();
    t.revenue += w.price_per_click * pctr;
    t.ctr += pctr;
  }
  return t;
}

}  // namespace deepgsp
