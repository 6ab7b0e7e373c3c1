#pragma once

// Economic-property audits: bid monotonicity of rank scores (T_m), payment
// error of the multiplier price against the exact critical bid (PER), and the
// i-SIC incentive-compatibility estimator.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "deepgsp/auction.hpp"
#include "deepgsp/error.hpp"
#include "deepgsp/parallel.hpp"
#include "deepgsp/rank_net.hpp"
#include "deepgsp/simulator.hpp"

namespace deepgsp {

struct AuditConfig {
  std::size_t grid_size = 20;
  double grid_lo = 0.1;  // bid grid spans [grid_lo * b, grid_hi * b]
  double grid_hi = 10.0;
  std::size_t tm_rounds = 200;  // every candidate of every round is a test state
  std::size_t per_rounds = 2000;
  double alpha = 0.01;
  std::size_t isic_auctions = 100000;
  std::uint64_t seed = 7;
  std::size_t workers = 1;

  void collect_problems(Problems& p) const {
    p.check(grid_size >= 2, "audit.grid_size must be >= 2");
    p.check(grid_lo > 0.0 && grid_lo < 1.0 && grid_hi > 1.0,
            "audit bid grid needs 0 < lo < 1 < hi");
    p.check(alpha > 0.0 && alpha < 1.0, "audit.alpha must lie in (0,1)");
    p.check(tm_rounds >= 1 && per_rounds >= 1 && isic_auctions >= 1,
            "audit sample counts must be positive");
  }

  void validate() const {
    Problems p;
    collect_problems(p);
    p.raise_if_any();
  }
};

// --- Spearman -----------------------------------------------------------------

struct SpearmanResult {
  double rho = 0.0;
  bool degenerate = false;  // a constant input; rho undefined
};

// 1-based ranks, ties get the average of the positions they span.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
    i = j + 1;
  }
  return rank;
}

inline SpearmanResult spearman_rho(std::span<const double> xs, std::span<const double> ys) {
  require(xs.size() == ys.size(), "spearman: length mismatch");
  require(xs.size() >= 2, "spearman: need at least two points");
  for (double x : xs) require_finite(x, "spearman input");
  for (double y : ys) require_finite(y, "spearman input");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  const double n = static_cast<double>(xs.size());
  const double mean = (n + 1.0) / 2.0;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double dx = rx[i] - mean, dy = ry[i] - mean;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return {0.0, true};
  return {std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0), false};
}

// --- monotonicity -------------------------------------------------------------

struct MonotonicityResult {
  double t_m = 0.0;
  std::size_t states = 0;      // states that entered the mean
  std::size_t degenerate = 0;  // constant-score states, excluded
};

inline std::vector<double> bid_grid(double bid, const AuditConfig& cfg) {
  std::vector<double> g(cfg.grid_size);
  const double lo = cfg.grid_lo * bid, hi = cfg.grid_hi * bid;
  for (std::size_t k = 0; k < g.size(); ++k)
    g[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(g.size() - 1);
  return g;
}

// score(bid, features) -> rank score.
template <class ScoreFn>
  requires std::invocable<ScoreFn&, double, std::span<const double>>
MonotonicityResult monotonicity_metric(ScoreFn&& score, std::span<const BidState> states,
                                       const AuditConfig& cfg) {
  cfg.validate();
  require(!states.empty(), "monotonicity metric needs test states");
  MonotonicityResult r;
  double sum = 0.0;
  std::vector<double> scores(cfg.grid_size);
  for (const auto& s : states) {
    require(s.bid > 0.0, "test state bid must be positive");
    const auto grid = bid_grid(s.bid, cfg);
    for (std::size_t k = 0; k < grid.size(); ++k)
      scores[k] = score(grid[k], std::span<const double>(s.features));
    const auto sr = spearman_rho(grid, scores);
    if (sr.degenerate) {
      ++r.degenerate;
      continue;
    }
    sum += sr.rho;
    ++r.states;
  }
  r.t_m = r.states ? sum / static_cast<double>(r.states) : 0.0;
  return r;
}

inline MonotonicityResult monotonicity_metric(const BidMultiplierNet& actor,
                                              std::span<const BidState> states,
                                              const AuditConfig& cfg) {
  return monotonicity_metric(
      [&](double b, std::span<const double> x) { return actor.rank_score(b, x); }, states,
      cfg);
}

// Every candidate of `rounds` freshly drawn requests.
inline std::vector<BidState> sample_states(const World& world, std::size_t rounds,
                                           std::uint64_t seed) {
  std::vector<BidState> out;
  out.reserve(rounds * world.advertisers.size());
  for (std::size_t r = 0; r < rounds; ++r) {
    const auto sr = sample_round_request(world, seed, r);
    for (const auto& c : sr.request.candidates) out.push_back({c.bid, c.features});
  }
  return out;
}

// --- payment error rate -------------------------------------------------------

struct PerResult {
  double mean = 0.0;
  double p5 = 0.0;
  double p95 = 0.0;
  std::size_t count = 0;
  std::size_t excluded = 0;  // no-solution or zero exact price
  std::vector<double> ratios;
};

// Linear interpolation between order statistics.
inline double quantile(std::vector<double> v, double q) {
  require(!v.empty(), "quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

template <RankScorer S>
PerResult payment_error_rate(const World& world, const S& scorer, std::size_t rounds,
                             std::uint64_t seed, const PricingConfig& pcfg = {}) {
  PerResult r;
  for (std::size_t round = 0; round < rounds; ++round) {
    const auto sr = sample_round_request(world, seed, round);
    const AuctionOutcome out =
        run_auction(sr.request, scorer, Pricing::kMultiplier, pcfg);
    for (std::size_t w = 0; w < out.winners.size(); ++w) {
      double exact = 0.0;
      try {
        exact = price_exact(sr.request, out, w, scorer, pcfg);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kNoSolution) throw;
        ++r.excluded;
        continue;
      }
      if (exact <= 0.0) {
        ++r.excluded;
        continue;
      }
      r.ratios.push_back(out.winners[w].price_per_click / exact);
    }
  }
  r.count = r.ratios.size();
  if (r.count) {
    r.mean = std::accumulate(r.ratios.begin(), r.ratios.end(), 0.0) /
             static_cast<double>(r.count);
    r.p5 = quantile(r.ratios, 0.05);
    r.p95 = quantile(r.ratios, 0.95);
  }
  return r;
}

// --- i-SIC --------------------------------------------------------------------

enum class IsicPayment {
  kMultiplier,  // (r_next - offset) / multiplier
  kExact,       // critical bid by bisection
  kFirstPrice,  // pay the bid
};

struct IsicResult {
  double alpha = 0.0;
  double value = 0.0;  // pooled over (auction, advertiser) pairs
  bool degenerate = false;
  double numerator = 0.0;
  double denominator = 0.0;
  std::size_t pairs = 0;
  std::vector<double> per_advertiser;  // NaN where undefined
};

namespace detail {

inline constexpr std::uint64_t kIsicChunk = 1024;

// Expected clicks and expected payment for candidate i bidding `bid`, others
// fixed. Single slot.
template <RankScorer S>
std::pair<double, double> isic_alloc_pay(const AuctionRequest& req,
                                         std::vector<RankedEntry>& entries, std::size_t i,
                                         double bid, double click_rate, const S& scorer,
                                         IsicPayment payment, const PricingConfig& pcfg) {
  AdCandidate c = req.candidates[i];
  c.bid = bid;
  RankedEntry e = scorer.entry(c);
  e.candidate = i;
  const RankedEntry saved = entries[i];
  entries[i] = e;
  // K = 1: the winner is the top entry; the runner-up sets the price.
  std::size_t top = 0;
  for (std::size_t k = 1; k < entries.size(); ++k)
    if (ranks_before(entries[k], entries[top])) top = k;
  double x = 0.0, p = 0.0;
  if (top == i) {
    x = click_rate;
    double ppc = pcfg.reserve_price;
    if (entries.size() > 1) {
      std::size_t second = top == 0 ? 1 : 0;
      for (std::size_t k = 0; k < entries.size(); ++k)
        if (k != top && ranks_before(entries[k], entries[second])) second = k;
      AuctionOutcome mini;
      mini.ranking = {entries[top], entries[second]};
      mini.winners = {{e.ad_id, i, 1, 0.0}};
      AuctionRequest one;
      one.candidates = {c};
      mini.ranking[0].candidate = 0;
      switch (payment) {
        case IsicPayment::kMultiplier:
          ppc = price_by_multiplier(mini, 0, pcfg);
          break;
        case IsicPayment::kExact:
          ppc = price_exact(one, mini, 0, scorer, pcfg);
          break;
        case IsicPayment::kFirstPrice:
          ppc = bid;
          break;
      }
    } else if (payment == IsicPayment::kFirstPrice) {
      ppc = bid;
    }
    p = x * ppc;
  }
  entries[i] = saved;
  return {x, p};
}

}  // namespace detail

// Finite-alpha i-SIC on the single-slot version of `world`. Each sampled
// auction is replayed for every advertiser at bids v, (1+alpha)v and
// (1-alpha)v with everything else held fixed (common random numbers).
// u_hat(b) = b * x(b) - p(b), with x in expected clicks.
template <RankScorer S>
IsicResult i_sic(const World& world, const S& scorer, IsicPayment payment, double alpha,
                 std::size_t auctions, std::uint64_t seed, std::size_t workers = 1,
                 const PricingConfig& pcfg = {}) {
  require(alpha > 0.0 && alpha <= 0.05, "i-SIC alpha must lie in (0, 0.05]");
  require(auctions >= 1, "i-SIC needs at least one auction");
  const World single = world.single_slot();
  const std::size_t n_adv = single.advertisers.size();
  const std::size_t n_chunks = (auctions + detail::kIsicChunk - 1) / detail::kIsicChunk;
  struct Partial {
    std::vector<double> num, den;
  };
  std::vector<Partial> parts(n_chunks);
  parallel_chunks(n_chunks, workers, [&](std::size_t chunk) {
    Partial& part = parts[chunk];
    part.num.assign(n_adv, 0.0);
    part.den.assign(n_adv, 0.0);
    const std::size_t lo = chunk * detail::kIsicChunk;
    const std::size_t hi = std::min<std::size_t>(auctions, lo + detail::kIsicChunk);
    for (std::size_t a = lo; a < hi; ++a) {
      const auto sr = sample_round_request(single, seed, a);
      auto entries = score_candidates(sr.request, scorer);
      for (std::size_t i = 0; i < n_adv; ++i) {
        const double v = sr.request.candidates[i].value;
        const double ctr = sr.truth[i].ctr * sr.request.slot_ctr_factors[0];
        auto u_hat = [&](double b) {
          const auto [x, p] = detail::isic_alloc_pay(sr.request, entries, i, b, ctr, scorer,
                                                     payment, pcfg);
          return b * x - p;
        };
        const auto [x_v, p_v] =
            detail::isic_alloc_pay(sr.request, entries, i, v, ctr, scorer, payment, pcfg);
        (void)p_v;
        part.num[i] += u_hat((1.0 + alpha) * v) - u_hat((1.0 - alpha) * v);
        part.den[i] += 2.0 * alpha * v * x_v;
      }
    }
  });
  IsicResult r;
  r.alpha = alpha;
  r.pairs = auctions * n_adv;
  std::vector<double> num(n_adv, 0.0), den(n_adv, 0.0);
  for (const auto& p : parts)
    for (std::size_t i = 0; i < n_adv; ++i) {
      num[i] += p.num[i];
      den[i] += p.den[i];
    }
  const double scale = 1.0 / static_cast<double>(auctions);
  r.per_advertiser.resize(n_adv);
  for (std::size_t i = 0; i < n_adv; ++i) {
    r.numerator += num[i];
    r.denominator += den[i];
    r.per_advertiser[i] =
        den[i] * scale > 1e-9 ? num[i] / den[i] : std::numeric_limits<double>::quiet_NaN();
  }
  r.numerator *= scale;
  r.denominator *= scale;
  if (r.denominator <= 1e-9) {
    r.degenerate = true;
  } else {
    r.value = r.numerator / r.denominator;
  }
  return r;
}

// --- report -------------------------------------------------------------------

struct AuditRow {
  std::string label;  // metric configuration tuple
  MonotonicityResult mono;
  PerResult per;
  IsicResult isic;
};

inline std::string weights_label(std::span<const double> w) {
  std::ostringstream os;
  os << '(';
  for (std::size_t j = 0; j < w.size(); ++j) {
    if (j) os << ',';
    os << w[j];
  }
  os << ')';
  return os.str();
}

inline void write_audit_table(std::ostream& os, std::span<const AuditRow> rows) {
  os << std::left << std::setw(28) << "metrics" << std::right << std::setw(10) << "T_m"
     << std::setw(10) << "PER" << std::setw(10) << "IC" << '\n';
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-28s%10.4f%10.4f%10.4f\n", r.label.c_str(), r.mono.t_m,
                  r.per.mean, r.isic.value);
    os << buf;
  }
}

inline void write_audit_csv(std::ostream& os, std::span<const AuditRow> rows) {
  os << "metrics,t_m,tm_states,tm_degenerate,per_mean,per_p5,per_p95,per_count,"
        "per_excluded,isic_alpha,isic,isic_pairs\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "\"%s\",%.6f,%zu,%zu,%.6f,%.6f,%.6f,%zu,%zu,%.4f,%.6f,%zu\n",
                  r.label.c_str(), r.mono.t_m, r.mono.states, r.mono.degenerate, r.per.mean,
                  r.per.p5, r.per.p95, r.per.count, r.per.excluded, r.isic.alpha, r.isic.value,
                  r.isic.pairs);
    os << buf;
  }
}

}  // namespace deepgsp
