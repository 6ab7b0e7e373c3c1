#pragma once

// Sweeps shared by the command-line tool and the acceptance run: the
// three-ad worked example, baseline curves, RPM-vs-X trade-off sweeps and the
// epsilon sweep of the smooth-transition constraint.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "deepgsp/audit.hpp"
#include "deepgsp/auction.hpp"
#include "deepgsp/rank_net.hpp"
#include "deepgsp/simulator.hpp"
#include "deepgsp/trainer.hpp"

namespace deepgsp {

// Everything a sweep needs besides the world, trainer and audit sections.
struct ExperimentConfig {
  std::vector<double> lambda_grid{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  std::vector<double> sigma_grid{0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0};
  std::vector<double> ugsp_grid{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  double ugsp_scale = 1.0;  // money per unit of the utility term
  std::vector<double> epsilon_grid{0.0, 0.1, 0.2, 0.3, 0.4};
  Metric pareto_metric = kCtr;
  std::array<double, kNumMetrics> transition_weights{1.0, 0.0, 0.0, 0.0, 0.0};
  std::size_t eval_rounds = 20000;
  std::uint64_t eval_seed = 555;

  void collect_problems(Problems& p) const {
    auto sorted_nonempty = [&](const std::vector<double>& g, const char* name) {
      p.check(!g.empty(), std::string("experiment.") + name + " must be nonempty");
      p.check(std::is_sorted(g.begin(), g.end()),
              std::string("experiment.") + name + " must be sorted ascending");
    };
    sorted_nonempty(lambda_grid, "lambda_grid");
    sorted_nonempty(sigma_grid, "sigma_grid");
    sorted_nonempty(ugsp_grid, "ugsp_grid");
    sorted_nonempty(epsilon_grid, "epsilon_grid");
    for (double l : lambda_grid)
      p.check(l >= 0.0 && l <= 1.0, "experiment.lambda_grid entries must lie in [0,1]");
    for (double l : ugsp_grid)
      p.check(l > 0.0 && l <= 1.0, "experiment.ugsp_grid entries must lie in (0,1]");
    for (double s : sigma_grid) p.check(s > 0.0, "experiment.sigma_grid entries must be positive");
    for (double e : epsilon_grid)
      p.check(e >= 0.0 && e <= 1.0, "experiment.epsilon_grid entries must lie in [0,1]");
    p.check(pareto_metric != kRpm, "experiment.pareto_metric must be one of CTR, ACR, CVR, GPM");
    p.check(ugsp_scale > 0.0, "experiment.ugsp_scale must be positive");
    p.check(eval_rounds >= 1, "experiment.eval_rounds must be >= 1");
    collect_weight_problems(transition_weights, p);
  }
};

// --- worked example ---------------------------------------------------------

struct Table1Row {
  std::string ad_id;
  double bid = 0.0;
  double pctr = 0.0;
  double score = 0.0;
  std::size_t rank = 0;  // 1-based position in the ranking
  double ppc = 0.0;      // 0 for losers
  double revenue = 0.0;  // ppc * pctr
  bool won = false;
};

struct Table1Half {
  std::string mechanism;
  std::vector<Table1Row> rows;  // in input order
  double revenue = 0.0;
  double ctr = 0.0;
};

struct Table1Expectation {
  double revenue = 0.0;
  double revenue_tol = 0.0;
  double ctr = 0.0;
  std::vector<std::pair<std::string, double>> ppc;  // winners only
  double ppc_tol = 0.02;
};

struct Table1Report {
  Table1Half gsp;
  Table1Half deep;
  std::vector<std::string> mismatches;
  bool pass() const { return mismatches.empty(); }
};

// Ad1 (10, 0.1), Ad2 (2.4, 0.2), Ad3 (1.3, 0.3); two slots with equal
// position factors.
inline AuctionRequest worked_example_request() {
  AuctionRequest r;
  const std::array<std::tuple<const char*, double, double>, 3> ads{
      {{"Ad1", 10.0, 0.1}, {"Ad2", 2.4, 0.2}, {"Ad3", 1.3, 0.3}}};
  for (const auto& [id, bid, pctr] : ads) {
    AdCandidate c;
    c.ad_id = id;
    c.bid = bid;
    c.value = bid;
    c.features.assign(kUserBegin, 0.0);
    c.features[kPctr] = pctr;
    r.candidates.push_back(std::move(c));
  }
  r.slots = 2;
  r.slot_ctr_factors = {1.0, 1.0};
  return r;
}

inline Table1Expectation table1_expected_gsp() {
  return {0.87, 1e-9, 0.3, {{"Ad1", 4.8}, {"Ad2", 1.95}}, 0.02};
}

inline Table1Expectation table1_expected_deep() {
  return {1.329, 0.005, 0.4, {{"Ad1", 9.54}, {"Ad3", 1.25}}, 0.02};
}

namespace detail {

template <RankScorer S>
Table1Half table1_half(const AuctionRequest& req, const S& scorer, std::string name) {
  const AuctionOutcome out = run_auction(req, scorer);
  Table1Half h;
  h.mechanism = std::move(name);
  for (const auto& c : req.candidates) {
    Table1Row row;
    row.ad_id = c.ad_id;
    row.bid = c.bid;
    row.pctr = c.pctr();
    h.rows.push_back(row);
  }
  for (std::size_t pos = 0; pos < out.ranking.size(); ++pos) {
    Table1Row& row = h.rows[out.ranking[pos].candidate];
    row.score = out.ranking[pos].score;
    row.rank = pos + 1;
  }
  for (const auto& w : out.winners) {
    Table1Row& row = h.rows[w.candidate];
    row.won = true;
    row.ppc = w.price_per_click;
    row.revenue = row.ppc * row.pctr;
  }
  const ExpectedTotals t = expected_totals(req, out);
  h.revenue = t.revenue;
  h.ctr = t.ctr;
  return h;
}

inline void check_half(const Table1Half& h, const Table1Expectation& e,
                       std::vector<std::string>& bad) {
  char buf[160];
  if (std::abs(h.revenue - e.revenue) > e.revenue_tol) {
    std::snprintf(buf, sizeof buf, "%s revenue %.6f, expected %.4f +- %g", h.mechanism.c_str(),
                  h.revenue, e.revenue, e.revenue_tol);
    bad.emplace_back(buf);
  }
  if (std::abs(h.ctr - e.ctr) > 1e-9) {
    std::snprintf(buf, sizeof buf, "%s CTR %.6f, expected %.4f", h.mechanism.c_str(), h.ctr,
                  e.ctr);
    bad.emplace_back(buf);
  }
  for (const auto& [id, want] : e.ppc) {
    const auto it = std::find_if(h.rows.begin(), h.rows.end(),
                                 [&](const Table1Row& r) { return r.ad_id == id; });
    if (it == h.rows.end() || !it->won) {
      bad.push_back(h.mechanism + " " + id + " should win a slot");
      continue;
    }
    if (std::abs(it->ppc - want) > e.ppc_tol) {
      std::snprintf(buf, sizeof buf, "%s %s PPC %.4f, expected %.2f +- %g", h.mechanism.c_str(),
                    id.c_str(), it->ppc, want, e.ppc_tol);
      bad.emplace_back(buf);
    }
  }
}

}  // namespace detail

inline Table1Report run_table1() {
  const AuctionRequest req = worked_example_request();
  Table1Report r;
  r.gsp = detail::table1_half(req, GspScorer{1.0}, "GSP");
  r.deep = detail::table1_half(req, FixedScorer{}, "DeepGSP(fixed score)");
  detail::check_half(r.gsp, table1_expected_gsp(), r.mismatches);
  detail::check_half(r.deep, table1_expected_deep(), r.mismatches);
  return r;
}

inline void write_table1(std::ostream& os, const Table1Report& r) {
  char buf[160];
  for (const Table1Half* h : {&r.gsp, &r.deep}) {
    os << h->mechanism << '\n';
    std::snprintf(buf, sizeof buf, "  %-4s %6s %6s %8s %5s %8s %8s\n", "ad", "bid", "pCTR",
                  "score", "rank", "PPC", "revenue");
    os << buf;
    for (const auto& row : h->rows) {
      if (row.won)
        std::snprintf(buf, sizeof buf, "  %-4s %6.2f %6.2f %8.4f %5zu %8.4f %8.4f\n",
                      row.ad_id.c_str(), row.bid, row.pctr, row.score, row.rank, row.ppc,
                      row.revenue);
      else
        std::snprintf(buf, sizeof buf, "  %-4s %6.2f %6.2f %8.4f %5zu %8s %8s\n",
                      row.ad_id.c_str(), row.bid, row.pctr, row.score, row.rank, "-", "-");
      os << buf;
    }
    std::snprintf(buf, sizeof buf, "  total revenue %.5f  CTR %.4f\n", h->revenue, h->ctr);
    os << buf;
  }
  if (r.pass()) {
    os << "table1: PASS\n";
  } else {
    for (const auto& m : r.mismatches) os << "mismatch: " << m << '\n';
    os << "table1: FAIL\n";
  }
}

// --- curves -----------------------------------------------------------------

struct CurvePoint {
  std::string mechanism;  // "DeepGSP", "GSP", "uGSP"
  double param = 0.0;     // lambda, sigma or lambda_1
  std::array<double, kNumMetrics> normalized{};
  double utility = 0.0;  // summed mean per-round advertiser utility
  double x(Metric m) const { return normalized[m]; }
  double rpm() const { return normalized[kRpm]; }
};

// lambda on RPM, 1 - lambda on metric x.
inline std::array<double, kNumMetrics> pareto_weights(double lambda, Metric x) {
  require(lambda >= 0.0 && lambda <= 1.0, "lambda must lie in [0,1]");
  require(x != kRpm, "the trade-off metric must differ from RPM");
  std::array<double, kNumMetrics> w{};
  w[kRpm] = lambda;
  w[x] += 1.0 - lambda;
  return w;
}

// uGSP with lambda_1 on bid * pCTR and (1 - lambda_1) * scale on the
// predicted rate behind metric x (GPM uses pCVR * product price).
inline UgspWeights ugsp_weights_for(double lambda1, double scale, Metric x) {
  UgspWeights w;
  w.bid_ctr = lambda1;
  const double o = (1.0 - lambda1) * scale;
  switch (x) {
    case kCtr: w.ctr = o; break;
    case kAcr: w.acr = o; break;
    case kCvr: w.cvr = o; break;
    case kGpm: w.gmv = o; break;
    case kRpm: break;
  }
  return w;
}

template <RankScorer S>
CurvePoint measure_point(const World& world, const S& scorer, const EvalOptions& opt,
                         std::string mechanism, double param) {
  const EvalResult r = evaluate(world, scorer, opt);
  CurvePoint p;
  p.mechanism = std::move(mechanism);
  p.param = param;
  p.normalized = r.metrics.normalized;
  p.utility = std::accumulate(r.mean_utility.begin(), r.mean_utility.end(), 0.0);
  return p;
}

inline std::vector<CurvePoint> gsp_curve(const World& world, std::span<const double> sigmas,
                                         const EvalOptions& opt) {
  std::vector<CurvePoint> out;
  for (double s : sigmas) out.push_back(measure_point(world, GspScorer{s}, opt, "GSP", s));
  return out;
}

inline std::vector<CurvePoint> ugsp_curve(const World& world, std::span<const double> lambdas,
                                          double scale, Metric x, const EvalOptions& opt) {
  std::vector<CurvePoint> out;
  for (double l : lambdas)
    out.push_back(measure_point(world, UgspScorer{ugsp_weights_for(l, scale, x)}, opt, "uGSP", l));
  return out;
}

// Non-dominated points of a curve in the (x, RPM) plane, sorted by x.
inline std::vector<CurvePoint> upper_frontier(std::vector<CurvePoint> pts, Metric x) {
  std::sort(pts.begin(), pts.end(), [&](const CurvePoint& a, const CurvePoint& b) {
    return a.x(x) != b.x(x) ? a.x(x) > b.x(x) : a.rpm() > b.rpm();
  });
  std::vector<CurvePoint> front;
  double best_rpm = -std::numeric_limits<double>::infinity();
  for (const auto& p : pts) {
    if (p.rpm() > best_rpm) {
      front.push_back(p);
      best_rpm = p.rpm();
    }
  }
  std::reverse(front.begin(), front.end());
  return front;
}

// Height of the frontier at abscissa `at`: linear between adjacent frontier
// points, flat to the left of the first one, -inf beyond the last one.
inline double frontier_rpm_at(std::span<const CurvePoint> front, Metric x, double at) {
  require(!front.empty(), "empty frontier");
  if (at <= front.front().x(x)) return front.front().rpm();
  if (at > front.back().x(x)) return -std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k < front.size(); ++k) {
    const double x0 = front[k - 1].x(x), x1 = front[k].x(x);
    if (at <= x1) {
      const double t = x1 > x0 ? (at - x0) / (x1 - x0) : 1.0;
      return front[k - 1].rpm() + t * (front[k].rpm() - front[k - 1].rpm());
    }
  }
  return front.back().rpm();
}

// A point weakly dominates a curve when it lies on or above the curve's
// upper frontier in the (x, RPM) plane.
inline bool weakly_dominates(const CurvePoint& p, std::span<const CurvePoint> curve, Metric x) {
  const auto front = upper_frontier({curve.begin(), curve.end()}, x);
  return p.rpm() >= frontier_rpm_at(front, x, p.x(x));
}

// --- trade-off sweep --------------------------------------------------------

// Produces a trained actor for a training config; lets callers plug in a cache.
using ActorProvider = std::function<BidMultiplierNet(const TrainConfig&)>;

inline ActorProvider train_actor_provider(const World& world) {
  return [&world](const TrainConfig& cfg) { return train(world, cfg).actor; };
}

struct ParetoRow {
  double lambda = 0.0;
  CurvePoint deep;
  double objective = 0.0;  // lambda * RPM + (1 - lambda) * X, normalized
  bool dominates_gsp = false;
  bool dominates_ugsp = false;
  bool dominates_both() const { return dominates_gsp && dominates_ugsp; }
};

struct ParetoResult {
  Metric metric = kCtr;
  std::vector<ParetoRow> rows;
  std::vector<CurvePoint> gsp;
  std::vector<CurvePoint> ugsp;
  double dominance_fraction() const {
    if (rows.empty()) return 0.0;
    const auto n = std::count_if(rows.begin(), rows.end(),
                                 [](const ParetoRow& r) { return r.dominates_both(); });
    return static_cast<double>(n) / static_cast<double>(rows.size());
  }
};

inline EvalOptions sweep_eval_options(const ExperimentConfig& e, std::size_t workers) {
  EvalOptions opt;
  opt.rounds = e.eval_rounds;
  opt.seed = e.eval_seed;
  opt.workers = workers;
  return opt;
}

// One trained model per lambda; lambda points run in parallel when
// `workers` > 1 (each training then runs single-threaded).
inline ParetoResult run_pareto(const World& world, const TrainConfig& base,
                               const ExperimentConfig& e, const ActorProvider& provider,
                               std::size_t workers = 1) {
  ParetoResult res;
  res.metric = e.pareto_metric;
  const EvalOptions opt = sweep_eval_options(e, workers);
  res.gsp = gsp_curve(world, e.sigma_grid, opt);
  res.ugsp = ugsp_curve(world, e.ugsp_grid, e.ugsp_scale, e.pareto_metric, opt);
  res.rows.resize(e.lambda_grid.size());
  EvalOptions inner = opt;
  inner.workers = e.lambda_grid.size() > 1 && workers > 1 ? 1 : workers;
  parallel_chunks(e.lambda_grid.size(), workers, [&](std::size_t k) {
    TrainConfig cfg = base;
    cfg.weights = pareto_weights(e.lambda_grid[k], e.pareto_metric);
    if (inner.workers == 1) cfg.workers = std::min<std::size_t>(cfg.workers, 1);
    const BidMultiplierNet actor = provider(cfg);
    ParetoRow& row = res.rows[k];
    row.lambda = e.lambda_grid[k];
    row.deep = measure_point(world, DeepGspScorer{&actor}, inner, "DeepGSP", row.lambda);
    row.objective = scalarize(row.deep.normalized, cfg.weights);
  });
  for (auto& row : res.rows) {
    row.dominates_gsp = weakly_dominates(row.deep, res.gsp, res.metric);
    row.dominates_ugsp = weakly_dominates(row.deep, res.ugsp, res.metric);
  }
  return res;
}

inline void write_pareto_csv(std::ostream& os, const ParetoResult& r) {
  const char* xname = kMetricNames[r.metric];
  os << "mechanism,param," << xname << ",RPM,objective,utility,dominates_gsp,dominates_ugsp\n";
  char buf[256];
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "DeepGSP,%.4f,%.8f,%.8f,%.8f,%.8g,%d,%d\n", row.lambda,
                  row.deep.x(r.metric), row.deep.rpm(), row.objective, row.deep.utility,
                  row.dominates_gsp ? 1 : 0, row.dominates_ugsp ? 1 : 0);
    os << buf;
  }
  for (const auto* curve : {&r.gsp, &r.ugsp}) {
    for (const auto& p : *curve) {
      std::snprintf(buf, sizeof buf, "%s,%.4f,%.8f,%.8f,,%.8g,,\n", p.mechanism.c_str(), p.param,
                    p.x(r.metric), p.rpm(), p.utility);
      os << buf;
    }
  }
}

// --- smooth transition ------------------------------------------------------

struct TransitionRow {
  double epsilon = 0.0;
  double objective = 0.0;        // scalarized, normalized metrics
  double utility = 0.0;          // summed mean advertiser utility per round
  double utility_pct = 0.0;      // relative to the benchmark mechanism
  double objective_pct = 0.0;    // relative to the benchmark mechanism
  double min_ad_utility_pct = 0.0;
};

struct TransitionResult {
  std::vector<TransitionRow> rows;
  double benchmark_objective = 0.0;
  double benchmark_utility = 0.0;
  SpearmanResult utility_trend;    // against epsilon; expected negative
  SpearmanResult objective_trend;  // expected positive
};

inline TransitionResult run_transition(const World& world, const TrainConfig& base,
                                       const ExperimentConfig& e, const ActorProvider& provider,
                                       std::size_t workers = 1) {
  require(e.epsilon_grid.size() >= 2, "epsilon sweep needs at least two points");
  TransitionResult res;
  const EvalOptions opt = sweep_eval_options(e, workers);
  const EvalResult bench = evaluate(world, GspScorer{1.0}, opt);
  res.benchmark_objective = scalarize(bench.metrics, e.transition_weights);
  res.benchmark_utility =
      std::accumulate(bench.mean_utility.begin(), bench.mean_utility.end(), 0.0);
  res.rows.resize(e.epsilon_grid.size());
  EvalOptions inner = opt;
  inner.workers = e.epsilon_grid.size() > 1 && workers > 1 ? 1 : workers;
  parallel_chunks(e.epsilon_grid.size(), workers, [&](std::size_t k) {
    TrainConfig cfg = base;
    cfg.weights = e.transition_weights;
    cfg.epsilon = e.epsilon_grid[k];
    if (inner.workers == 1) cfg.workers = std::min<std::size_t>(cfg.workers, 1);
    const BidMultiplierNet actor = provider(cfg);
    const EvalResult r = evaluate(world, DeepGspScorer{&actor}, inner);
    TransitionRow& row = res.rows[k];
    row.epsilon = cfg.epsilon;
    row.objective = scalarize(r.metrics, cfg.weights);
    row.utility = std::accumulate(r.mean_utility.begin(), r.mean_utility.end(), 0.0);
    row.utility_pct = 100.0 * row.utility / res.benchmark_utility;
    row.objective_pct = 100.0 * row.objective / res.benchmark_objective;
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < r.mean_utility.size(); ++i)
      if (bench.mean_utility[i] > 0.0)
        worst = std::min(worst, 100.0 * r.mean_utility[i] / bench.mean_utility[i]);
    row.min_ad_utility_pct = worst;
  });
  std::vector<double> eps, util, obj;
  for (const auto& row : res.rows) {
    eps.push_back(row.epsilon);
    util.push_back(row.utility);
    obj.push_back(row.objective);
  }
  res.utility_trend = spearman_rho(eps, util);
  res.objective_trend = spearman_rho(eps, obj);
  return res;
}

inline void write_transition_csv(std::ostream& os, const TransitionResult& r) {
  os << "epsilon,advertiser_utility_pct,platform_objective_pct,utility,objective,"
        "min_ad_utility_pct\n";
  char buf[256];
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%.4f,%.4f,%.4f,%.8g,%.8g,%.4f\n", row.epsilon,
                  row.utility_pct, row.objective_pct, row.utility, row.objective,
                  row.min_ad_utility_pct);
    os << buf;
  }
}

}  // namespace deepgsp
