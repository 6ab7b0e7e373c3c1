#pragma once

// Plain-text (INI) configuration: reading with exhaustive error collection and
// a canonical writer used both to echo the resolved config and to hash it.

#include <array>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <utility>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "deepgsp/audit.hpp"
#include "deepgsp/error.hpp"
#include "deepgsp/experiment.hpp"
#include "deepgsp/simulator.hpp"
#include "deepgsp/trainer.hpp"

namespace deepgsp {

struct ConfigBundle {
  WorldConfig world;
  TrainConfig train;
  AuditConfig audit;
  ExperimentConfig experiment;
  std::set<std::string> present;  // "section.key" entries found in the file

  bool has(const std::string& key) const { return present.count(key) != 0; }

  void collect_problems(Problems& p) const {
    world.collect_problems(p);
    train.collect_problems(p);
    audit.collect_problems(p);
    experiment.collect_problems(p);
  }
};

namespace detail {

inline std::vector<double> parse_list(const std::string& text) {
  std::string t = text;
  for (char& ch : t)
    if (ch == ',') ch = ' ';
  std::istringstream is(t);
  std::vector<double> out;
  std::string tok;
  while (is >> tok) {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    out.push_back(v);
  }
  return out;
}

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string format_list(std::span<const double> v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ' ';
    s += format_double(v[i]);
  }
  return s;
}

inline const char* metric_name(Metric m) { return kMetricNames[m]; }

inline bool parse_metric(const std::string& s, Metric& m) {
  for (std::size_t j = 0; j < kNumMetrics; ++j)
    if (s == kMetricNames[j]) {
      m = static_cast<Metric>(j);
      return true;
    }
  return false;
}

inline constexpr std::array<std::pair<UtilityReference, const char*>, 3> kReferenceNames{{
    {UtilityReference::kCounterfactual, "counterfactual"},
    {UtilityReference::kPeriodMean, "period_mean"},
    {UtilityReference::kPeriodCounterfactual, "period_counterfactual"},
}};

inline std::string reference_name(UtilityReference r) {
  for (const auto& [ref, name] : kReferenceNames)
    if (ref == r) return name;
  return "?";
}

inline bool parse_reference(const std::string& s, UtilityReference& r) {
  for (const auto& [ref, name] : kReferenceNames)
    if (s == name) {
      r = ref;
      return true;
    }
  return false;
}

class IniReader {
 public:
  IniReader(const boost::property_tree::ptree& tree, Problems& problems,
            std::set<std::string>& present)
      : tree_(tree), problems_(problems), present_(present) {}

  template <class T>
  void get(const std::string& section, const std::string& key, T& target) {
    known_[section].insert(key);
    const auto* raw = find(section, key);
    if (!raw) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (*raw == "true" || *raw == "1")
          target = true;
        else if (*raw == "false" || *raw == "0")
          target = false;
        else
          throw std::invalid_argument(*raw);
      } else if constexpr (std::is_same_v<T, std::vector<double>>) {
        target = parse_list(*raw);
      } else if constexpr (std::is_floating_point_v<T>) {
        std::size_t used = 0;
        target = std::stod(*raw, &used);
        if (used != raw->size()) throw std::invalid_argument(*raw);
      } else {
        std::size_t used = 0;
        const long long v = std::stoll(*raw, &used);
        if (used != raw->size() || v < 0) throw std::invalid_argument(*raw);
        target = static_cast<T>(v);
      }
    } catch (const std::exception&) {
      problems_.add(section + "." + key + ": cannot parse '" + *raw + "'");
    }
  }

  void get_weights(const std::string& section, const std::string& key,
                   std::array<double, kNumMetrics>& target) {
    std::vector<double> v;
    const bool had = find(section, key) != nullptr;
    get(section, key, v);
    if (!had) return;
    if (v.size() != kNumMetrics) {
      problems_.add(section + "." + key + ": expected 5 weights (RPM CTR ACR CVR GPM)");
      return;
    }
    std::copy(v.begin(), v.end(), target.begin());
  }

  void get_string(const std::string& section, const std::string& key, std::string& target) {
    known_[section].insert(key);
    if (const auto* raw = find(section, key)) target = *raw;
  }

  // Flags keys and sections that nothing asked for.
  void report_unknown() {
    for (const auto& [section, sub] : tree_) {
      auto it = known_.find(section);
      if (it == known_.end()) {
        problems_.add("unknown section [" + section + "]");
        continue;
      }
      for (const auto& [key, value] : sub)
        if (!it->second.count(key)) problems_.add("unknown key " + section + "." + key);
    }
  }

 private:
  const std::string* find(const std::string& section, const std::string& key) {
    auto sec = tree_.find(section);
    if (sec == tree_.not_found()) return nullptr;
    auto it = sec->second.find(key);
    if (it == sec->second.not_found()) return nullptr;
    present_.insert(section + "." + key);
    return &it->second.data();
  }

  const boost::property_tree::ptree& tree_;
  Problems& problems_;
  std::set<std::string>& present_;
  std::map<std::string, std::set<std::string>> known_;
};

}  // namespace detail

// Parses an INI document over the defaults. Parse errors, unknown keys and
// every validation failure are collected into `problems`.
inline ConfigBundle parse_config(std::istream& in, Problems& problems) {
  ConfigBundle c;
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    problems.add(std::string("config syntax: ") + e.what());
    return c;
  }
  detail::IniReader r(tree, problems, c.present);
  auto& w = c.world;
  r.get("world", "seed", w.seed);
  r.get("world", "advertisers", w.advertisers);
  r.get("world", "slots", w.slots);
  r.get("world", "slot_factors", w.slot_factors);
  r.get("world", "user_features", w.user_features);
  r.get("world", "categories", w.categories);
  r.get("world", "identical_advertisers", w.identical_advertisers);
  r.get("world", "normalizer_headroom", w.normalizer_headroom);
  r.get("world", "calibration_rounds", w.calibration_rounds);
  r.get("valuation", "mu_mean", w.valuation.mu_mean);
  r.get("valuation", "mu_spread", w.valuation.mu_spread);
  r.get("valuation", "sigma", w.valuation.sigma);
  r.get("response", "ctr_a", w.response.ctr.a);
  r.get("response", "ctr_b", w.response.ctr.b);
  r.get("response", "cart_a", w.response.cart.a);
  r.get("response", "cart_b", w.response.cart.b);
  r.get("response", "order_a", w.response.order.a);
  r.get("response", "order_b", w.response.order.b);
  r.get("response", "price_mu", w.response.price_mu);
  r.get("response", "price_sigma", w.response.price_sigma);
  r.get("response", "user_affinity", w.response.user_affinity);
  r.get("prediction", "noise", w.prediction.noise);
  r.get("prediction", "bias_share", w.prediction.bias_share);
  std::string mode = "truthful";
  r.get_string("bidding", "mode", mode);
  if (mode == "truthful")
    w.bidding = BiddingMode::kTruthful;
  else if (mode == "shaded")
    w.bidding = BiddingMode::kShaded;
  else
    problems.add("bidding.mode must be truthful or shaded");
  r.get("bidding", "shade_factor", w.shade_factor);

  auto& t = c.train;
  r.get_weights("train", "weights", t.weights);
  r.get("train", "epsilon", t.epsilon);
  r.get("train", "eta", t.eta);
  r.get("train", "gamma", t.gamma);
  r.get("train", "kappa", t.kappa);
  r.get("train", "noise_std", t.noise_std);
  r.get("train", "noise_decay", t.noise_decay);
  r.get("train", "noise_min", t.noise_min);
  r.get("train", "batch_rounds", t.batch_rounds);
  std::string reference = detail::reference_name(t.reference);
  r.get_string("train", "utility_reference", reference);
  if (!detail::parse_reference(reference, t.reference))
    problems.add(
        "train.utility_reference must be counterfactual, period_mean or period_counterfactual");
  r.get("train", "shared_penalty", t.shared_penalty);
  r.get("train", "period_rounds", t.period_rounds);
  r.get("train", "exempt_non_winners", t.exempt_non_winners);
  r.get("train", "actor_lr", t.actor_lr);
  r.get("train", "critic_lr", t.critic_lr);
  r.get("train", "critic_steps", t.critic_steps);
  r.get("train", "pretrain_rounds", t.pretrain_rounds);
  r.get("train", "pretrain_epochs", t.pretrain_epochs);
  r.get("train", "pretrain_minibatch", t.pretrain_minibatch);
  r.get("train", "warm_start_steps", t.warm_start_steps);
  r.get("train", "iterations", t.iterations);
  r.get("train", "benchmark_rounds", t.benchmark_rounds);
  r.get("train", "eval_every", t.eval_every);
  r.get("train", "eval_rounds", t.eval_rounds);
  r.get("train", "eval_seed", t.eval_seed);
  r.get("train", "buffer_capacity", t.buffer_capacity);
  r.get("train", "critic_minibatch", t.critic_minibatch);
  r.get("train", "select_best", t.select_best);
  r.get("train", "seed", t.seed);
  std::vector<double> hidden;
  r.get("train", "hidden", hidden);
  if (!hidden.empty()) {
    t.arch.hidden.clear();
    for (double h : hidden) {
      if (h < 1 || h != std::floor(h))
        problems.add("train.hidden entries must be positive integers");
      else
        t.arch.hidden.push_back(static_cast<std::size_t>(h));
    }
  }

  auto& a = c.audit;
  r.get("audit", "grid_size", a.grid_size);
  r.get("audit", "grid_lo", a.grid_lo);
  r.get("audit", "grid_hi", a.grid_hi);
  r.get("audit", "tm_rounds", a.tm_rounds);
  r.get("audit", "per_rounds", a.per_rounds);
  r.get("audit", "alpha", a.alpha);
  r.get("audit", "isic_auctions", a.isic_auctions);
  r.get("audit", "seed", a.seed);

  auto& e = c.experiment;
  r.get("experiment", "lambda_grid", e.lambda_grid);
  r.get("experiment", "sigma_grid", e.sigma_grid);
  r.get("experiment", "ugsp_grid", e.ugsp_grid);
  r.get("experiment", "ugsp_scale", e.ugsp_scale);
  r.get("experiment", "epsilon_grid", e.epsilon_grid);
  std::string metric = detail::metric_name(e.pareto_metric);
  r.get_string("experiment", "pareto_metric", metric);
  if (!detail::parse_metric(metric, e.pareto_metric))
    problems.add("experiment.pareto_metric: unknown metric '" + metric + "'");
  r.get_weights("experiment", "transition_weights", e.transition_weights);
  r.get("experiment", "eval_rounds", e.eval_rounds);
  r.get("experiment", "eval_seed", e.eval_seed);

  r.report_unknown();
  c.collect_problems(problems);
  return c;
}

inline ConfigBundle load_config(const std::string& path, Problems& problems) {
  std::ifstream in(path);
  if (!in) {
    problems.add("cannot open config file " + path);
    return {};
  }
  return parse_config(in, problems);
}

// Canonical INI text: fixed key order, round-trip precision. The sections are
// also hashed on their own to key cached models.
inline std::string format_world_config(const WorldConfig& w) {
  using detail::format_double;
  using detail::format_list;
  std::ostringstream os;
  os << "[world]\n"
     << "seed = " << w.seed << '\n'
     << "advertisers = " << w.advertisers << '\n'
     << "slots = " << w.slots << '\n'
     << "slot_factors = " << format_list(w.slot_factors) << '\n'
     << "user_features = " << w.user_features << '\n'
     << "categories = " << w.categories << '\n'
     << "identical_advertisers = " << (w.identical_advertisers ? "true" : "false") << '\n'
     << "normalizer_headroom = " << format_double(w.normalizer_headroom) << '\n'
     << "calibration_rounds = " << w.calibration_rounds << "\n\n";
  os << "[valuation]\n"
     << "mu_mean = " << format_double(w.valuation.mu_mean) << '\n'
     << "mu_spread = " << format_double(w.valuation.mu_spread) << '\n'
     << "sigma = " << format_double(w.valuation.sigma) << "\n\n";
  os << "[response]\n"
     << "ctr_a = " << format_double(w.response.ctr.a) << '\n'
     << "ctr_b = " << format_double(w.response.ctr.b) << '\n'
     << "cart_a = " << format_double(w.response.cart.a) << '\n'
     << "cart_b = " << format_double(w.response.cart.b) << '\n'
     << "order_a = " << format_double(w.response.order.a) << '\n'
     << "order_b = " << format_double(w.response.order.b) << '\n'
     << "price_mu = " << format_double(w.response.price_mu) << '\n'
     << "price_sigma = " << format_double(w.response.price_sigma) << '\n'
     << "user_affinity = " << format_double(w.response.user_affinity) << "\n\n";
  os << "[prediction]\n"
     << "noise = " << format_double(w.prediction.noise) << '\n'
     << "bias_share = " << format_double(w.prediction.bias_share) << "\n\n";
  os << "[bidding]\n"
     << "mode = " << (w.bidding == BiddingMode::kTruthful ? "truthful" : "shaded") << '\n'
     << "shade_factor = " << format_double(w.shade_factor) << "\n\n";
  return os.str();
}

inline std::string format_train_config(const TrainConfig& t) {
  using detail::format_double;
  using detail::format_list;
  std::ostringstream os;
  std::vector<double> hidden(t.arch.hidden.begin(), t.arch.hidden.end());
  os << "[train]\n"
     << "weights = " << format_list(t.weights) << '\n'
     << "epsilon = " << format_double(t.epsilon) << '\n'
     << "eta = " << format_double(t.eta) << '\n'
     << "gamma = " << format_double(t.gamma) << '\n'
     << "kappa = " << format_double(t.kappa) << '\n'
     << "noise_std = " << format_double(t.noise_std) << '\n'
     << "noise_decay = " << format_double(t.noise_decay) << '\n'
     << "noise_min = " << format_double(t.noise_min) << '\n'
     << "batch_rounds = " << t.batch_rounds << '\n'
     << "utility_reference = " << detail::reference_name(t.reference) << '\n'
     << "shared_penalty = " << (t.shared_penalty ? "true" : "false") << '\n'
     << "period_rounds = " << t.period_rounds << '\n'
     << "exempt_non_winners = " << (t.exempt_non_winners ? "true" : "false") << '\n'
     << "actor_lr = " << format_double(t.actor_lr) << '\n'
     << "critic_lr = " << format_double(t.critic_lr) << '\n'
     << "critic_steps = " << t.critic_steps << '\n'
     << "pretrain_rounds = " << t.pretrain_rounds << '\n'
     << "pretrain_epochs = " << t.pretrain_epochs << '\n'
     << "pretrain_minibatch = " << t.pretrain_minibatch << '\n'
     << "warm_start_steps = " << t.warm_start_steps << '\n'
     << "iterations = " << t.iterations << '\n'
     << "benchmark_rounds = " << t.benchmark_rounds << '\n'
     << "eval_every = " << t.eval_every << '\n'
     << "eval_rounds = " << t.eval_rounds << '\n'
     << "eval_seed = " << t.eval_seed << '\n'
     << "buffer_capacity = " << t.buffer_capacity << '\n'
     << "critic_minibatch = " << t.critic_minibatch << '\n'
     << "select_best = " << (t.select_best ? "true" : "false") << '\n'
     << "seed = " << t.seed << '\n'
     << "hidden = " << format_list(hidden) << "\n\n";
  return os.str();
}

inline std::string format_config(const ConfigBundle& c) {
  using detail::format_double;
  using detail::format_list;
  std::ostringstream os;
  os << format_world_config(c.world) << format_train_config(c.train);
  const auto& a = c.audit;
  os << "[audit]\n"
     << "grid_size = " << a.grid_size << '\n'
     << "grid_lo = " << format_double(a.grid_lo) << '\n'
     << "grid_hi = " << format_double(a.grid_hi) << '\n'
     << "tm_rounds = " << a.tm_rounds << '\n'
     << "per_rounds = " << a.per_rounds << '\n'
     << "alpha = " << format_double(a.alpha) << '\n'
     << "isic_auctions = " << a.isic_auctions << '\n'
     << "seed = " << a.seed << "\n\n";
  const auto& e = c.experiment;
  os << "[experiment]\n"
     << "lambda_grid = " << format_list(e.lambda_grid) << '\n'
     << "sigma_grid = " << format_list(e.sigma_grid) << '\n'
     << "ugsp_grid = " << format_list(e.ugsp_grid) << '\n'
     << "ugsp_scale = " << format_double(e.ugsp_scale) << '\n'
     << "epsilon_grid = " << format_list(e.epsilon_grid) << '\n'
     << "pareto_metric = " << detail::metric_name(e.pareto_metric) << '\n'
     << "transition_weights = " << format_list(e.transition_weights) << '\n'
     << "eval_rounds = " << e.eval_rounds << '\n'
     << "eval_seed = " << e.eval_seed << '\n';
  return os.str();
}

}  // namespace deepgsp
