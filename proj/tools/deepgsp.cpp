// deepgsp: command-line front end.
//
// Exit codes: 0 success, 1 validation error, 2 runtime failure,
// 3 worked-example mismatch.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "deepgsp/config.hpp"
#include "deepgsp/experiment.hpp"
#include "deepgsp/manifest.hpp"

namespace fs = std::filesystem;
using namespace deepgsp;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitGolden = 3;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::size_t workers = 1;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "INI configuration file");
  cmd->add_option("--seed", o.seed, "seed override for the command's random draws");
  cmd->add_option("--out", o.out, "output directory")->capture_default_str();
  cmd->add_option("--workers", o.workers, "worker threads")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
}

// Files written by one command; hashed into the manifest at the end.
class Outputs {
 public:
  explicit Outputs(const std::string& dir) : dir_(dir) { fs::create_directories(dir_); }

  template <class Fn>
  void write(const std::string& rel, Fn&& fn) {
    const fs::path p = dir_ / rel;
    fs::create_directories(p.parent_path());
    std::ofstream os(p, std::ios::binary);
    if (!os) throw Error(ErrorKind::kIo, "cannot write " + p.string());
    fn(os);
    os.close();
    note(rel);
  }

  void note(const std::string& rel) {
    std::lock_guard<std::mutex> lock(mu_);
    files_.push_back(rel);
  }

  const fs::path& dir() const { return dir_; }

  void finish() {
    write_manifest(dir_, files_);
    std::cout << "wrote " << files_.size() << " files and MANIFEST to " << dir_.string() << '\n';
  }

 private:
  fs::path dir_;
  std::vector<std::string> files_;
  std::mutex mu_;
};

ConfigBundle resolve(const CommonOptions& o) {
  Problems p;
  ConfigBundle c;
  if (!o.config.empty()) c = load_config(o.config, p);
  c.train.workers = o.workers;
  c.audit.workers = o.workers;
  p.raise_if_any();
  return c;
}

void echo(const ConfigBundle& c, const CommonOptions& o, std::uint64_t seed) {
  std::cout << "# config: " << (o.config.empty() ? "(defaults)" : o.config) << '\n'
            << format_config(c) << "# seed = " << seed << '\n'
            << "# workers = " << o.workers << "\n\n";
}

std::string short_hash(const std::string& text) { return sha256_hex(text).substr(0, 16); }

// Trains on a cache miss; models live under <out>/cache keyed by the world and
// training configuration.
ActorProvider cached_provider(const World& world, Outputs& out) {
  return [&world, &out](const TrainConfig& cfg) {
    const std::string key = short_hash(format_world_config(world.config)) + "_" +
                            short_hash(format_train_config(cfg));
    const std::string rel = "cache/" + key + ".actor";
    const fs::path path = out.dir() / rel;
    if (fs::exists(path)) {
      std::cout << "cache hit " << rel << '\n';
      out.note(rel);
      return load_actor(path.string());
    }
    TrainResult r = train(world, cfg);
    fs::create_directories(path.parent_path());
    save_actor(path.string(), r.actor);
    out.note(rel);
    return std::move(r.actor);
  };
}

int cmd_table1(const CommonOptions& o) {
  const Table1Report r = run_table1();
  write_table1(std::cout, r);
  Outputs out(o.out);
  out.write("table1.txt", [&](std::ostream& os) { write_table1(os, r); });
  out.finish();
  return r.pass() ? 0 : kExitGolden;
}

int cmd_gen_world(const CommonOptions& o) {
  ConfigBundle c = resolve(o);
  if (o.seed) c.world.seed = *o.seed;
  echo(c, o, c.world.seed);
  const World w = make_world(c.world);
  Outputs out(o.out);
  out.write("world.csv", [&](std::ostream& os) { write_world_csv(os, w); });
  out.write("normalizers.csv", [&](std::ostream& os) { write_normalizers_csv(os, w.normalizers); });
  out.write("config.ini", [&](std::ostream& os) { os << format_config(c); });
  out.finish();
  return 0;
}

int cmd_train(const CommonOptions& o) {
  ConfigBundle c = resolve(o);
  if (!c.has("train.weights"))
    throw Error(ErrorKind::kValidation, "train.weights is required (RPM CTR ACR CVR GPM)");
  if (o.seed) c.train.seed = *o.seed;
  echo(c, o, c.train.seed);
  const World w = make_world(c.world);
  const TrainResult r = train(w, c.train);
  Outputs out(o.out);
  out.write("actor.ckpt", [&](std::ostream& os) { save_actor(os, r.actor); });
  out.write("critic.ckpt", [&](std::ostream& os) { save_critic(os, r.critic); });
  out.write("train_report.csv",
            [&](std::ostream& os) { write_train_report_csv(os, r.report); });
  out.write("config.ini", [&](std::ostream& os) { os << format_config(c); });
  std::cout << "best checkpoint at iteration " << r.best_iteration << " of "
            << c.train.iterations << ", critic pretrain validation MSE "
            << r.pretrain.validation_mse << '\n';
  out.finish();
  return 0;
}

void write_eval_row(std::ostream& os, const std::string& name, const EvalResult& r) {
  char buf[320];
  std::snprintf(buf, sizeof buf, "%s,%.8f,%.8f,%.8f,%.8f,%.8f,%.8g\n", name.c_str(),
                r.metrics.normalized[kRpm], r.metrics.normalized[kCtr],
                r.metrics.normalized[kAcr], r.metrics.normalized[kCvr],
                r.metrics.normalized[kGpm], r.mean_ppc);
  os << buf;
}

int cmd_evaluate(const CommonOptions& o, const std::vector<std::string>& models) {
  ConfigBundle c = resolve(o);
  if (o.seed) c.experiment.eval_seed = *o.seed;
  echo(c, o, c.experiment.eval_seed);
  const World w = make_world(c.world);
  const EvalOptions opt = sweep_eval_options(c.experiment, o.workers);
  std::ostringstream csv;
  csv << "mechanism,RPM,CTR,ACR,CVR,GPM,mean_ppc\n";
  for (double s : c.experiment.sigma_grid)
    write_eval_row(csv, "GSP(sigma=" + detail::format_double(s) + ")",
                   evaluate(w, GspScorer{s}, opt));
  write_eval_row(csv, "fixed", evaluate(w, FixedScorer{}, opt));
  for (const auto& m : models) {
    const BidMultiplierNet actor = load_actor(m);
    require(actor.feature_len() == w.feature_len(), "model " + m + " does not fit this world");
    write_eval_row(csv, "DeepGSP(" + fs::path(m).stem().string() + ")",
                   evaluate(w, DeepGspScorer{&actor}, opt));
  }
  std::cout << csv.str();
  Outputs out(o.out);
  out.write("evaluate.csv", [&](std::ostream& os) { os << csv.str(); });
  out.finish();
  return 0;
}

int cmd_pareto(const CommonOptions& o) {
  ConfigBundle c = resolve(o);
  if (o.seed) c.train.seed = *o.seed;
  echo(c, o, c.train.seed);
  const World w = make_world(c.world);
  Outputs out(o.out);
  const ParetoResult r = run_pareto(w, c.train, c.experiment, cached_provider(w, out), o.workers);
  std::ostringstream csv;
  write_pareto_csv(csv, r);
  std::cout << csv.str();
  std::printf("weak dominance over both baselines: %.0f%% of lambda points\n",
              100.0 * r.dominance_fraction());
  out.write("pareto.csv", [&](std::ostream& os) { os << csv.str(); });
  out.write("config.ini", [&](std::ostream& os) { os << format_config(c); });
  out.finish();
  return 0;
}

int cmd_transition(const CommonOptions& o) {
  ConfigBundle c = resolve(o);
  if (o.seed) c.train.seed = *o.seed;
  echo(c, o, c.train.seed);
  const World w = make_world(c.world);
  Outputs out(o.out);
  const TransitionResult r =
      run_transition(w, c.train, c.experiment, cached_provider(w, out), o.workers);
  std::ostringstream csv;
  write_transition_csv(csv, r);
  std::cout << csv.str();
  std::printf("spearman(epsilon, utility) = %.3f  spearman(epsilon, objective) = %.3f\n",
              r.utility_trend.rho, r.objective_trend.rho);
  out.write("transition.csv", [&](std::ostream& os) { os << csv.str(); });
  out.write("config.ini", [&](std::ostream& os) { os << format_config(c); });
  out.finish();
  return 0;
}

int cmd_audit(const CommonOptions& o, const std::vector<std::string>& models) {
  ConfigBundle c = resolve(o);
  if (o.seed) c.audit.seed = *o.seed;
  echo(c, o, c.audit.seed);
  const World w = make_world(c.world);
  const AuditConfig& a = c.audit;
  const auto states = sample_states(w, a.tm_rounds, a.seed);
  std::vector<AuditRow> rows;
  for (const auto& m : models) {
    const BidMultiplierNet actor = load_actor(m);
    require(actor.feature_len() == w.feature_len(), "model " + m + " does not fit this world");
    const DeepGspScorer scorer{&actor};
    AuditRow row;
    row.label = fs::path(m).stem().string();
    row.mono = monotonicity_metric(actor, states, a);
    row.per = payment_error_rate(w, scorer, a.per_rounds, a.seed);
    row.isic = i_sic(w, scorer, IsicPayment::kMultiplier, a.alpha, a.isic_auctions, a.seed,
                     a.workers);
    rows.push_back(std::move(row));
  }
  write_audit_table(std::cout, rows);
  Outputs out(o.out);
  out.write("audit.csv", [&](std::ostream& os) { write_audit_csv(os, rows); });
  out.write("audit.txt", [&](std::ostream& os) { write_audit_table(os, rows); });
  out.finish();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep GSP auction laboratory"};
  app.require_subcommand(1);
  CommonOptions o;
  std::vector<std::string> models;

  auto* table1 = app.add_subcommand("table1", "reproduce the three-ad worked example");
  auto* gen = app.add_subcommand("gen-world", "draw a synthetic advertiser population");
  auto* trn = app.add_subcommand("train", "train a rank-score model");
  auto* ev = app.add_subcommand("evaluate", "evaluate baselines and saved models");
  auto* par = app.add_subcommand("pareto", "RPM-vs-X trade-off sweep");
  auto* tr = app.add_subcommand("transition", "epsilon sweep of the utility constraint");
  auto* aud = app.add_subcommand("audit", "monotonicity, payment error and IC audit");
  for (auto* cmd : {table1, gen, trn, ev, par, tr, aud}) add_common(cmd, o);
  ev->add_option("--model", models, "actor checkpoint(s)")->check(CLI::ExistingFile);
  aud->add_option("--model", models, "actor checkpoint(s)")
      ->required()
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*table1) return cmd_table1(o);
    if (*gen) return cmd_gen_world(o);
    if (*trn) return cmd_train(o);
    if (*ev) return cmd_evaluate(o, models);
    if (*par) return cmd_pareto(o);
    if (*tr) return cmd_transition(o);
    if (*aud) return cmd_audit(o, models);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.kind() == ErrorKind::kValidation ? kExitValidation : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitRuntime;
}
