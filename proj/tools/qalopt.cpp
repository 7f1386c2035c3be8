// qalopt: simulate landmark panels, estimate restricted quality-adjusted
// lifetime under treatment-length rules, search for the best rule, and run
// replicate studies. Every run writes a manifest (config hash, seed,
// version) beside its outputs; rerunning from a manifest reproduces them.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "qalopt/csv_io.hpp"
#include "qalopt/estimators.hpp"
#include "qalopt/hazards.hpp"
#include "qalopt/optimize.hpp"
#include "qalopt/simgen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace qalopt;

namespace {

constexpr const char* kVersion = "1.0.0";

std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << content;
}

void apply_env_seed(json& cfg) {
  const char* env = std::getenv("QALOPT_SEED");
  if (!env || !cfg.contains("seed")) return;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (end == env || *end != '\0')
    throw std::invalid_argument("QALOPT_SEED is not an unsigned integer: " +
                                std::string(env));
  cfg["seed"] = static_cast<std::uint64_t>(v);
}

void write_manifest(const fs::path& dir, const std::string& cmd,
                    const json& cfg) {
  json m;
  m["version"] = kVersion;
  m["command"] = cmd;
  if (cfg.contains("seed")) m["seed"] = cfg["seed"];
  m["config"] = cfg;
  m["config_hash"] = fnv1a_hex(cfg.dump());
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    out.push_back(std::stoi(tok));
  }
  if (out.empty()) throw std::invalid_argument("empty integer list: '" + s + "'");
  return out;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    out.push_back(std::stod(tok));
  }
  if (out.empty()) throw std::invalid_argument("empty number list: '" + s + "'");
  return out;
}

SimConfig sim_config_from(const json& cfg) {
  const int scenario = cfg.at("scenario").get<int>();
  if (scenario != 1 && scenario != 2)
    throw std::invalid_argument("unknown scenario: " + std::to_string(scenario));
  return SimConfig::landmark_design(scenario, cfg.at("k").get<int>(),
                                    cfg.at("n").get<int>(),
                                    cfg.at("seed").get<std::uint64_t>());
}

fs::path ensure_out_dir(const json& cfg) {
  const fs::path dir = cfg.value("out", std::string("."));
  fs::create_directories(dir);
  return dir;
}

// ---- simulate ----

int run_simulate(const json& cfg) {
  const SimConfig sc = sim_config_from(cfg);
  const fs::path dir = ensure_out_dir(cfg);
  const Panel panel = generate_panel(sc, sc.seed);
  write_panel_csv(panel, (dir / "panel.csv").string(),
                  (dir / "subjects.csv").string());
  write_manifest(dir, "simulate", cfg);
  std::cerr << "wrote " << panel.n() << " subjects to " << dir.string() << "\n";
  return 0;
}

// ---- validate ----

json violations_json(const std::vector<PanelViolation>& violations) {
  json arr = json::array();
  for (const auto& v : violations)
    arr.push_back({{"subject_id", v.subject_id}, {"message", v.message}});
  return arr;
}

int run_validate(const json& cfg) {
  const fs::path dir = ensure_out_dir(cfg);
  const Panel panel = read_panel_csv(cfg.at("panel").get<std::string>(),
                                     cfg.at("subjects").get<std::string>());
  const auto violations = validate_panel(panel);
  json report;
  report["n_subjects"] = panel.n();
  report["violations"] = violations_json(violations);
  const fs::path report_path = dir / "validation.json";
  write_text(report_path, report.dump(2) + "\n");
  write_manifest(dir, "validate", cfg);
  if (!violations.empty()) {
    std::cerr << violations.size()
              << " validation violation(s); report: " << report_path.string()
              << "\n";
    return 3;
  }
  std::cerr << "panel valid (" << panel.n() << " subjects)\n";
  return 0;
}

// ---- shared nuisance plumbing ----

HazardFit zero_hazard(HazardRole role) {
  HazardFit fit;
  fit.kind = HazardFit::Kind::oracle;
  fit.role = role;
  fit.oracle = [](int, const std::vector<double>&, int) { return 0.0; };
  return fit;
}

bool any_treated(const Panel& panel) {
  for (const auto& s : panel.subjects)
    for (int a : s.a)
      if (a == 1) return true;
  return false;
}

bool any_censored(const Panel& panel) {
  for (const auto& s : panel.subjects)
    if (std::isfinite(s.censor_time)) return true;
  return false;
}

FeatureSpec feature_spec_from(const Panel& panel, const json& cfg) {
  FeatureSpec spec;
  spec.stage_poly = cfg.value("stage_poly", false);
  if (cfg.contains("hazard_covariates")) {
    spec.cov_idx = parse_int_list(cfg["hazard_covariates"].get<std::string>());
  } else {
    spec.cov_idx.resize(panel.covariate_names.size());
    for (std::size_t k = 0; k < spec.cov_idx.size(); ++k)
      spec.cov_idx[k] = static_cast<int>(k);
  }
  return spec;
}

HalOptions hal_options_from(const json& cfg, std::uint64_t seed) {
  HalOptions ho;
  if (cfg.contains("hal_knots"))
    ho.max_knots_per_section = cfg["hal_knots"].get<int>();
  if (cfg.contains("hal_lambdas")) ho.n_lambda = cfg["hal_lambdas"].get<int>();
  ho.seed = seed;
  return ho;
}

std::pair<HazardFit, HazardFit> build_fits(const Panel& panel, const json& cfg) {
  const std::string nuisance = cfg.value("nuisance", std::string("logistic"));
  const std::uint64_t seed = cfg.value("seed", std::uint64_t{0});
  if (cfg.value("plug_in_truth", false)) {
    json probe = cfg;
    probe["n"] = static_cast<int>(panel.n());
    return oracle_hazard_fits(sim_config_from(probe));
  }
  const FeatureSpec spec = feature_spec_from(panel, cfg);
  std::pair<HazardFit, HazardFit> fits;
  if (nuisance == "logistic") {
    fits.first = any_treated(panel)
                     ? fit_hazard_logistic(panel, HazardRole::treatment, spec)
                     : zero_hazard(HazardRole::treatment);
    fits.second = any_censored(panel)
                      ? fit_hazard_logistic(panel, HazardRole::censoring, spec)
                      : zero_hazard(HazardRole::censoring);
  } else if (nuisance == "hal" || nuisance == "hal-cv") {
    fits.first =
        any_treated(panel)
            ? fit_hazard_hal(panel, HazardRole::treatment, spec,
                             hal_options_from(cfg, mix_seed(seed, 0x68616c61ULL)))
            : zero_hazard(HazardRole::treatment);
    fits.second =
        any_censored(panel)
            ? fit_hazard_hal(panel, HazardRole::censoring, spec,
                             hal_options_from(cfg, mix_seed(seed, 0x68616c63ULL)))
            : zero_hazard(HazardRole::censoring);
    if (nuisance == "hal-cv") {
      if (fits.first.kind == HazardFit::Kind::hal) fits.first.hal_use_cv = true;
      if (fits.second.kind == HazardFit::Kind::hal)
        fits.second.hal_use_cv = true;
    }
  } else {
    throw std::invalid_argument("unknown nuisance: " + nuisance);
  }
  return fits;
}

Panel load_validated_panel(const json& cfg, const fs::path& dir, int* rc) {
  Panel panel = read_panel_csv(cfg.at("panel").get<std::string>(),
                               cfg.at("subjects").get<std::string>());
  const auto violations = validate_panel(panel);
  if (!violations.empty()) {
    json report;
    report["n_subjects"] = panel.n();
    report["violations"] = violations_json(violations);
    const fs::path report_path = dir / "validation.json";
    write_text(report_path, report.dump(2) + "\n");
    std::cerr << violations.size()
              << " validation violation(s); report: " << report_path.string()
              << "\n";
    *rc = 3;
  }
  return panel;
}

double resolve_lu(const Panel& panel, const json& cfg) {
  const std::string lu = cfg.value("lu", std::string("auto"));
  if (lu == "auto") return default_LU(panel);
  return std::stod(lu);
}

// Returns the bandwidth, or a negative value when the regime's score is
// constant so the smoothed estimator is undefined and IPW must be used.
double resolve_nu(const Panel& panel, const Regime& regime, const json& cfg) {
  const std::string nu = cfg.value("nu", std::string("auto"));
  if (nu != "auto") return std::stod(nu);
  try {
    return default_bandwidth(panel, regime);
  } catch (const std::invalid_argument&) {
    return -1.0;
  }
}

// ---- estimate ----

int run_estimate(const json& cfg) {
  const fs::path dir = ensure_out_dir(cfg);
  int rc = 0;
  const Panel panel = load_validated_panel(cfg, dir, &rc);
  if (rc != 0) return rc;

  const std::vector<double> eta =
      parse_double_list(cfg.at("eta").get<std::string>());
  const std::vector<int> columns =
      parse_int_list(cfg.value("columns", std::string("-1,0,1")));
  const Regime regime = Regime::normalized(eta, columns);

  const auto fits = build_fits(panel, cfg);
  const double L_U = resolve_lu(panel, cfg);
  EstimatorMode mode = cfg.value("mode", std::string("ipw")) == "bc"
                           ? EstimatorMode::bc_ipw
                           : EstimatorMode::ipw;
  std::string note;
  double nu = 0.0;
  if (mode == EstimatorMode::bc_ipw) {
    nu = resolve_nu(panel, regime, cfg);
    if (nu <= 0.0) {
      std::cerr << "warning: nu undefined; falling back to IPW\n";
      note = "nu undefined; falling back to IPW";
      mode = EstimatorMode::ipw;
      nu = 0.0;
    }
  }

  const RqalContext ctx(panel, fits.first, fits.second, L_U);
  const RqalEstimate est = ctx.estimate(regime, mode, nu);
  const SurvCurve curve = ctx.curve(regime, mode, nu);

  json out;
  out["value"] = est.value;
  out["se"] = est.se;
  out["ci"] = {est.ci_lo, est.ci_hi};
  out["mode"] = mode == EstimatorMode::bc_ipw ? "bc" : "ipw";
  out["nuisance"] = cfg.value("plug_in_truth", false)
                        ? "plug-in-truth"
                        : cfg.value("nuisance", std::string("logistic"));
  out["nu"] = nu;
  out["L_U"] = L_U;
  out["eta"] = regime.eta;
  out["columns"] = regime.covariate_subset;
  out["n_subjects"] = panel.n();
  out["note"] = note;
  write_text(dir / "results.json", out.dump(2) + "\n");
  write_text(dir / "curve.csv", curve_csv(curve));
  write_manifest(dir, "estimate", cfg);
  std::cerr << "R = " << format_double(est.value) << " (se "
            << format_double(est.se) << ")\n";
  return 0;
}

// ---- optimize ----

int run_optimize(const json& cfg) {
  const fs::path dir = ensure_out_dir(cfg);
  int rc = 0;
  const Panel panel = load_validated_panel(cfg, dir, &rc);
  if (rc != 0) return rc;

  const std::vector<int> columns =
      parse_int_list(cfg.value("columns", std::string("-1,0,1")));
  const std::size_t d = columns.size();
  const auto fits = build_fits(panel, cfg);
  const double L_U = resolve_lu(panel, cfg);

  EstimatorMode mode = cfg.value("mode", std::string("ipw")) == "bc"
                           ? EstimatorMode::bc_ipw
                           : EstimatorMode::ipw;
  std::string note;
  const std::string nu_opt = cfg.value("nu", std::string("auto"));
  double fixed_nu = 0.0;
  if (mode == EstimatorMode::bc_ipw) {
    const Regime probe =
        Regime::normalized(std::vector<double>(d, 1.0), columns);
    const double nu = resolve_nu(panel, probe, cfg);
    if (nu <= 0.0) {
      std::cerr << "warning: nu undefined; falling back to IPW\n";
      note = "nu undefined; falling back to IPW";
      mode = EstimatorMode::ipw;
    } else if (nu_opt != "auto") {
      fixed_nu = nu;
    }
  }
  const bool bc = mode == EstimatorMode::bc_ipw;

  const RqalContext ctx(panel, fits.first, fits.second, L_U);
  const Objective obj = [&](const std::vector<double>& e) {
    const Regime r{e, columns};
    const double nu =
        bc ? (fixed_nu > 0.0 ? fixed_nu : default_bandwidth(panel, r)) : 0.0;
    return ctx.value(r, mode, nu);
  };
  SearchConfig sc;
  sc.population = cfg.value("population", sc.population);
  sc.generations = cfg.value("generations", sc.generations);
  sc.patience = cfg.value("patience", sc.patience);
  sc.seed = cfg.value("seed", std::uint64_t{0});
  const SearchResult res = maximize(obj, d, sc);

  const Regime best{res.eta, columns};
  const double nu =
      bc ? (fixed_nu > 0.0 ? fixed_nu : default_bandwidth(panel, best)) : 0.0;
  const RqalEstimate est = ctx.estimate(best, mode, nu);

  json out;
  out["eta"] = res.eta;
  out["columns"] = columns;
  out["value"] = est.value;
  out["se"] = est.se;
  out["ci"] = {est.ci_lo, est.ci_hi};
  out["mode"] = bc ? "bc" : "ipw";
  out["nu"] = nu;
  out["L_U"] = L_U;
  out["evaluations"] = res.evaluations;
  out["cache_hits"] = res.cache_hits;
  out["note"] = note;
  write_text(dir / "eta.json", out.dump(2) + "\n");
  write_text(dir / "trace.csv", trace_csv(res.trace));
  write_manifest(dir, "optimize", cfg);
  std::cerr << "best R = " << format_double(est.value) << "\n";
  return 0;
}

// ---- mc-study ----

MethodSpec method_from_name(const std::string& name) {
  MethodSpec m;
  m.name = name;
  std::string stem = name;
  if (stem.size() > 3 && stem.substr(stem.size() - 3) == "-bc") {
    m.mode = EstimatorMode::bc_ipw;
    stem = stem.substr(0, stem.size() - 3);
  } else if (stem.size() > 4 && stem.substr(stem.size() - 4) == "-ipw") {
    m.mode = EstimatorMode::ipw;
    stem = stem.substr(0, stem.size() - 4);
  } else {
    throw std::invalid_argument("method must end in -ipw or -bc: " + name);
  }
  if (stem == "logit")
    m.nuisance = MethodSpec::Nuisance::logistic;
  else if (stem == "hal")
    m.nuisance = MethodSpec::Nuisance::hal_under;
  else if (stem == "hal-cv")
    m.nuisance = MethodSpec::Nuisance::hal_cv;
  else if (stem == "oracle")
    m.nuisance = MethodSpec::Nuisance::oracle;
  else
    throw std::invalid_argument("unknown method: " + name);
  return m;
}

json rep_to_json(const RepMethodResult& r) {
  json j;
  j["ok"] = r.ok;
  j["error"] = r.error;
  j["eta"] = r.eta;
  j["rhat"] = r.rhat;
  j["se"] = r.se;
  j["ci_lo"] = r.ci_lo;
  j["ci_hi"] = r.ci_hi;
  j["true_r"] = r.true_r;
  j["mr"] = r.mr;
  j["lambda_cv"] = r.lambda_cv;
  j["lambda_sel"] = r.lambda_sel;
  return j;
}

double json_double(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN()
                     : j.get<double>();
}

RepMethodResult rep_from_json(const json& j) {
  RepMethodResult r;
  r.ok = j.at("ok").get<bool>();
  r.error = j.at("error").get<std::string>();
  r.eta = j.at("eta").get<std::vector<double>>();
  r.rhat = json_double(j.at("rhat"));
  r.se = json_double(j.at("se"));
  r.ci_lo = json_double(j.at("ci_lo"));
  r.ci_hi = json_double(j.at("ci_hi"));
  r.true_r = json_double(j.at("true_r"));
  r.mr = json_double(j.at("mr"));
  r.lambda_cv = json_double(j.at("lambda_cv"));
  r.lambda_sel = json_double(j.at("lambda_sel"));
  return r;
}

int run_mc_study(const json& cfg) {
  const fs::path dir = ensure_out_dir(cfg);
  const SimConfig sc = sim_config_from(cfg);
  const int reps = cfg.at("reps").get<int>();
  if (reps < 1) throw std::invalid_argument("mc-study: reps >= 1");

  std::vector<MethodSpec> methods;
  {
    std::stringstream ss(cfg.value("methods", std::string("logit-ipw")));
    std::string tok;
    while (std::getline(ss, tok, ','))
      if (!tok.empty()) methods.push_back(method_from_name(tok));
  }
  if (methods.empty()) throw std::invalid_argument("mc-study: no methods");

  StudyOptions opts;
  opts.mc_n_oracle = cfg.value("mc_n_oracle", opts.mc_n_oracle);
  opts.mc_n_rep = cfg.value("mc_n_rep", opts.mc_n_rep);
  opts.search.population = cfg.value("population", opts.search.population);
  opts.search.generations = cfg.value("generations", opts.search.generations);
  opts.search.patience = cfg.value("patience", opts.search.patience);
  if (cfg.contains("hal_knots"))
    opts.hal.max_knots_per_section = cfg["hal_knots"].get<int>();
  if (cfg.contains("hal_lambdas"))
    opts.hal.n_lambda = cfg["hal_lambdas"].get<int>();

  // fixed coverage target
  const OracleValue target =
      oracle_rqal(sc, sc.eta_opt, opts.mc_n_oracle, mix_seed(sc.seed, 1));

  std::vector<std::vector<RepMethodResult>> detail(reps);
  std::vector<bool> have(reps, false);

  const std::string checkpoint = cfg.value("checkpoint", std::string());
  if (!checkpoint.empty() && fs::exists(checkpoint)) {
    std::ifstream in(checkpoint);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      const int rep = j.at("rep").get<int>();
      if (rep < 0 || rep >= reps) continue;
      if (j.at("seed").get<std::uint64_t>() != replicate_seed(sc, rep))
        throw std::invalid_argument(
            "checkpoint does not match this configuration");
      std::vector<RepMethodResult> row;
      for (const auto& jr : j.at("results")) row.push_back(rep_from_json(jr));
      if (row.size() != methods.size())
        throw std::invalid_argument(
            "checkpoint does not match this configuration");
      detail[rep] = std::move(row);
      have[rep] = true;
    }
  }

  std::vector<int> todo;
  for (int r = 0; r < reps; ++r)
    if (!have[r]) todo.push_back(r);
  std::cerr << "mc-study: " << reps - static_cast<int>(todo.size())
            << " replicate(s) from checkpoint, " << todo.size() << " to run\n";

  if (!todo.empty()) {
    std::ofstream ck;
    if (!checkpoint.empty()) {
      fs::create_directories(fs::path(checkpoint).parent_path().empty()
                                 ? "."
                                 : fs::path(checkpoint).parent_path().string());
      ck.open(checkpoint, std::ios::app);
      if (!ck) throw std::runtime_error("cannot write " + checkpoint);
    }
    std::mutex mu;
    std::atomic<std::size_t> next{0};
    int done = 0;
    auto worker = [&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= todo.size()) return;
        const int rep = todo[i];
        auto row = mc_replicate(sc, methods, opts, rep);
        std::lock_guard<std::mutex> lock(mu);
        detail[rep] = std::move(row);
        if (ck.is_open()) {
          json j;
          j["rep"] = rep;
          j["seed"] = replicate_seed(sc, rep);
          j["results"] = json::array();
          for (const auto& r : detail[rep]) j["results"].push_back(rep_to_json(r));
          ck << j.dump() << "\n" << std::flush;
        }
        ++done;
        std::cerr << "replicate " << rep << " done (" << done << "/"
                  << todo.size() << ")\n";
      }
    };
    const int threads =
        std::max(1, std::min<int>(cfg.value("threads", 1),
                                  static_cast<int>(todo.size())));
    std::vector<std::thread> pool;
    for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
  }

  McReport report = aggregate_mc(sc, methods, std::move(detail), target);
  for (const auto& row : report.rows)
    if (row.n_fail > 0 &&
        static_cast<double>(row.n_fail) > 0.1 * static_cast<double>(reps))
      throw std::runtime_error("mc-study: method '" + row.method +
                               "' failed in more than 10% of replicates");

  write_text(dir / "report.csv", mc_report_csv(report));
  json jr = mc_report_json(report);
  if (!cfg.value("detail", false)) jr.erase("replicates");
  write_text(dir / "report.json", jr.dump(2) + "\n");
  write_manifest(dir, "mc-study", cfg);
  std::cerr << "r_opt = " << format_double(report.r_opt) << "\n";
  return 0;
}

// ---- one-stage-study ----

int run_one_stage(const json& cfg) {
  const fs::path dir = ensure_out_dir(cfg);
  HalOptions hal = hal_options_from(cfg, cfg.value("seed", std::uint64_t{0}));
  const OneStageReport rep = appendix_one_stage_study(
      cfg.at("n").get<int>(), cfg.at("reps").get<int>(),
      cfg.value("seed", std::uint64_t{0}), hal);

  std::string csv = "method,bias,sd,se_mean,cp,lambda_mean\n";
  json rows = json::array();
  for (const auto& row : rep.rows) {
    csv += row.method + "," + format_double(row.bias) + "," +
           format_double(row.sd) + "," + format_double(row.se_mean) + "," +
           format_double(row.cp) + "," + format_double(row.lambda_mean) + "\n";
    rows.push_back({{"method", row.method},
                    {"bias", row.bias},
                    {"sd", row.sd},
                    {"se_mean", row.se_mean},
                    {"cp", row.cp},
                    {"lambda_mean", row.lambda_mean}});
  }
  json out;
  out["n"] = rep.n;
  out["reps"] = rep.reps;
  out["rows"] = rows;
  write_text(dir / "report.csv", csv);
  write_text(dir / "report.json", out.dump(2) + "\n");
  write_manifest(dir, "one-stage-study", cfg);
  return 0;
}

int run_command(const std::string& cmd, json cfg) {
  apply_env_seed(cfg);
  if (cmd == "simulate") return run_simulate(cfg);
  if (cmd == "validate") return run_validate(cfg);
  if (cmd == "estimate") return run_estimate(cfg);
  if (cmd == "optimize") return run_optimize(cfg);
  if (cmd == "mc-study") return run_mc_study(cfg);
  if (cmd == "one-stage-study") return run_one_stage(cfg);
  throw std::invalid_argument("unknown command: " + cmd);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"optimal treatment-length strategies for restricted "
               "quality-adjusted lifetime"};
  app.require_subcommand(0, 1);
  std::string from_manifest;
  app.add_option("--from-manifest", from_manifest,
                 "rerun a previous invocation from its manifest");

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate a synthetic panel");
  int sim_scenario = 1, sim_k = 6, sim_n = 500;
  std::uint64_t sim_seed = 0;
  std::string sim_out = ".";
  sim->add_option("--scenario", sim_scenario, "1 or 2");
  sim->add_option("--k", sim_k, "number of landmarks (6 or 25)");
  sim->add_option("--n", sim_n, "number of subjects");
  sim->add_option("--seed", sim_seed, "RNG seed");
  sim->add_option("--out", sim_out, "output directory");

  // validate
  auto* val = app.add_subcommand("validate", "check panel invariants");
  std::string val_panel, val_subjects, val_out = ".";
  val->add_option("--panel", val_panel, "panel CSV")->required();
  val->add_option("--subjects", val_subjects, "subjects CSV")->required();
  val->add_option("--out", val_out, "output directory");

  // shared estimate/optimize options
  std::string est_panel, est_subjects, est_out = ".", est_eta;
  std::string est_columns = "-1,0,1", est_nuisance = "logistic";
  std::string est_mode = "ipw", est_nu = "auto", est_lu = "auto";
  std::string est_hcov;
  bool est_truth = false, est_stage_poly = false;
  int est_scenario = 1, est_k = 6;
  int hal_knots = 0, hal_lambdas = 0;
  std::uint64_t est_seed = 0;
  auto add_common = [&](CLI::App* c, bool needs_eta) {
    c->add_option("--panel", est_panel, "panel CSV")->required();
    c->add_option("--subjects", est_subjects, "subjects CSV")->required();
    c->add_option("--out", est_out, "output directory");
    if (needs_eta)
      c->add_option("--eta", est_eta, "regime coefficients, comma separated")
          ->required();
    c->add_option("--columns", est_columns,
                  "regime covariate columns; -1 is the constant");
    c->add_option("--nuisance", est_nuisance, "logistic|hal|hal-cv");
    c->add_option("--mode", est_mode, "ipw|bc");
    c->add_option("--nu", est_nu, "bandwidth: auto or a number");
    c->add_option("--lu", est_lu, "restriction time: auto or a number");
    c->add_option("--hazard-covariates", est_hcov,
                  "covariate columns for the hazard models");
    c->add_flag("--stage-poly", est_stage_poly,
                "cubic stage polynomial in the hazard features");
    c->add_flag("--plug-in-truth", est_truth,
                "use the generating hazards (requires --scenario/--k)");
    c->add_option("--scenario", est_scenario, "scenario for --plug-in-truth");
    c->add_option("--k", est_k, "landmark count for --plug-in-truth");
    c->add_option("--hal-knots", hal_knots, "knots per section");
    c->add_option("--hal-lambdas", hal_lambdas, "penalty grid size");
    c->add_option("--seed", est_seed, "RNG seed");
  };
  auto* est = app.add_subcommand("estimate", "restricted QAL under a regime");
  add_common(est, true);
  auto* opt = app.add_subcommand("optimize", "search for the best regime");
  add_common(opt, false);
  int opt_population = 60, opt_generations = 80, opt_patience = 0;
  opt->add_option("--population", opt_population, "search population");
  opt->add_option("--generations", opt_generations, "search generations");
  opt->add_option("--patience", opt_patience,
                  "stop after this many stagnant generations (0 = off)");

  // mc-study
  auto* mc = app.add_subcommand("mc-study", "replicate simulation study");
  int mc_scenario = 1, mc_k = 6, mc_n = 500, mc_reps = 200, mc_threads = 1;
  long mc_oracle = 100000, mc_rep_n = 20000;
  int mc_population = 60, mc_generations = 80, mc_patience = 15;
  std::uint64_t mc_seed = 0;
  std::string mc_methods = "logit-ipw", mc_out = ".", mc_checkpoint, mc_preset;
  bool mc_detail = false;
  mc->add_option("--scenario", mc_scenario, "1 or 2");
  mc->add_option("--k", mc_k, "number of landmarks");
  mc->add_option("--n", mc_n, "subjects per replicate");
  mc->add_option("--reps", mc_reps, "number of replicates");
  mc->add_option("--seed", mc_seed, "RNG seed");
  mc->add_option("--methods", mc_methods,
                 "comma list: logit|hal|hal-cv|oracle x -ipw|-bc");
  mc->add_option("--threads", mc_threads, "worker threads");
  mc->add_option("--out", mc_out, "output directory");
  mc->add_option("--checkpoint", mc_checkpoint, "JSONL checkpoint file");
  mc->add_option("--preset", mc_preset, "named study preset");
  mc->add_option("--mc-n-oracle", mc_oracle, "draws for the fixed target");
  mc->add_option("--mc-n-rep", mc_rep_n, "draws per replicate evaluation");
  mc->add_option("--population", mc_population, "search population");
  mc->add_option("--generations", mc_generations, "search generations");
  mc->add_option("--patience", mc_patience, "search patience");
  mc->add_option("--hal-knots", hal_knots, "knots per section");
  mc->add_option("--hal-lambdas", hal_lambdas, "penalty grid size");
  mc->add_flag("--detail", mc_detail, "include per-replicate JSON detail");

  // one-stage-study
  auto* os = app.add_subcommand("one-stage-study",
                                "single-decision benchmark with known truth");
  int os_n = 500, os_reps = 200;
  std::uint64_t os_seed = 0;
  std::string os_out = ".";
  os->add_option("--n", os_n, "subjects per replicate");
  os->add_option("--reps", os_reps, "number of replicates");
  os->add_option("--seed", os_seed, "RNG seed");
  os->add_option("--out", os_out, "output directory");
  os->add_option("--hal-knots", hal_knots, "knots per section");
  os->add_option("--hal-lambdas", hal_lambdas, "penalty grid size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (!from_manifest.empty()) {
      std::ifstream in(from_manifest);
      if (!in)
        throw std::invalid_argument("cannot read manifest: " + from_manifest);
      const json m = json::parse(in);
      return run_command(m.at("command").get<std::string>(), m.at("config"));
    }

    json cfg;
    auto put_common = [&](bool with_eta) {
      cfg["panel"] = est_panel;
      cfg["subjects"] = est_subjects;
      cfg["out"] = est_out;
      if (with_eta) cfg["eta"] = est_eta;
      cfg["columns"] = est_columns;
      cfg["nuisance"] = est_nuisance;
      cfg["mode"] = est_mode;
      cfg["nu"] = est_nu;
      cfg["lu"] = est_lu;
      if (!est_hcov.empty()) cfg["hazard_covariates"] = est_hcov;
      cfg["stage_poly"] = est_stage_poly;
      cfg["plug_in_truth"] = est_truth;
      cfg["scenario"] = est_scenario;
      cfg["k"] = est_k;
      if (hal_knots > 0) cfg["hal_knots"] = hal_knots;
      if (hal_lambdas > 0) cfg["hal_lambdas"] = hal_lambdas;
      cfg["seed"] = est_seed;
    };
    if (sim->parsed()) {
      cfg = {{"scenario", sim_scenario}, {"k", sim_k},   {"n", sim_n},
             {"seed", sim_seed},         {"out", sim_out}};
      return run_command("simulate", cfg);
    }
    if (val->parsed()) {
      cfg = {{"panel", val_panel}, {"subjects", val_subjects}, {"out", val_out}};
      return run_command("validate", cfg);
    }
    if (est->parsed()) {
      put_common(true);
      return run_command("estimate", cfg);
    }
    if (opt->parsed()) {
      put_common(false);
      cfg["population"] = opt_population;
      cfg["generations"] = opt_generations;
      if (opt_patience > 0) cfg["patience"] = opt_patience;
      return run_command("optimize", cfg);
    }
    if (mc->parsed()) {
      if (!mc_preset.empty()) {
        if (mc_preset != "table1-hal-bc-n500")
          throw std::invalid_argument("unknown preset: " + mc_preset);
        mc_scenario = 2;
        mc_k = 6;
        mc_n = 500;
        mc_methods = "hal-bc";
      }
      cfg["scenario"] = mc_scenario;
      cfg["k"] = mc_k;
      cfg["n"] = mc_n;
      cfg["reps"] = mc_reps;
      cfg["seed"] = mc_seed;
      cfg["methods"] = mc_methods;
      cfg["threads"] = mc_threads;
      cfg["out"] = mc_out;
      if (!mc_checkpoint.empty()) cfg["checkpoint"] = mc_checkpoint;
      cfg["mc_n_oracle"] = mc_oracle;
      cfg["mc_n_rep"] = mc_rep_n;
      cfg["population"] = mc_population;
      cfg["generations"] = mc_generations;
      cfg["patience"] = mc_patience;
      if (hal_knots > 0) cfg["hal_knots"] = hal_knots;
      if (hal_lambdas > 0) cfg["hal_lambdas"] = hal_lambdas;
      cfg["detail"] = mc_detail;
      return run_command("mc-study", cfg);
    }
    if (os->parsed()) {
      cfg = {{"n", os_n}, {"reps", os_reps}, {"seed", os_seed}, {"out", os_out}};
      if (hal_knots > 0) cfg["hal_knots"] = hal_knots;
      if (hal_lambdas > 0) cfg["hal_lambdas"] = hal_lambdas;
      return run_command("one-stage-study", cfg);
    }
    std::cerr << app.help();
    return 2;
  } catch (const CsvError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}
