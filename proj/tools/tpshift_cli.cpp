// Command-line front end: estimate, simulate, density fit / predict.
//
// Exit codes: 0 success, 1 data or model error, 2 usage or config error.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tpshift/data.hpp"
#include "tpshift/density.hpp"
#include "tpshift/estimators.hpp"
#include "tpshift/io.hpp"
#include "tpshift/msm.hpp"
#include "tpshift/sim.hpp"

namespace fs = std::filesystem;
using namespace tpshift;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Manifest {
  std::string command;
  json config;
  std::uint64_t seed = 0;
  std::string started = utc_now();
  std::vector<std::string> outputs;

  void write(const fs::path& path) const {
    json j = {{"command", command},
              {"config", config},
              {"config_digest", config_digest(config)},
              {"seed", seed},
              {"tool_version", kVersion},
              {"started", started},
              {"finished", utc_now()},
              {"outputs", outputs}};
    std::ofstream(path) << j.dump(2) << '\n';
  }
};

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw ConfigError("cannot write '" + p.string() + "'");
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ConfigError("cannot create output directory '" + dir.string() + "'");
}

// ---------------------------------------------------------------------------

struct EstimateArgs {
  std::string data;
  std::vector<double> deltas;
  std::string estimator = "tmle";
  std::string variant = "augmented";
  std::string g_method = "glm";
  std::string q_method = "glm";
  std::string density_method = "gaussian";
  std::string eif_method = "glm";
  std::string support_mode = "empirical_max";
  double alpha = 0.05;
  double zeta = 0.01;
  std::uint64_t seed = 1;
  std::string out;
  bool msm = false;
  bool scale_outcome = false;
};

int cmd_estimate(const EstimateArgs& a) {
  if (a.deltas.empty()) throw ConfigError("--delta needs at least one value");
  const std::string vname = a.variant == "augmented" ? a.estimator : a.estimator + "_" + a.variant;
  const Variant variant = parse_variant(vname);
  EstimateOptions opts;
  opts.alpha = a.alpha;
  opts.support_mode = parse_support_mode(a.support_mode);
  opts.nuisance.g_method = parse_sampling(a.g_method);
  opts.nuisance.q_method = parse_learner(a.q_method);
  opts.nuisance.density_method = parse_density_method(a.density_method);
  opts.nuisance.eif_method = parse_learner(a.eif_method);
  opts.nuisance.zeta = a.zeta;
  opts.nuisance.seed = a.seed;
  if (!(a.alpha > 0.0 && a.alpha < 1.0)) throw ConfigError("--alpha must lie in (0,1)");
  if (!(a.zeta > 0.0 && a.zeta < 0.5)) throw ConfigError("--zeta must lie in (0,0.5)");

  Manifest manifest;
  manifest.command = "estimate";
  manifest.seed = a.seed;
  manifest.config = {{"data", a.data},           {"delta", a.deltas},       {"estimator", a.estimator},
                     {"variant", a.variant},     {"g_method", a.g_method},  {"q_method", a.q_method},
                     {"density_method", a.density_method}, {"eif_method", a.eif_method},
                     {"support_mode", a.support_mode},     {"alpha", a.alpha}, {"zeta", a.zeta},
                     {"seed", a.seed},           {"msm", a.msm},            {"scale_outcome", a.scale_outcome}};

  const ObservedDataset data = validate(read_csv_file(a.data), ValidateOptions{a.scale_outcome});
  const fs::path dir(a.out);
  ensure_dir(dir);
  const auto results = estimate(data, a.deltas, {variant}, opts);

  json records = json::array();
  for (const auto& r : results) records.push_back(estimate_to_json(r));
  open_out(dir / "estimates.json") << records.dump(2) << '\n';
  {
    auto csv = open_out(dir / "estimates.csv");
    write_estimates_csv(results, csv);
  }
  manifest.outputs = {"estimates.json", "estimates.csv"};
  if (a.msm) {
    const MsmFit fit = fit_msm(results, MsmWeighting::uniform, a.alpha);
    open_out(dir / "msm.json") << msm_to_json(fit).dump(2) << '\n';
    auto csv = open_out(dir / "msm.csv");
    write_msm_csv(fit, results, csv);
    manifest.outputs.insert(manifest.outputs.end(), {"msm.json", "msm.csv"});
  }
  manifest.write(dir / "manifest.json");
  for (const auto& r : results) {
    std::cout << to_string(r.variant) << " delta=" << format_double(r.delta) << " psi=" << format_double(r.psi)
              << " se=" << format_double(r.se) << " ci=[" << format_double(r.ci_lo) << ", "
              << format_double(r.ci_hi) << "]\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_simulate(const std::string& config_path, const std::string& out, int workers) {
  const json doc = read_json_file(config_path);
  StudyConfig cfg = study_config_from_json(doc);
  if (workers > 0) cfg.workers = workers;
  const fs::path dir(out);
  ensure_dir(dir);
  Manifest manifest;
  manifest.command = "simulate";
  manifest.config = doc;
  manifest.seed = cfg.seed;

  std::cerr << "simulate: " << to_string(cfg.dgp) << ", " << cfg.reps << " reps x " << cfg.sample_sizes.size()
            << " sample sizes, " << cfg.workers << " worker(s)\n";
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t last_pct = 0;
  const StudyResult result = run_study(cfg, [&](std::size_t done, std::size_t total) {
    const std::size_t pct = 100 * done / total;
    if (pct >= last_pct + 10 || done == total) {
      last_pct = pct;
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cerr << "  " << done << "/" << total << " replications (" << static_cast<int>(secs) << " s)\n";
    }
  });
  {
    auto raw = open_out(dir / "raw.csv");
    write_raw_csv(result.raw, raw);
    auto metrics = open_out(dir / "metrics.csv");
    write_metrics_csv(result.metrics, metrics);
  }
  {
    auto t = open_out(dir / "truth.csv");
    t << "delta,psi,mc_se,draws\n";
    for (const auto& [d, tr] : result.truths) {
      t << format_double(d) << ',' << format_double(tr.psi) << ',' << format_double(tr.mc_se) << ',' << tr.draws << '\n';
    }
  }
  manifest.outputs = {"raw.csv", "metrics.csv", "truth.csv"};
  manifest.write(dir / "manifest.json");
  check_failure_rate(result, cfg);
  return 0;
}

// ---------------------------------------------------------------------------

/// Table with an exposure column `a`, optional `weight`, and covariates in
/// every other column (`y` and `c` are ignored). Rows with an empty `a` are
/// skipped.
struct DensityData {
  std::vector<std::string> names;
  Eigen::VectorXd a;
  Eigen::MatrixXd W;
  Eigen::VectorXd weight;
};

DensityData read_density_data(const std::string& path) {
  const RawTable t = read_csv_file(path);
  auto col = [&](const std::string& name) -> long {
    auto it = std::find(t.header.begin(), t.header.end(), name);
    return it == t.header.end() ? -1 : static_cast<long>(it - t.header.begin());
  };
  const long ia = col("a"), iw = col("weight"), iy = col("y"), ic = col("c");
  if (ia < 0) throw DataError("missing column 'a'");
  std::vector<std::size_t> wcols;
  DensityData d;
  for (std::size_t j = 0; j < t.header.size(); ++j) {
    const auto jl = static_cast<long>(j);
    if (jl != ia && jl != iw && jl != iy && jl != ic) {
      wcols.push_back(j);
      d.names.push_back(t.header[j]);
    }
  }
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (t.rows[i].size() != t.header.size()) throw DataError("wrong number of cells at row " + std::to_string(i + 1));
    if (!t.rows[i][static_cast<std::size_t>(ia)].empty()) keep.push_back(i);
  }
  const auto m = static_cast<Eigen::Index>(keep.size());
  d.a.resize(m);
  d.W.resize(m, static_cast<Eigen::Index>(wcols.size()));
  d.weight = Eigen::VectorXd::Ones(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto& row = t.rows[keep[static_cast<std::size_t>(k)]];
    const auto where = " at row " + std::to_string(keep[static_cast<std::size_t>(k)] + 1);
    double v = 0.0;
    if (!parse_double(row[static_cast<std::size_t>(ia)], v) || !std::isfinite(v)) throw DataError("unparseable exposure" + where);
    d.a[k] = v;
    for (std::size_t j = 0; j < wcols.size(); ++j) {
      if (!parse_double(row[wcols[j]], v) || !std::isfinite(v)) throw DataError("unparseable covariate" + where);
      d.W(k, static_cast<Eigen::Index>(j)) = v;
    }
    if (iw >= 0) {
      if (!parse_double(row[static_cast<std::size_t>(iw)], v) || !(v >= 0.0)) throw DataError("bad weight" + where);
      d.weight[k] = v;
    }
  }
  return d;
}

int cmd_density_fit(const std::string& data_path, const std::string& method, const std::vector<int>& bins,
                    const std::string& rule, std::uint64_t seed, const std::string& out) {
  HaldensifyConfig cfg;
  if (!bins.empty()) cfg.n_bins_grid = bins;
  for (int b : cfg.n_bins_grid) {
    if (b < 2) throw ConfigError("--bins values must be >= 2");
  }
  cfg.bin_rule = parse_bin_rule(rule);
  cfg.seed = seed;
  cfg.hal.seed = derive_seed(seed, {1});
  const DensityMethod dm = parse_density_method(method);
  const DensityData d = read_density_data(data_path);
  DensityModel model;
  if (dm == DensityMethod::gaussian) {
    model = fit_gaussian_density(d.a, d.W, d.weight);
  } else {
    model = fit_haldensify(d.a, d.W, d.weight, cfg);
  }
  open_out(out) << density_to_json(model, d.names).dump(2) << '\n';
  if (const auto* c = std::get_if<CondDensityModel>(&model)) {
    for (const auto& w : c->warnings) std::cerr << "warning: " << w << '\n';
    std::cerr << "selected " << c->n_bins_selected << " bins, lambda " << format_double(c->hazard_model.lambda_selected)
              << '\n';
  }
  return 0;
}

int cmd_density_predict(const std::string& model_path, const std::string& data_path, const std::string& out) {
  json j;
  {
    std::ifstream in(model_path);
    if (!in) throw DataError("cannot open model '" + model_path + "'");
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw DataError(std::string("model is not valid JSON: ") + e.what());
    }
  }
  DensityDocument doc;
  try {
    doc = density_from_json(j);
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed density model: ") + e.what());
  }
  const DensityData d = read_density_data(data_path);
  if (d.names != doc.covariate_names) {
    std::string want;
    for (const auto& n : doc.covariate_names) want += (want.empty() ? "" : ",") + n;
    throw DataError("covariates do not match the model (expected: " + want + ")");
  }
  const DensityTable table(doc.model, d.W);
  auto o = open_out(out);
  o << 'a';
  for (const auto& n : d.names) o << ',' << n;
  o << ",density\n";
  for (Eigen::Index i = 0; i < d.a.size(); ++i) {
    o << format_double(d.a[i]);
    for (Eigen::Index k = 0; k < d.W.cols(); ++k) o << ',' << format_double(d.W(i, k));
    o << ',' << format_double(table.at(i, d.a[i])) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shift-intervention effect estimation under two-phase sampling"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  EstimateArgs ea;
  auto* est = app.add_subcommand("estimate", "Estimate counterfactual means over a grid of shifts");
  est->add_option("--data", ea.data, "CSV with columns w1..wp,a,y,c")->required()->check(CLI::ExistingFile);
  est->add_option("--delta", ea.deltas, "Shift values, comma separated")->required()->delimiter(',')->check(CLI::Number);
  est->add_option("--estimator", ea.estimator)->check(CLI::IsMember({"tmle", "onestep"}));
  est->add_option("--variant", ea.variant)->check(CLI::IsMember({"augmented", "reweighted", "naive"}));
  est->add_option("--g-method", ea.g_method)->check(CLI::IsMember({"glm", "hal", "known_one"}));
  est->add_option("--q-method", ea.q_method)->check(CLI::IsMember({"glm", "hal"}));
  est->add_option("--density-method", ea.density_method)->check(CLI::IsMember({"gaussian", "haldensify"}));
  est->add_option("--eif-method", ea.eif_method)->check(CLI::IsMember({"glm", "hal"}));
  est->add_option("--support-mode", ea.support_mode)
      ->check(CLI::IsMember({"empirical_max", "density_threshold", "unbounded"}));
  est->add_option("--alpha", ea.alpha);
  est->add_option("--zeta", ea.zeta, "Lower clamp for sampling probabilities");
  est->add_option("--seed", ea.seed);
  est->add_option("--out", ea.out, "Output directory")->required();
  est->add_flag("--msm", ea.msm, "Also fit a linear working MSM over the grid");
  est->add_flag("--scale-outcome", ea.scale_outcome, "Min-max scale a continuous outcome into [0,1]");

  std::string sim_config, sim_out;
  int sim_workers = 0;
  auto* sim = app.add_subcommand("simulate", "Run a simulation study from a JSON config");
  sim->add_option("--config", sim_config)->required();
  sim->add_option("--out", sim_out, "Output directory")->required();
  sim->add_option("--workers", sim_workers, "Worker threads (overrides the config)")->check(CLI::PositiveNumber);

  auto* dens = app.add_subcommand("density", "Fit or evaluate a conditional density of a given w");
  dens->require_subcommand(1);
  std::string df_data, df_out, df_rule = "equal_mass", df_method = "haldensify";
  std::vector<int> df_bins;
  std::uint64_t df_seed = 1;
  auto* dfit = dens->add_subcommand("fit", "Fit a density model");
  dfit->add_option("--data", df_data)->required()->check(CLI::ExistingFile);
  dfit->add_option("--bins", df_bins, "Candidate bin counts")->delimiter(',');
  dfit->add_option("--bin-rule", df_rule)->check(CLI::IsMember({"equal_range", "equal_mass"}));
  dfit->add_option("--method", df_method)->check(CLI::IsMember({"haldensify", "gaussian"}));
  dfit->add_option("--seed", df_seed);
  dfit->add_option("--out", df_out, "Model JSON path")->required();
  std::string dp_model, dp_data, dp_out;
  auto* dpred = dens->add_subcommand("predict", "Evaluate a fitted density model");
  dpred->add_option("--model", dp_model)->required();
  dpred->add_option("--data", dp_data)->required()->check(CLI::ExistingFile);
  dpred->add_option("--out", dp_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*est) return cmd_estimate(ea);
    if (*sim) return cmd_simulate(sim_config, sim_out, sim_workers);
    if (*dfit) return cmd_density_fit(df_data, df_method, df_bins, df_rule, df_seed, df_out);
    if (*dpred) return cmd_density_predict(dp_model, dp_data, dp_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 1;
  } catch (const FitError& e) {
    std::cerr << "model error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
