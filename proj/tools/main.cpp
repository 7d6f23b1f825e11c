#include <chrono>
#include <cstdint>
#include <ctime>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bellman/experiment.hpp"
#include "bellman/io.hpp"
#include "bellman/pipeline.hpp"
#include "bellman/simulation.hpp"
#include "json.hpp"

namespace {

using nlohmann::json;

constexpr const char* kVersion = "0.1.0";

std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct Manifest {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string started;
  std::vector<std::string> outputs;

  void write(const std::string& path) const {
    json j;
    j["command"] = command;
    j["config_hash"] = config_hash;
    j["seed"] = seed;
    j["tool_version"] = kVersion;
    j["started"] = started;
    j["finished"] = iso_timestamp();
    j["outputs"] = outputs;
    bellman::write_text_file(path, j.dump(2) + "\n");
  }
};

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  return json::parse(bellman::read_text_file(path));
}

bellman::RegressorSpec regressor_from_json(const json& j) {
  bellman::RegressorSpec spec = bellman::RegressorSpec::boosted_trees(3, 30, 0.3);
  if (!j.is_object()) return spec;
  const std::string backend = j.value("backend", "boosted-trees");
  if (backend == "tabular-mean") {
    spec = bellman::RegressorSpec::tabular_mean();
  } else if (backend == "ridge") {
    spec = bellman::RegressorSpec::ridge(j.value("lambda", 1e-6));
  } else if (backend == "boosted-trees") {
    spec = bellman::RegressorSpec::boosted_trees(
        j.value("depth", 3), j.value("rounds", 30), j.value("learning_rate", 0.3),
        j.value("min_leaf_weight", 20.0), j.value("max_leaves", 0));
  } else {
    throw std::invalid_argument("unknown regressor backend: " + backend);
  }
  return spec;
}

bellman::PipelineOptions pipeline_from_json(const json& j) {
  bellman::PipelineOptions opts;
  opts.gamma = j.value("gamma", opts.gamma);
  opts.folds = j.value("folds", opts.folds);
  opts.bootstrap = j.value("bootstrap", opts.bootstrap);
  opts.level = j.value("level", opts.level);
  opts.seed = j.value("seed", opts.seed);
  opts.truncation = j.value("truncation", opts.truncation);
  opts.ridge_lambda = j.value("ridge_lambda", opts.ridge_lambda);
  opts.fqi_tol = j.value("fqi_tol", opts.fqi_tol);
  opts.fqi_max_iters = j.value("fqi_max_iters", opts.fqi_max_iters);
  opts.estimand = j.value("estimand", opts.estimand);
  opts.arm = j.value("arm", opts.arm);
  opts.robust_tie_reward = j.value("robust_tie_reward", opts.robust_tie_reward);
  if (j.contains("regressor")) opts.regressor = regressor_from_json(j["regressor"]);
  if (j.contains("calibration")) {
    const json& c = j["calibration"];
    opts.calibration.max_iters = c.value("max_iters", opts.calibration.max_iters);
    opts.calibration.tol = c.value("tol", opts.calibration.tol);
    opts.calibration.min_pool_weight =
        c.value("min_pool_weight", opts.calibration.min_pool_weight);
  }
  return opts;
}

int cmd_simulate(const std::string& config_path, const std::string& out_path,
                 int n_flag, double gamma_flag, double beta_flag,
                 std::uint64_t seed_flag, bool seed_set) {
  const json cfg = load_config(config_path);
  bellman::SimConfig sc;
  sc.n = n_flag > 0 ? n_flag : cfg.value("n", 0);
  sc.gamma = gamma_flag >= 0.0 ? gamma_flag : cfg.value("gamma", 0.8);
  sc.beta = beta_flag >= 0.0 ? beta_flag : cfg.value("beta", 0.0);
  sc.treat_prob = cfg.value("treat_prob", 0.25);
  sc.seed = seed_set ? seed_flag : cfg.value("seed", 0ULL);
  sc.validate();

  Manifest manifest;
  manifest.command = "simulate";
  manifest.config_hash = fnv1a_hex(cfg.dump());
  manifest.seed = sc.seed;
  manifest.started = iso_timestamp();

  const bellman::TransitionDataset data = bellman::generate_dataset(sc);
  const std::string sidecar = bellman::sidecar_path_for(out_path);
  const std::string manifest_path = out_path + ".manifest.json";

  bellman::write_text_file(out_path, bellman::dataset_csv_string(data));
  json side = json::parse(bellman::alphabet_sidecar_json(data));
  side["manifest"] = manifest_path;
  side["n"] = data.n();
  bellman::write_text_file(sidecar, side.dump(2) + "\n");

  manifest.outputs = {out_path, sidecar};
  manifest.write(manifest_path);
  return 0;
}

int cmd_estimate(const std::string& data_path, const std::string& sidecar_path,
                 const std::string& method, const std::string& config_path,
                 const std::string& out_path, double gamma_flag, int folds_flag,
                 int bootstrap_flag, std::uint64_t seed_flag, bool seed_set) {
  if (!bellman::is_known_method(method))
    throw std::invalid_argument("unknown method: " + method);
  const json cfg = load_config(config_path);
  bellman::PipelineOptions opts = pipeline_from_json(cfg);
  if (gamma_flag >= 0.0) opts.gamma = gamma_flag;
  if (folds_flag > 0) opts.folds = folds_flag;
  if (bootstrap_flag >= 0) opts.bootstrap = bootstrap_flag;
  if (seed_set) opts.seed = seed_flag;

  const std::string sidecar =
      sidecar_path.empty() ? bellman::sidecar_path_for(data_path) : sidecar_path;
  const bellman::TransitionDataset data = bellman::load_dataset_csv(data_path, sidecar);

  Manifest manifest;
  manifest.command = "estimate";
  manifest.config_hash = fnv1a_hex(cfg.dump() + method);
  manifest.seed = opts.seed;
  manifest.started = iso_timestamp();

  const bellman::EstimateReport report = bellman::run_estimator(data, method, opts);
  const std::string manifest_path = out_path + ".manifest.json";
  json j = json::parse(report.to_json());
  j["manifest"] = manifest_path;
  j["n"] = data.n();
  bellman::write_text_file(out_path, j.dump(2) + "\n");
  manifest.outputs = {out_path};
  manifest.write(manifest_path);
  return 0;
}

int cmd_experiment(const std::string& config_path, const std::string& out_dir,
                   int reps_flag, std::uint64_t seed_flag, bool seed_set,
                   int bootstrap_flag) {
  const json cfg = load_config(config_path);
  bellman::ExperimentConfig ec;
  if (cfg.contains("gammas")) ec.gammas = cfg["gammas"].get<std::vector<double>>();
  if (cfg.contains("betas")) ec.betas = cfg["betas"].get<std::vector<double>>();
  if (cfg.contains("ns")) ec.ns = cfg["ns"].get<std::vector<int>>();
  if (cfg.contains("methods"))
    ec.methods = cfg["methods"].get<std::vector<std::string>>();
  ec.reps = reps_flag > 0 ? reps_flag : cfg.value("reps", 100);
  ec.seed = seed_set ? seed_flag : cfg.value("seed", 1ULL);
  ec.treat_prob = cfg.value("treat_prob", 0.25);
  if (cfg.contains("pipeline")) ec.pipeline = pipeline_from_json(cfg["pipeline"]);
  if (bootstrap_flag >= 0) ec.pipeline.bootstrap = bootstrap_flag;
  ec.validate();

  Manifest manifest;
  manifest.command = "experiment";
  manifest.config_hash = fnv1a_hex(cfg.dump());
  manifest.seed = ec.seed;
  manifest.started = iso_timestamp();

  const bellman::ExperimentResult result = bellman::monte_carlo_experiment(ec);

  const std::string raw_path = out_dir + "/raw.csv";
  const std::string summary_path = out_dir + "/summary.csv";
  const std::string plot_path = out_dir + "/plot_data.json";
  const std::string truths_path = out_dir + "/truths.json";
  const std::string manifest_path = out_dir + "/manifest.json";

  bellman::write_text_file(raw_path, bellman::rows_csv(result.rows));
  bellman::write_text_file(summary_path, bellman::summaries_csv(result.summaries));

  json plot_doc;
  plot_doc["manifest"] = manifest_path;
  plot_doc["series"] = json::parse(bellman::plot_data_json(result.summaries));
  bellman::write_text_file(plot_path, plot_doc.dump(2) + "\n");

  json truths;
  truths["manifest"] = manifest_path;
  truths["truths"] = json::object();
  for (double gamma : ec.gammas) {
    for (double beta : ec.betas) {
      bellman::SimConfig sc;
      sc.n = 1;
      sc.gamma = gamma;
      sc.beta = beta;
      sc.treat_prob = ec.treat_prob;
      const bellman::SimTruth t = bellman::oracle_truth(sc);
      char key[64];
      std::snprintf(key, sizeof(key), "gamma=%.6g,beta=%.6g", gamma, beta);
      truths["truths"][key] = {{"ate", t.true_ate},
                               {"psi_treated", t.psi_treated},
                               {"psi_control", t.psi_control}};
    }
  }
  bellman::write_text_file(truths_path, truths.dump(2) + "\n");

  manifest.outputs = {raw_path, summary_path, plot_path, truths_path};
  manifest.write(manifest_path);

  int failures = 0;
  for (const auto& row : result.rows)
    if (!row.ok) ++failures;
  if (failures > 0)
    std::fprintf(stderr, "warning: %d estimator runs failed (recorded as NA rows)\n",
                 failures);
  return 0;
}

void emit_error(const char* type, const std::string& message) {
  json j;
  j["error"] = {{"type", type}, {"message", message}};
  std::fprintf(stderr, "%s\n", j.dump().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Calibrated and doubly robust off-policy estimation for "
               "infinite-horizon MDPs"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::string config_path, out_path, data_path, sidecar_path, method;
  int n_flag = -1, reps_flag = -1, folds_flag = -1, bootstrap_flag = -1;
  double gamma_flag = -1.0, beta_flag = -1.0;
  std::uint64_t seed_flag = 0;

  auto* sim = app.add_subcommand("simulate", "Generate a synthetic transition dataset");
  sim->add_option("--config", config_path, "Simulation config JSON");
  sim->add_option("--out", out_path, "Output CSV path")->required();
  sim->add_option("--n", n_flag, "Sample size override");
  sim->add_option("--gamma", gamma_flag, "Discount override");
  sim->add_option("--beta", beta_flag, "Overlap parameter override");
  auto* sim_seed = sim->add_option("--seed", seed_flag, "Seed override");

  auto* est = app.add_subcommand("estimate", "Run one estimator on a dataset");
  est->add_option("--data", data_path, "Dataset CSV")->required();
  est->add_option("--sidecar", sidecar_path,
                  "Alphabet sidecar (default <data>.alphabet.json)");
  est->add_option("--method", method, "Estimator")->required();
  est->add_option("--config", config_path, "Estimation config JSON");
  est->add_option("--out", out_path, "Report JSON path")->required();
  est->add_option("--gamma", gamma_flag, "Discount override");
  est->add_option("--folds", folds_flag, "Cross-fitting folds override");
  est->add_option("--bootstrap", bootstrap_flag, "Bootstrap replicates override");
  auto* est_seed = est->add_option("--seed", seed_flag, "Seed override");

  auto* exp = app.add_subcommand("experiment", "Run a Monte Carlo grid");
  exp->add_option("--config", config_path, "Grid config JSON")->required();
  exp->add_option("--out", out_path, "Output directory")->required();
  exp->add_option("--reps", reps_flag, "Replications override");
  exp->add_option("--bootstrap", bootstrap_flag, "Bootstrap replicates override");
  auto* exp_seed = exp->add_option("--seed", seed_flag, "Seed override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return 0;  // --help / --version
    emit_error("usage", e.what());
    return 2;
  }

  try {
    if (sim->parsed())
      return cmd_simulate(config_path, out_path, n_flag, gamma_flag, beta_flag,
                          seed_flag, sim_seed->count() > 0);
    if (est->parsed())
      return cmd_estimate(data_path, sidecar_path, method, config_path, out_path,
                          gamma_flag, folds_flag, bootstrap_flag, seed_flag,
                          est_seed->count() > 0);
    if (exp->parsed())
      return cmd_experiment(config_path, out_path, reps_flag, seed_flag,
                            exp_seed->count() > 0, bootstrap_flag);
  } catch (const nlohmann::json::exception& e) {
    emit_error("config", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    emit_error("config", e.what());
    return 2;
  } catch (const std::domain_error& e) {
    emit_error("domain", e.what());
    return 2;
  } catch (const bellman::NumericalError& e) {
    emit_error("numerical", e.what());
    return 3;
  } catch (const std::exception& e) {
    emit_error("runtime", e.what());
    return 3;
  }
  return 2;
}
