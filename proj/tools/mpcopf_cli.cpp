// Command-line front end: mpcopf_cli solve|partition|compare|mpc [flags]

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <mpcopf/cli_report.hpp>

namespace {

struct Flags {
  std::string config;
  std::string case_path, series_path, out, timing;
  std::vector<int> horizons;
  std::vector<std::string> methods, partitions;
  int regions = 0, max_iter = 0, ref_interval = 0, start = 0, steps = 0;
  std::uint64_t seed = 0;
  double tol = 0.0;
  bool allow_islands = false, parallel = false;
  std::vector<std::pair<CLI::Option*, std::string>> options;  // option, config key
};

void add_common(CLI::App* sub, Flags& f) {
  auto reg = [&](CLI::Option* o, const std::string& key) { f.options.emplace_back(o, key); };
  sub->add_option("--config", f.config, "JSON config file; flags override its keys")->check(CLI::ExistingFile);
  reg(sub->add_option("--case", f.case_path, "case JSON file"), "case");
  reg(sub->add_option("--series", f.series_path, "load/wind CSV (default: constant load, no wind)"), "series");
  reg(sub->add_option("--horizon", f.horizons, "horizon length(s) N")->expected(1, -1), "horizon");
  reg(sub->add_option("--method", f.methods, "centralized, OCD and/or OCD-C")->expected(1, -1), "method");
  reg(sub->add_option("--partition", f.partitions, "partition file(s); 'sp' for the spectral partition")
          ->expected(1, -1),
      "partition");
  reg(sub->add_option("--regions", f.regions, "number of regions K for the spectral partition"), "regions");
  reg(sub->add_option("--seed", f.seed, "k-means seed"), "seed");
  reg(sub->add_option("--tol", f.tol, "KKT residual tolerance"), "tol");
  reg(sub->add_option("--max-iter", f.max_iter, "iteration limit per solve"), "max_iter");
  reg(sub->add_option("--ref-interval", f.ref_interval, "series interval used to compute the partition"),
      "ref_interval");
  reg(sub->add_option("--start", f.start, "first interval of the solved window (solve)"), "start");
  reg(sub->add_option("--steps", f.steps, "MPC steps to run (compare, mpc)"), "steps");
  reg(sub->add_option("--out", f.out, "output directory"), "out");
  reg(sub->add_option("--timing", f.timing, "work (reproducible) or wall")->check(CLI::IsMember({"work", "wall"})),
      "timing");
  reg(sub->add_flag("--allow-islands", f.allow_islands, "accept disconnected cases with one slack per island"),
      "allow_islands");
  reg(sub->add_flag("--parallel", f.parallel, "run region steps on separate threads"), "parallel");
}

mpcopf::ExperimentConfig build_config(const std::string& mode, const Flags& f) {
  using mpcopf::ExperimentConfig;
  ExperimentConfig cfg;
  if (!f.config.empty()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(mpcopf::read_file(f.config));
    } catch (const nlohmann::json::parse_error& e) {
      throw mpcopf::InputError("config syntax error at byte " + std::to_string(e.byte));
    }
    mpcopf::apply_config_json(cfg, j);
  }
  cfg.mode = mpcopf::parse_mode(mode);
  for (const auto& [opt, key] : f.options) {
    if (opt->count() == 0) continue;
    if (key == "case") cfg.case_path = f.case_path;
    else if (key == "series") cfg.series_path = f.series_path;
    else if (key == "horizon") cfg.horizons = f.horizons;
    else if (key == "method") cfg.methods = f.methods;
    else if (key == "partition") cfg.partitions = f.partitions;
    else if (key == "regions") cfg.regions = f.regions;
    else if (key == "seed") cfg.seed = f.seed;
    else if (key == "tol") cfg.tolerance = f.tol;
    else if (key == "max_iter") cfg.max_iter = f.max_iter;
    else if (key == "ref_interval") cfg.ref_interval = f.ref_interval;
    else if (key == "start") cfg.start = f.start;
    else if (key == "steps") cfg.steps = f.steps;
    else if (key == "out") cfg.output_dir = f.out;
    else if (key == "timing") cfg.timing = f.timing == "wall" ? mpcopf::TimingMode::wall : mpcopf::TimingMode::work;
    else if (key == "allow_islands") cfg.allow_islands = f.allow_islands;
    else if (key == "parallel") cfg.parallel = f.parallel;
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-period AC OPF with storage: centralized and decomposed interior-point solvers"};
  app.require_subcommand(1);
  const std::vector<std::pair<std::string, std::string>> modes{
      {"solve", "solve one horizon window"},
      {"partition", "compute the spectral partition and affinity matrix"},
      {"compare", "iteration and convergence-time table over MPC steps"},
      {"mpc", "receding-horizon runs with schedules and cost summary"}};
  std::vector<Flags> flags(modes.size());
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < modes.size(); ++i) {
    CLI::App* sub = app.add_subcommand(modes[i].first, modes[i].second);
    add_common(sub, flags[i]);
    subs.push_back(sub);
  }
  CLI11_PARSE(app, argc, argv);
  for (std::size_t i = 0; i < modes.size(); ++i) {
    if (!subs[i]->parsed()) continue;
    try {
      return mpcopf::run_experiment(build_config(modes[i].first, flags[i]));
    } catch (const mpcopf::InputError& e) {
      std::cerr << "error: " << e.what() << '\n';
      return 2;
    }
  }
  return 2;
}
