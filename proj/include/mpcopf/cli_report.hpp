#pragma once

// Experiment commands behind the command-line tool: single solves, partition
// generation, partition comparison tables and MPC runs. Every command writes
// its artifacts into an output directory and reports whether all requested
// solves converged.

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpc_driver.hpp"

namespace mpcopf {

enum class Mode { solve, partition, compare, mpc };

inline Mode parse_mode(const std::string& s) {
  if (s == "solve") return Mode::solve;
  if (s == "partition") return Mode::partition;
  if (s == "compare") return Mode::compare;
  if (s == "mpc") return Mode::mpc;
  throw InputError("unknown mode '" + s + "'");
}

struct ExperimentConfig {
  Mode mode = Mode::solve;
  std::string case_path;
  std::string series_path;  // empty: constant load, no wind
  std::vector<int> horizons{1};
  std::vector<std::string> methods{"centralized"};
  std::vector<std::string> partitions;  // partition files; "sp" names the computed spectral partition
  int regions = 2;
  std::uint64_t seed = 7;
  double tolerance = 1e-3;
  int max_iter = 500;
  int ref_interval = 0;
  int start = 0;                // solve: first interval of the window
  std::optional<int> steps;     // mpc/compare: defaults to series length minus the largest horizon
  std::string output_dir = ".";
  TimingMode timing = TimingMode::work;
  bool allow_islands = false;
  bool parallel = false;
};

/// Applies the keys present in a JSON config object.
inline void apply_config_json(ExperimentConfig& cfg, const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("config: top level must be an object");
  auto ints = [](const nlohmann::json& v, const char* key) {
    std::vector<int> out;
    if (v.is_number_integer()) out.push_back(v.get<int>());
    else if (v.is_array())
      for (const auto& e : v) {
        if (!e.is_number_integer()) throw InputError(std::string("config: '") + key + "' entries must be integers");
        out.push_back(e.get<int>());
      }
    else throw InputError(std::string("config: '") + key + "' must be an integer or a list");
    return out;
  };
  auto strings = [](const nlohmann::json& v, const char* key) {
    std::vector<std::string> out;
    if (v.is_string()) out.push_back(v.get<std::string>());
    else if (v.is_array())
      for (const auto& e : v) {
        if (!e.is_string()) throw InputError(std::string("config: '") + key + "' entries must be strings");
        out.push_back(e.get<std::string>());
      }
    else throw InputError(std::string("config: '") + key + "' must be a string or a list");
    return out;
  };
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "mode") cfg.mode = parse_mode(v.get<std::string>());
      else if (key == "case") cfg.case_path = v.get<std::string>();
      else if (key == "series") cfg.series_path = v.get<std::string>();
      else if (key == "horizon") cfg.horizons = ints(v, "horizon");
      else if (key == "method") cfg.methods = strings(v, "method");
      else if (key == "partition") cfg.partitions = strings(v, "partition");
      else if (key == "regions") cfg.regions = v.get<int>();
      else if (key == "seed") cfg.seed = v.get<std::uint64_t>();
      else if (key == "tol") cfg.tolerance = v.get<double>();
      else if (key == "max_iter") cfg.max_iter = v.get<int>();
      else if (key == "ref_interval") cfg.ref_interval = v.get<int>();
      else if (key == "start") cfg.start = v.get<int>();
      else if (key == "steps") cfg.steps = v.get<int>();
      else if (key == "out") cfg.output_dir = v.get<std::string>();
      else if (key == "timing") cfg.timing = v.get<std::string>() == "wall" ? TimingMode::wall : TimingMode::work;
      else if (key == "allow_islands") cfg.allow_islands = v.get<bool>();
      else if (key == "parallel") cfg.parallel = v.get<bool>();
      else throw InputError("config: unknown key '" + key + "'");
    } catch (const nlohmann::json::type_error&) {
      throw InputError("config: key '" + key + "' has the wrong type");
    }
  }
}

inline void validate(const ExperimentConfig& cfg) {
  if (cfg.case_path.empty()) throw InputError("--case is required");
  if (!std::filesystem::exists(cfg.case_path)) throw InputError("case file not found: " + cfg.case_path);
  if (!cfg.series_path.empty() && !std::filesystem::exists(cfg.series_path))
    throw InputError("series file not found: " + cfg.series_path);
  for (const auto& p : cfg.partitions)
    if (p != "sp" && !std::filesystem::exists(p)) throw InputError("partition file not found: " + p);
  if (cfg.horizons.empty()) throw InputError("at least one horizon is required");
  for (int n : cfg.horizons)
    if (n < 1) throw InputError("horizons must be at least 1");
  if (cfg.methods.empty()) throw InputError("at least one method is required");
  for (const auto& m : cfg.methods) parse_method(m);
  if (cfg.regions < 1) throw InputError("--regions must be at least 1");
  if (cfg.tolerance <= 0.0) throw InputError("--tol must be positive");
  if (cfg.max_iter < 1) throw InputError("--max-iter must be at least 1");
  if (cfg.steps && *cfg.steps < 1) throw InputError("--steps must be at least 1");
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot read " + path);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

/// Writes through a temporary file and renames it into place.
inline void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    f << text;
  }
  std::filesystem::rename(tmp, path);
}

/// Shortest round-trippable decimal form.
inline std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// CSV text from a header and rows of already formatted cells.
inline std::string to_csv(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += cells[i];
    }
    out += '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  return out;
}

inline const std::vector<std::string> kTraceHeader{"iteration", "region", "residual_norm", "step_seconds",
                                                   "scalars_sent"};
inline const std::vector<std::string> kScheduleHeader{"step", "entity", "variable", "value"};
inline const std::vector<std::string> kCompareHeader{
    "horizon",           "method",         "partition",        "steps",
    "converged_steps",   "avg_iterations", "median_iterations", "max_iterations",
    "avg_convergence_time"};
inline const std::vector<std::string> kStepSeriesHeader{"step", "iterations", "convergence_time", "objective",
                                                        "converged"};

inline std::string trace_csv(const DistributedReport& r) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& t : r.trace)
    rows.push_back({std::to_string(t.iteration), std::to_string(t.region), fmt(t.residual_norm), fmt(t.step_seconds),
                    std::to_string(t.scalars_sent)});
  return to_csv(kTraceHeader, rows);
}

inline std::string schedule_csv(const PowerSystem& sys, const Schedule& schedule) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& a : schedule) {
    const std::string st = std::to_string(a.step);
    for (std::size_t g = 0; g < a.pg.size(); ++g) {
      const std::string e = "gen" + std::to_string(g) + "@bus" + std::to_string(sys.generators[g].bus);
      rows.push_back({st, e, "P_G", fmt(a.pg[g])});
      rows.push_back({st, e, "Q_G", fmt(a.qg[g])});
    }
    for (std::size_t s = 0; s < a.p_in.size(); ++s) {
      const std::string e = "storage" + std::to_string(s) + "@bus" + std::to_string(sys.storages[s].bus);
      rows.push_back({st, e, "P_In", fmt(a.p_in[s])});
      rows.push_back({st, e, "P_Out", fmt(a.p_out[s])});
      rows.push_back({st, e, "E", fmt(a.energy[s])});
    }
  }
  return to_csv(kScheduleHeader, rows);
}

inline std::string step_series_csv(const std::vector<StepReport>& steps, int first_step = 0) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < steps.size(); ++i)
    rows.push_back({std::to_string(first_step + static_cast<int>(i)), std::to_string(iterations(steps[i])),
                    fmt(step_convergence_time(steps[i])), fmt(objective(steps[i])),
                    converged(steps[i]) ? "1" : "0"});
  return to_csv(kStepSeriesHeader, rows);
}

inline std::string affinity_csv(const AffinityMatrix& aff) {
  std::vector<std::string> header{"bus"};
  for (Eigen::Index j = 0; j < aff.a.cols(); ++j) header.push_back(std::to_string(j + 1));
  std::vector<std::vector<std::string>> rows;
  for (Eigen::Index i = 0; i < aff.a.rows(); ++i) {
    std::vector<std::string> r{std::to_string(i + 1)};
    for (Eigen::Index j = 0; j < aff.a.cols(); ++j) r.push_back(fmt(aff.a(i, j)));
    rows.push_back(std::move(r));
  }
  return to_csv(header, rows);
}

/// Loaded inputs shared by all commands.
struct Inputs {
  std::shared_ptr<const PowerSystem> system;
  TimeSeries series;
};

inline Inputs load_inputs(const ExperimentConfig& cfg, std::size_t min_length) {
  ValidationOptions vo;
  vo.allow_islands = cfg.allow_islands;
  Inputs in;
  in.system = std::make_shared<const PowerSystem>(parse_case(read_file(cfg.case_path), vo));
  in.series = cfg.series_path.empty() ? TimeSeries::constant(*in.system, std::max<std::size_t>(min_length, 1))
                                      : parse_timeseries(read_file(cfg.series_path), *in.system);
  return in;
}

inline std::string file_label(const std::string& path) {
  return path == "sp" ? "SP" : std::filesystem::path(path).stem().string();
}

inline SolverOptions solver_options(const ExperimentConfig& cfg) {
  SolverOptions so;
  so.tolerance = cfg.tolerance;
  so.max_iter = cfg.max_iter;
  so.timing = cfg.timing;
  return so;
}

/// Partitions requested for distributed methods: the computed SP partition
/// (when "sp" is listed or no file is given) followed by the files in order.
inline std::vector<std::pair<std::string, Partition>> resolve_partitions(const ExperimentConfig& cfg, const Inputs& in,
                                                                         std::ostream& log) {
  std::vector<std::pair<std::string, Partition>> out;
  std::vector<std::string> names = cfg.partitions;
  if (names.empty()) names.push_back("sp");
  for (const auto& n : names) {
    if (n == "sp") {
      const ReferencePartition ref =
          compute_sp_partition(in.system, in.series, cfg.ref_interval, cfg.regions, cfg.seed, solver_options(cfg));
      for (const auto& w : ref.spectral.warnings) log << "warning: " << w << '\n';
      out.emplace_back("SP", ref.spectral.partition);
    } else {
      out.emplace_back(file_label(n), parse_partition(read_file(n), in.system->bus_count()));
    }
  }
  return out;
}

/// One grid point of compare/mpc: a method with an optional partition.
struct RunSpec {
  SolveMethod method = SolveMethod::centralized;
  std::string partition_label = "-";
  std::optional<Partition> partition;
  std::string label() const {
    return partition ? std::string(to_string(method)) + "_" + partition_label : std::string(to_string(method));
  }
};

inline std::vector<RunSpec> run_specs(const ExperimentConfig& cfg, const Inputs& in, std::ostream& log) {
  std::vector<RunSpec> specs;
  std::optional<std::vector<std::pair<std::string, Partition>>> parts;
  for (const auto& m : cfg.methods) {
    const SolveMethod sm = parse_method(m);
    if (sm == SolveMethod::centralized) {
      specs.push_back({sm, "-", std::nullopt});
      continue;
    }
    if (!parts) parts = resolve_partitions(cfg, in, log);
    for (const auto& [name, p] : *parts) specs.push_back({sm, name, p});
  }
  return specs;
}

inline int default_steps(const ExperimentConfig& cfg, const Inputs& in) {
  const int nmax = *std::max_element(cfg.horizons.begin(), cfg.horizons.end());
  return cfg.steps ? *cfg.steps : static_cast<int>(in.series.length()) - nmax;
}

/// Result of an MPC run that may have stopped early.
struct GridOutcome {
  MpcResult result;
  bool completed = true;
  std::string error;
};

inline GridOutcome run_grid_point(const Inputs& in, const ExperimentConfig& cfg, const RunSpec& spec, int horizon,
                                  int steps) {
  MpcConfig mc;
  mc.horizon = horizon;
  mc.method = spec.method;
  mc.partition = spec.partition;
  mc.steps_to_run = steps;
  mc.tolerance = cfg.tolerance;
  mc.max_iter = cfg.max_iter;
  mc.reference_interval = cfg.ref_interval;
  mc.timing = cfg.timing;
  mc.parallel_regions = cfg.parallel;
  GridOutcome out;
  try {
    out.result = run_mpc(in.system, in.series, mc);
  } catch (const MpcError& e) {
    out.result = e.partial();
    out.completed = false;
    out.error = e.what();
  } catch (const FactorizationError& e) {
    out.completed = false;
    out.error = e.what();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands. Each returns true iff every solve converged.

inline bool cmd_solve(const ExperimentConfig& cfg, std::ostream& log) {
  const int n = cfg.horizons.front();
  const Inputs in = load_inputs(cfg, static_cast<std::size_t>(cfg.start + n));
  const std::filesystem::path out = cfg.output_dir;
  nlohmann::json summary;
  summary["horizon"] = n;
  summary["start"] = cfg.start;
  nlohmann::json runs = nlohmann::json::array();
  bool all_ok = true;
  std::optional<std::vector<std::pair<std::string, Partition>>> parts;
  for (const auto& m : cfg.methods) {
    const SolveMethod sm = parse_method(m);
    HorizonProblem pb = build_horizon_problem(in.system, in.series, cfg.start, n, initial_energy(*in.system));
    const SolverOptions so = solver_options(cfg);
    if (sm == SolveMethod::centralized) {
      const SolveReport r = solve_centralized(pb, so);
      all_ok = all_ok && r.converged;
      runs.push_back({{"method", to_string(sm)},
                      {"partition", "-"},
                      {"converged", r.converged},
                      {"iterations", r.iterations},
                      {"objective", r.objective},
                      {"residual_norm", r.residual_norm},
                      {"final_mu", r.final_mu},
                      {"max_complementarity", max_complementarity(pb.layout, r.solution)},
                      {"convergence_time", step_convergence_time(r)},
                      {"diagnostics", r.diagnostics}});
      log << to_string(sm) << ": " << (r.converged ? "converged" : "FAILED") << " in " << r.iterations
          << " iterations, objective " << fmt(r.objective) << '\n';
      continue;
    }
    if (!parts) parts = resolve_partitions(cfg, in, log);
    for (const auto& [name, p] : *parts) {
      HorizonProblem q = pb;
      DistributedOptions d;
      d.solver = so;
      d.parallel = cfg.parallel;
      const DistributedReport r =
          solve_distributed(q, p, sm == SolveMethod::ocd ? OcdMethod::ocd : OcdMethod::ocdc, d);
      all_ok = all_ok && r.converged;
      const std::string label = std::string(to_string(sm)) + "_" + name;
      write_file(out / ("trace_" + label + ".csv"), trace_csv(r));
      runs.push_back({{"method", to_string(sm)},
                      {"partition", name},
                      {"converged", r.converged},
                      {"iterations", r.iterations},
                      {"objective", r.objective},
                      {"residual_norm", r.residual_norm},
                      {"convergence_time", r.convergence_time},
                      {"total_scalars_exchanged", r.total_scalars_exchanged},
                      {"diagnostics", r.diagnostics}});
      log << label << ": " << (r.converged ? "converged" : "FAILED") << " in " << r.iterations
          << " iterations, objective " << fmt(r.objective) << '\n';
    }
  }
  summary["runs"] = runs;
  write_file(out / "solve_summary.json", summary.dump(2) + "\n");
  return all_ok;
}

inline bool cmd_partition(const ExperimentConfig& cfg, std::ostream& log) {
  const Inputs in = load_inputs(cfg, static_cast<std::size_t>(cfg.ref_interval + 1));
  const ReferencePartition ref =
      compute_sp_partition(in.system, in.series, cfg.ref_interval, cfg.regions, cfg.seed, solver_options(cfg));
  for (const auto& w : ref.spectral.warnings) log << "warning: " << w << '\n';
  const std::filesystem::path out = cfg.output_dir;
  write_file(out / "partition.json", serialize_partition(ref.spectral.partition));
  write_file(out / "affinity.csv", affinity_csv(ref.affinity));
  log << "partition K=" << ref.spectral.partition.k << ":";
  for (int r : ref.spectral.partition.region_of) log << ' ' << r;
  log << '\n';
  return true;
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Iteration/time statistics across the MPC steps of one grid point.
inline std::vector<std::string> compare_row(int horizon, const RunSpec& spec, int steps, const GridOutcome& g) {
  std::vector<double> its, times;
  int ok = 0;
  for (const auto& s : g.result.per_step) {
    its.push_back(iterations(s));
    times.push_back(step_convergence_time(s));
    if (converged(s)) ++ok;
  }
  auto avg = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  const double mx = its.empty() ? 0.0 : *std::max_element(its.begin(), its.end());
  return {std::to_string(horizon), to_string(spec.method), spec.partition_label, std::to_string(steps),
          std::to_string(ok),      fmt(avg(its)),          fmt(median_of(its)),  fmt(mx),
          fmt(avg(times))};
}

inline bool cmd_compare(const ExperimentConfig& cfg, std::ostream& log) {
  const Inputs in = load_inputs(cfg, 0);
  const int steps = default_steps(cfg, in);
  const std::vector<RunSpec> specs = run_specs(cfg, in, log);
  const std::filesystem::path out = cfg.output_dir;
  std::vector<std::vector<std::string>> rows;
  bool all_ok = true;
  for (int n : cfg.horizons) {
    for (const auto& spec : specs) {
      const GridOutcome g = run_grid_point(in, cfg, spec, n, steps);
      if (!g.completed) log << "N=" << n << " " << spec.label() << ": " << g.error << '\n';
      all_ok = all_ok && g.completed;
      rows.push_back(compare_row(n, spec, steps, g));
      write_file(out / ("steps_N" + std::to_string(n) + "_" + spec.label() + ".csv"),
                 step_series_csv(g.result.per_step));
    }
  }
  const std::string table = to_csv(kCompareHeader, rows);
  write_file(out / "compare.csv", table);
  log << table;
  return all_ok;
}

inline bool cmd_mpc(const ExperimentConfig& cfg, std::ostream& log) {
  const Inputs in = load_inputs(cfg, 0);
  const int steps = default_steps(cfg, in);
  if (steps < 1) throw InputError("step budget is empty: series too short for the largest horizon");
  for (int n : cfg.horizons)
    if (static_cast<std::size_t>(steps + n) > in.series.length())
      throw InputError("steps + N = " + std::to_string(steps + n) + " exceeds series length " +
                       std::to_string(in.series.length()));
  const std::vector<RunSpec> specs = run_specs(cfg, in, log);
  const std::filesystem::path out = cfg.output_dir;
  nlohmann::json summary;
  summary["steps"] = steps;
  nlohmann::json runs = nlohmann::json::array();
  bool all_ok = true;
  for (int n : cfg.horizons) {
    for (const auto& spec : specs) {
      const GridOutcome g = run_grid_point(in, cfg, spec, n, steps);
      all_ok = all_ok && g.completed;
      const std::string tag = "N" + std::to_string(n) + "_" + spec.label();
      write_file(out / ("schedule_" + tag + ".csv"), schedule_csv(*in.system, g.result.applied_schedule));
      write_file(out / ("timeseries_" + tag + ".csv"), step_series_csv(g.result.per_step));
      runs.push_back({{"horizon", n},
                      {"method", to_string(spec.method)},
                      {"partition", spec.partition_label},
                      {"completed", g.completed},
                      {"applied_steps", g.result.applied_schedule.size()},
                      {"total_cost", g.result.total_cost},
                      {"total_ramping", g.result.total_ramping},
                      {"error", g.error}});
      log << "N=" << n << " " << spec.label() << ": cost " << fmt(g.result.total_cost) << ", ramping "
          << fmt(g.result.total_ramping) << (g.completed ? "" : " (" + g.error + ")") << '\n';
    }
  }
  summary["runs"] = runs;
  write_file(out / "summary.json", summary.dump(2) + "\n");
  return all_ok;
}

/// Runs the configured command; returns the process exit code.
inline int run_experiment(const ExperimentConfig& cfg, std::ostream& log = std::cout,
                          std::ostream& err = std::cerr) {
  try {
    validate(cfg);
    bool ok = false;
    switch (cfg.mode) {
    case Mode::solve: ok = cmd_solve(cfg, log); break;
    case Mode::partition: ok = cmd_partition(cfg, log); break;
    case Mode::compare: ok = cmd_compare(cfg, log); break;
    case Mode::mpc: ok = cmd_mpc(cfg, log); break;
    }
    return ok ? 0 : 1;
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const PartitionError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace mpcopf
