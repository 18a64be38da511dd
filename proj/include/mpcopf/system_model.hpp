#pragma once

// Static power-system description, case-file parsing and the per-interval
// wind/load time series.

#include <algorithm>
#include <complex>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace mpcopf {

/// Raised for malformed or inconsistent input documents.
class InputError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class BusKind { slack, generator, load };

inline const char* to_string(BusKind k) {
  switch (k) {
  case BusKind::slack: return "slack";
  case BusKind::generator: return "generator";
  case BusKind::load: return "load";
  }
  return "load";
}

struct Bus {
  int id = 0;
  BusKind kind = BusKind::load;
  double p_load_base = 0.0;
  double q_load_base = 0.0;
  double v_min = 0.94;
  double v_max = 1.06;
  std::optional<double> v_set;

  bool operator==(const Bus&) const = default;
};

struct Branch {
  int from_bus = 0;
  int to_bus = 0;
  double r = 0.0;
  double x = 0.0;
  double b_sh = 0.0;
  std::optional<double> i_max;

  std::complex<double> series_admittance() const { return 1.0 / std::complex<double>(r, x); }
  bool operator==(const Branch&) const = default;
};

struct Generator {
  int bus = 0;
  double a = 0.0, b = 0.0, c = 0.0;
  double p_min = 0.0, p_max = 0.0;
  double q_min = 0.0, q_max = 0.0;

  double cost(double pg) const { return a * pg * pg + b * pg + c; }
  bool operator==(const Generator&) const = default;
};

struct StorageDevice {
  int bus = 0;
  double e_min = 0.0, e_max = 0.0, e_init = 0.0;
  double p_in_max = 0.0, p_out_max = 0.0;
  double eta_c = 1.0, eta_d = 1.0;
  double eps_sbl = 0.0;

  /// Energy after one interval from `e` with the given charge/discharge powers.
  double next_energy(double e, double p_in, double p_out) const {
    return e + eta_c * p_in - p_out / eta_d - eps_sbl;
  }
  bool operator==(const StorageDevice&) const = default;
};

struct ValidationOptions {
  // Permit several connected components, each with its own slack bus.
  bool allow_islands = false;
};

class PowerSystem {
public:
  double base_mva = 100.0;
  std::vector<Bus> buses;  // buses[i].id == i + 1
  std::vector<Branch> branches;
  std::vector<Generator> generators;
  std::vector<StorageDevice> storages;
  std::vector<int> wind_buses;  // sorted, unique

  std::size_t bus_count() const { return buses.size(); }
  /// 0-based position of a bus id.
  std::size_t index_of(int bus_id) const { return static_cast<std::size_t>(bus_id - 1); }
  const Bus& bus(int bus_id) const { return buses.at(index_of(bus_id)); }

  int slack_bus() const {
    for (const auto& b : buses)
      if (b.kind == BusKind::slack) return b.id;
    throw InputError("no slack bus");
  }

  /// Omega_j: ids of buses adjacent to `bus_id`, ascending.
  std::vector<int> neighbors(int bus_id) const {
    std::set<int> out;
    for (const auto& br : branches) {
      if (br.from_bus == bus_id) out.insert(br.to_bus);
      if (br.to_bus == bus_id) out.insert(br.from_bus);
    }
    return {out.begin(), out.end()};
  }

  /// Lambda_j: positions in `generators` of the units at `bus_id`.
  std::vector<std::size_t> generators_at(int bus_id) const {
    std::vector<std::size_t> out;
    for (std::size_t g = 0; g < generators.size(); ++g)
      if (generators[g].bus == bus_id) out.push_back(g);
    return out;
  }

  /// Connected-component label per bus (0-based position), labels in
  /// order of first appearance.
  std::vector<int> components() const {
    const std::size_t n = buses.size();
    std::vector<int> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int v) {
      while (parent[v] != v) v = parent[v] = parent[parent[v]];
      return v;
    };
    for (const auto& br : branches) {
      int a = find(static_cast<int>(index_of(br.from_bus)));
      int b = find(static_cast<int>(index_of(br.to_bus)));
      if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
    std::vector<int> label(n, -1);
    std::map<int, int> root_label;
    for (std::size_t i = 0; i < n; ++i) {
      int r = find(static_cast<int>(i));
      auto [it, inserted] = root_label.try_emplace(r, static_cast<int>(root_label.size()));
      label[i] = it->second;
    }
    return label;
  }

  bool operator==(const PowerSystem&) const = default;

  void validate(const ValidationOptions& opts = {}) const;
};

namespace detail {

inline std::string bus_ref(int id) { return "bus " + std::to_string(id); }

}  // namespace detail

inline void PowerSystem::validate(const ValidationOptions& opts) const {
  if (buses.empty()) throw InputError("case has no buses");
  if (!(base_mva > 0.0)) throw InputError("base_mva must be positive");
  for (std::size_t i = 0; i < buses.size(); ++i) {
    const Bus& b = buses[i];
    if (b.id != static_cast<int>(i) + 1)
      throw InputError("bus ids must be 1..B without gaps (found " + detail::bus_ref(b.id) + ")");
    if (b.v_min > b.v_max) throw InputError(detail::bus_ref(b.id) + ": v_min > v_max");
    if (b.v_set && (*b.v_set < b.v_min || *b.v_set > b.v_max))
      throw InputError(detail::bus_ref(b.id) + ": v_set outside [v_min, v_max]");
    if (b.kind != BusKind::load && !b.v_set)
      throw InputError(detail::bus_ref(b.id) + ": slack/generator bus requires v_set");
    if (b.kind != BusKind::load && generators_at(b.id).empty())
      throw InputError(detail::bus_ref(b.id) + ": slack/generator bus hosts no generator");
  }
  auto known = [&](int id) { return id >= 1 && id <= static_cast<int>(buses.size()); };

  for (std::size_t k = 0; k < branches.size(); ++k) {
    const Branch& br = branches[k];
    const std::string who = "branch " + std::to_string(k) + " (" + std::to_string(br.from_bus) +
                            "-" + std::to_string(br.to_bus) + ")";
    if (!known(br.from_bus)) throw InputError(who + ": unknown bus " + std::to_string(br.from_bus));
    if (!known(br.to_bus)) throw InputError(who + ": unknown bus " + std::to_string(br.to_bus));
    if (br.from_bus == br.to_bus) throw InputError(who + ": from_bus equals to_bus");
    if (br.r == 0.0 && br.x == 0.0) throw InputError(who + ": zero series impedance");
    if (br.i_max && !(*br.i_max > 0.0)) throw InputError(who + ": i_max must be positive");
  }
  for (std::size_t g = 0; g < generators.size(); ++g) {
    const Generator& gen = generators[g];
    const std::string who = "generator " + std::to_string(g);
    if (!known(gen.bus)) throw InputError(who + ": unknown bus " + std::to_string(gen.bus));
    if (gen.a < 0.0) throw InputError(who + ": negative quadratic cost coefficient");
    if (gen.p_min > gen.p_max) throw InputError(who + ": p_min > p_max");
    if (gen.q_min > gen.q_max) throw InputError(who + ": q_min > q_max");
  }
  for (std::size_t s = 0; s < storages.size(); ++s) {
    const StorageDevice& st = storages[s];
    const std::string who = "storage " + std::to_string(s);
    if (!known(st.bus)) throw InputError(who + ": unknown bus " + std::to_string(st.bus));
    if (st.e_min > st.e_init || st.e_init > st.e_max)
      throw InputError(who + ": e_init outside [e_min, e_max]");
    const double rt = st.eta_c * st.eta_d;
    if (!(st.eta_c > 0.0 && st.eta_c <= 1.0 && st.eta_d > 0.0 && st.eta_d <= 1.0) || !(rt > 0.0 && rt <= 1.0))
      throw InputError(who + ": efficiencies must lie in (0, 1]");
    if (st.eps_sbl < 0.0) throw InputError(who + ": negative standby loss");
    if (st.p_in_max < 0.0 || st.p_out_max < 0.0) throw InputError(who + ": negative power limit");
  }
  for (int w : wind_buses)
    if (!known(w)) throw InputError("wind_buses: unknown bus " + std::to_string(w));

  const auto comp = components();
  const int n_comp = *std::max_element(comp.begin(), comp.end()) + 1;
  std::vector<int> slack_per_comp(n_comp, 0);
  for (std::size_t i = 0; i < buses.size(); ++i)
    if (buses[i].kind == BusKind::slack) ++slack_per_comp[comp[i]];
  const int slacks = std::accumulate(slack_per_comp.begin(), slack_per_comp.end(), 0);
  if (!opts.allow_islands) {
    if (slacks != 1) {
      if (slacks == 0) throw InputError("case has no slack bus");
      int second = 0, seen = 0;
      for (const auto& b : buses)
        if (b.kind == BusKind::slack && ++seen == 2) second = b.id;
      throw InputError("duplicate slack: " + detail::bus_ref(second));
    }
    if (n_comp != 1) {
      for (std::size_t i = 0; i < buses.size(); ++i)
        if (comp[i] != 0)
          throw InputError("network is disconnected: " + detail::bus_ref(buses[i].id) +
                           " is not reachable from " + detail::bus_ref(buses[0].id));
    }
  } else {
    for (int c = 0; c < n_comp; ++c)
      if (slack_per_comp[c] != 1)
        throw InputError("island " + std::to_string(c) + " must contain exactly one slack bus");
  }
}

// ---------------------------------------------------------------------------
// Case file (JSON)

namespace detail {

inline BusKind parse_kind(const std::string& s, int id) {
  if (s == "slack") return BusKind::slack;
  if (s == "generator") return BusKind::generator;
  if (s == "load") return BusKind::load;
  throw InputError(bus_ref(id) + ": unknown kind '" + s + "'");
}

template <class T>
T required(const nlohmann::json& j, const char* key, const std::string& who) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) throw InputError(who + ": missing field '" + key + "'");
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw InputError(who + ": field '" + key + "' has the wrong type");
  }
}

template <class T>
std::optional<T> optional_field(const nlohmann::json& j, const char* key, const std::string& who) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw InputError(who + ": field '" + key + "' has the wrong type");
  }
}

inline const nlohmann::json& array_field(const nlohmann::json& doc, const char* key, bool must) {
  static const nlohmann::json empty = nlohmann::json::array();
  auto it = doc.find(key);
  if (it == doc.end()) {
    if (must) throw InputError(std::string("case: missing top-level key '") + key + "'");
    return empty;
  }
  if (!it->is_array()) throw InputError(std::string("case: '") + key + "' must be an array");
  return *it;
}

}  // namespace detail

/// Parses a case document. Syntax errors report the byte offset; semantic
/// errors name the offending record.
inline PowerSystem parse_case(const std::string& text, const ValidationOptions& opts = {}) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("case syntax error at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  if (!doc.is_object()) throw InputError("case: top level must be an object");

  PowerSystem sys;
  sys.base_mva = detail::required<double>(doc, "base_mva", "case");

  std::vector<Bus> buses;
  for (const auto& jb : detail::array_field(doc, "buses", true)) {
    Bus b;
    b.id = detail::required<int>(jb, "id", "bus record");
    const std::string who = detail::bus_ref(b.id);
    b.kind = detail::parse_kind(detail::required<std::string>(jb, "kind", who), b.id);
    b.p_load_base = detail::optional_field<double>(jb, "p_load_base", who).value_or(0.0);
    b.q_load_base = detail::optional_field<double>(jb, "q_load_base", who).value_or(0.0);
    b.v_min = detail::required<double>(jb, "v_min", who);
    b.v_max = detail::required<double>(jb, "v_max", who);
    b.v_set = detail::optional_field<double>(jb, "v_set", who);
    buses.push_back(b);
  }
  std::sort(buses.begin(), buses.end(), [](const Bus& a, const Bus& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < buses.size(); ++i)
    if (buses[i].id == buses[i - 1].id) throw InputError("duplicate " + detail::bus_ref(buses[i].id));
  sys.buses = std::move(buses);

  std::size_t k = 0;
  for (const auto& jb : detail::array_field(doc, "branches", true)) {
    const std::string who = "branch " + std::to_string(k++);
    Branch br;
    br.from_bus = detail::required<int>(jb, "from_bus", who);
    br.to_bus = detail::required<int>(jb, "to_bus", who);
    br.r = detail::optional_field<double>(jb, "r", who).value_or(0.0);
    br.x = detail::optional_field<double>(jb, "x", who).value_or(0.0);
    br.b_sh = detail::optional_field<double>(jb, "b_sh", who).value_or(0.0);
    br.i_max = detail::optional_field<double>(jb, "i_max", who);
    sys.branches.push_back(br);
  }
  k = 0;
  for (const auto& jg : detail::array_field(doc, "generators", true)) {
    const std::string who = "generator " + std::to_string(k++);
    Generator g;
    g.bus = detail::required<int>(jg, "bus", who);
    g.a = detail::required<double>(jg, "a", who);
    g.b = detail::required<double>(jg, "b", who);
    g.c = detail::required<double>(jg, "c", who);
    g.p_min = detail::required<double>(jg, "p_min", who);
    g.p_max = detail::required<double>(jg, "p_max", who);
    g.q_min = detail::required<double>(jg, "q_min", who);
    g.q_max = detail::required<double>(jg, "q_max", who);
    sys.generators.push_back(g);
  }
  k = 0;
  for (const auto& js : detail::array_field(doc, "storages", false)) {
    const std::string who = "storage " + std::to_string(k++);
    StorageDevice s;
    s.bus = detail::required<int>(js, "bus", who);
    s.e_min = detail::required<double>(js, "e_min", who);
    s.e_max = detail::required<double>(js, "e_max", who);
    s.e_init = detail::required<double>(js, "e_init", who);
    s.p_in_max = detail::required<double>(js, "p_in_max", who);
    s.p_out_max = detail::required<double>(js, "p_out_max", who);
    s.eta_c = detail::required<double>(js, "eta_c", who);
    s.eta_d = detail::required<double>(js, "eta_d", who);
    s.eps_sbl = detail::optional_field<double>(js, "eps_sbl", who).value_or(0.0);
    sys.storages.push_back(s);
  }
  std::set<int> wind;
  for (const auto& jw : detail::array_field(doc, "wind_buses", false)) {
    if (!jw.is_number_integer()) throw InputError("wind_buses: entries must be integers");
    wind.insert(jw.get<int>());
  }
  sys.wind_buses.assign(wind.begin(), wind.end());

  sys.validate(opts);
  return sys;
}

inline nlohmann::json to_json(const PowerSystem& sys) {
  using nlohmann::json;
  json doc;
  doc["base_mva"] = sys.base_mva;
  json buses = json::array();
  for (const auto& b : sys.buses) {
    json jb = {{"id", b.id},          {"kind", to_string(b.kind)}, {"p_load_base", b.p_load_base},
               {"q_load_base", b.q_load_base}, {"v_min", b.v_min}, {"v_max", b.v_max}};
    if (b.v_set) jb["v_set"] = *b.v_set;
    buses.push_back(jb);
  }
  doc["buses"] = buses;
  json branches = json::array();
  for (const auto& br : sys.branches) {
    json jb = {{"from_bus", br.from_bus}, {"to_bus", br.to_bus}, {"r", br.r}, {"x", br.x}, {"b_sh", br.b_sh}};
    if (br.i_max) jb["i_max"] = *br.i_max;
    branches.push_back(jb);
  }
  doc["branches"] = branches;
  json gens = json::array();
  for (const auto& g : sys.generators)
    gens.push_back({{"bus", g.bus}, {"a", g.a}, {"b", g.b}, {"c", g.c}, {"p_min", g.p_min},
                    {"p_max", g.p_max}, {"q_min", g.q_min}, {"q_max", g.q_max}});
  doc["generators"] = gens;
  json stores = json::array();
  for (const auto& s : sys.storages)
    stores.push_back({{"bus", s.bus}, {"e_min", s.e_min}, {"e_max", s.e_max}, {"e_init", s.e_init},
                      {"p_in_max", s.p_in_max}, {"p_out_max", s.p_out_max}, {"eta_c", s.eta_c},
                      {"eta_d", s.eta_d}, {"eps_sbl", s.eps_sbl}});
  doc["storages"] = stores;
  doc["wind_buses"] = sys.wind_buses;
  return doc;
}

inline std::string serialize_case(const PowerSystem& sys) { return to_json(sys).dump(2); }

// ---------------------------------------------------------------------------
// Admittance

using ComplexMatrix = Eigen::MatrixXcd;

/// Bus admittance matrix under the pi branch model (series admittance plus
/// half the line charging at each end).
inline ComplexMatrix build_admittance(const PowerSystem& sys) {
  const auto n = static_cast<Eigen::Index>(sys.bus_count());
  ComplexMatrix y = ComplexMatrix::Zero(n, n);
  for (const auto& br : sys.branches) {
    const auto f = static_cast<Eigen::Index>(sys.index_of(br.from_bus));
    const auto t = static_cast<Eigen::Index>(sys.index_of(br.to_bus));
    const std::complex<double> ys = br.series_admittance();
    const std::complex<double> half_sh(0.0, 0.5 * br.b_sh);
    y(f, f) += ys + half_sh;
    y(t, t) += ys + half_sh;
    y(f, t) -= ys;
    y(t, f) -= ys;
  }
  return y;
}

// ---------------------------------------------------------------------------
// Time series (CSV)

struct TimeSeries {
  int interval_minutes = 10;
  std::vector<double> load_scale;
  std::map<int, std::vector<double>> wind_power;  // bus id -> p.u. per interval
  std::map<int, std::vector<double>> bus_load_scale;  // optional per-bus overrides

  std::size_t length() const { return load_scale.size(); }

  double load_multiplier(int bus_id, std::size_t t) const {
    auto it = bus_load_scale.find(bus_id);
    return it != bus_load_scale.end() ? it->second.at(t) : load_scale.at(t);
  }
  double wind_at(int bus_id, std::size_t t) const {
    auto it = wind_power.find(bus_id);
    return it != wind_power.end() ? it->second.at(t) : 0.0;
  }

  /// A constant series of `length` intervals (zero wind).
  static TimeSeries constant(const PowerSystem& sys, std::size_t length, double scale = 1.0) {
    TimeSeries ts;
    ts.load_scale.assign(length, scale);
    for (int w : sys.wind_buses) ts.wind_power[w].assign(length, 0.0);
    return ts;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_number(const std::string& s, const std::string& where) {
  if (s.empty()) throw InputError(where + ": empty value");
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw InputError(where + ": not a number '" + s + "'");
  }
  if (used != s.size()) throw InputError(where + ": not a number '" + s + "'");
  return v;
}

inline int parse_bus_suffix(const std::string& name, const std::string& prefix) {
  const std::string rest = name.substr(prefix.size());
  if (rest.empty() || !std::all_of(rest.begin(), rest.end(), [](char c) { return c >= '0' && c <= '9'; }))
    throw InputError("series header: bad column name '" + name + "'");
  return std::stoi(rest);
}

}  // namespace detail

/// Parses `minute,load_scale,wind_<bus>...` CSV text. Optional `load_<bus>`
/// columns override the system-wide load multiplier for one bus.
inline TimeSeries parse_timeseries(const std::string& text, const PowerSystem& sys) {
  std::istringstream is(text);
  std::string line;
  std::vector<std::string> header;
  while (std::getline(is, line)) {
    if (!detail::trim(line).empty()) {
      header = detail::split_csv_line(line);
      break;
    }
  }
  if (header.size() < 2 || header[0] != "minute" || header[1] != "load_scale")
    throw InputError("series header must start with 'minute,load_scale'");

  enum class Col { wind, load };
  std::vector<std::pair<Col, int>> cols;
  std::set<int> seen_wind;
  for (std::size_t c = 2; c < header.size(); ++c) {
    const std::string& name = header[c];
    if (name.rfind("wind_", 0) == 0) {
      const int bus = detail::parse_bus_suffix(name, "wind_");
      if (!std::binary_search(sys.wind_buses.begin(), sys.wind_buses.end(), bus))
        throw InputError("series: unknown wind bus " + std::to_string(bus));
      if (!seen_wind.insert(bus).second) throw InputError("series: duplicate column " + name);
      cols.emplace_back(Col::wind, bus);
    } else if (name.rfind("load_", 0) == 0) {
      const int bus = detail::parse_bus_suffix(name, "load_");
      if (bus < 1 || bus > static_cast<int>(sys.bus_count()))
        throw InputError("series: unknown load bus " + std::to_string(bus));
      cols.emplace_back(Col::load, bus);
    } else {
      throw InputError("series header: unexpected column '" + name + "'");
    }
  }
  for (int w : sys.wind_buses)
    if (!seen_wind.count(w)) throw InputError("series: missing column wind_" + std::to_string(w));

  TimeSeries ts;
  std::vector<double> minutes;
  std::size_t row = 0;
  while (std::getline(is, line)) {
    if (detail::trim(line).empty()) continue;
    ++row;
    const auto cells = detail::split_csv_line(line);
    std::size_t filled = 0;
    for (const auto& c : cells)
      if (!c.empty()) ++filled;
    if (cells.size() > header.size())
      throw InputError("series row " + std::to_string(row) + ": too many fields");
    if (filled < header.size()) {
      // Report which column ran short.
      std::size_t c = 0;
      while (c < cells.size() && !cells[c].empty()) ++c;
      throw InputError("series length mismatch: column '" + header[c] + "' has no value in row " +
                       std::to_string(row));
    }
    const std::string where = "series row " + std::to_string(row);
    minutes.push_back(detail::parse_number(cells[0], where));
    const double scale = detail::parse_number(cells[1], where);
    if (!(scale > 0.0)) throw InputError(where + ": load_scale must be positive");
    ts.load_scale.push_back(scale);
    for (std::size_t c = 0; c < cols.size(); ++c) {
      const double v = detail::parse_number(cells[c + 2], where);
      if (cols[c].first == Col::wind) {
        if (v < 0.0) throw InputError(where + ": negative wind at bus " + std::to_string(cols[c].second));
        ts.wind_power[cols[c].second].push_back(v);
      } else {
        if (!(v > 0.0)) throw InputError(where + ": load multiplier must be positive");
        ts.bus_load_scale[cols[c].second].push_back(v);
      }
    }
  }
  if (ts.load_scale.empty()) throw InputError("series has no rows");
  if (minutes.size() >= 2) {
    const double stride = minutes[1] - minutes[0];
    if (!(stride > 0.0) || stride != std::floor(stride))
      throw InputError("series: minute must increase by a positive integer stride");
    for (std::size_t i = 1; i < minutes.size(); ++i)
      if (minutes[i] - minutes[i - 1] != stride)
        throw InputError("series: non-constant minute stride at row " + std::to_string(i + 1));
    ts.interval_minutes = static_cast<int>(stride);
  }
  return ts;
}

inline std::string serialize_timeseries(const TimeSeries& ts) {
  std::ostringstream os;
  os.precision(17);
  os << "minute,load_scale";
  for (const auto& [bus, _] : ts.wind_power) os << ",wind_" << bus;
  for (const auto& [bus, _] : ts.bus_load_scale) os << ",load_" << bus;
  os << '\n';
  for (std::size_t t = 0; t < ts.length(); ++t) {
    os << t * static_cast<std::size_t>(ts.interval_minutes) << ',' << ts.load_scale[t];
    for (const auto& [bus, v] : ts.wind_power) os << ',' << v[t];
    for (const auto& [bus, v] : ts.bus_load_scale) os << ',' << v[t];
    os << '\n';
  }
  return os.str();
}

}  // namespace mpcopf
