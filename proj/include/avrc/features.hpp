#pragma once

// Design matrices for the half-hourly demand model: lagged demand, a
// temperature-by-time-of-day surface built from tensor products of
// B-splines, and weekday dummies.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "avrc/errors.hpp"
#include "avrc/linalg.hpp"
#include "avrc/model.hpp"

namespace avrc {

/// All B-spline basis values of the given degree at x. The knot vector is
/// the full one (boundary knots repeated as needed); the basis has
/// knots.size() - degree - 1 functions and is evaluated on
/// [knots[degree], knots[size - degree - 1]], x being clamped to it.
inline Vector bspline_basis(double x, const std::vector<double>& knots, int degree) {
  require(degree >= 0, "bspline_basis: negative degree");
  const auto nk = static_cast<int>(knots.size());
  const int count = nk - degree - 1;
  if (count < 1) throw ContractViolation("bspline_basis: too few knots for the degree");
  for (int i = 1; i < nk; ++i) {
    if (!(knots[i] >= knots[i - 1])) throw ContractViolation("bspline_basis: knots must be non-decreasing");
  }
  const double lo = knots[degree];
  const double hi = knots[count];
  if (!(hi > lo)) throw ContractViolation("bspline_basis: empty evaluation interval");
  if (!std::isfinite(x)) throw InvalidData("bspline_basis: non-finite argument");
  x = std::clamp(x, lo, hi);

  // Span index s with knots[s] <= x < knots[s+1], restricted to
  // degree <= s < count; at the right boundary the last nonempty span is used.
  int span = degree;
  for (int s = degree; s < count; ++s) {
    if (knots[s + 1] > knots[s] && x >= knots[s]) span = s;
  }

  // de Boor's triangular recursion for the degree + 1 nonzero functions.
  std::vector<double> n(degree + 1, 0.0), left(degree + 1), right(degree + 1);
  n[0] = 1.0;
  for (int d = 1; d <= degree; ++d) {
    left[d] = x - knots[span + 1 - d];
    right[d] = knots[span + d] - x;
    double saved = 0.0;
    for (int r = 0; r < d; ++r) {
      const double denom = right[r + 1] + left[d - r];
      const double temp = denom > 0.0 ? n[r] / denom : 0.0;
      n[r] = saved + right[r + 1] * temp;
      saved = left[d - r] * temp;
    }
    n[d] = saved;
  }
  Vector out = Vector::Zero(count);
  for (int r = 0; r <= degree; ++r) out(span - degree + r) = n[r];
  return out;
}

/// Clamped knot vector: boundaries repeated degree + 1 times around `interior`.
inline std::vector<double> clamped_knots(double lo, double hi, const std::vector<double>& interior,
                                         int degree) {
  std::vector<double> k(static_cast<std::size_t>(degree + 1), lo);
  k.insert(k.end(), interior.begin(), interior.end());
  k.insert(k.end(), static_cast<std::size_t>(degree + 1), hi);
  return k;
}

/// Degree used for a basis of `count` functions: cubic when possible.
inline int spline_degree(int count) { return std::min(3, count - 1); }

/**
 * Periodic B-spline basis over J intervals per day. Interval j (1-based) sits
 * at t = j - 1 on a circle of circumference J; Q functions with uniform knot
 * spacing J / Q, each the fold of an ordinary B-spline onto the circle.
 */
inline Vector cyclic_bspline_basis(int j, int intervals, int count, int degree) {
  require(intervals >= 1 && count >= 1 && degree >= 0, "cyclic_bspline_basis: bad sizes");
  require(j >= 1 && j <= intervals + 1, "cyclic_bspline_basis: interval out of range");
  const double period = static_cast<double>(intervals);
  const double h = period / count;
  double t = std::fmod(static_cast<double>(j - 1), period);
  if (t < 0.0) t += period;
  // Unclamped uniform knots (i - degree) h, i = 0 .. count + 2 degree; the
  // count + degree functions sum to one on [0, period].
  std::vector<double> knots(static_cast<std::size_t>(count + 2 * degree + 1));
  for (std::size_t i = 0; i < knots.size(); ++i) {
    knots[i] = (static_cast<double>(i) - degree) * h;
  }
  const Vector raw = bspline_basis(t, knots, degree);
  Vector out = Vector::Zero(count);
  for (Eigen::Index i = 0; i < raw.size(); ++i) {
    const auto start = static_cast<int>(i) - degree;
    out(((start % count) + count) % count) += raw(i);
  }
  return out;
}

/// Days as calendar dates.
using Date = std::chrono::year_month_day;

inline Date parse_date(const std::string& text) {
  int y = 0;
  unsigned m = 0, d = 0;
  char dash1 = 0, dash2 = 0;
  std::istringstream in(text);
  in >> y >> dash1 >> m >> dash2 >> d;
  const Date date{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (in.fail() || dash1 != '-' || dash2 != '-' || !date.ok()) {
    throw InvalidData("invalid ISO-8601 date '" + text + "'");
  }
  return date;
}

inline std::string format_date(const Date& d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()),
                static_cast<unsigned>(d.month()), static_cast<unsigned>(d.day()));
  return buf;
}

/// ISO weekday: Monday = 1 ... Sunday = 7.
inline unsigned iso_weekday(const Date& d) {
  return std::chrono::weekday{std::chrono::sys_days{d}}.iso_encoding();
}

/**
 * Rectangular panel: demand[u](day, interval) for every unit, a daily
 * temperature per area, and the calendar.
 */
struct PanelSeries {
  std::vector<Date> days;
  std::vector<bool> holiday;          // per day
  int intervals = 0;                  // J
  std::vector<std::string> unit_ids;
  std::vector<std::string> area_ids;  // sorted
  std::vector<int> unit_area;         // index into area_ids, per unit
  std::vector<Matrix> demand;         // per unit: days x intervals
  Matrix temperature;                 // days x areas

  std::size_t day_count() const { return days.size(); }

  void validate() const {
    const auto d = static_cast<Eigen::Index>(days.size());
    require(intervals >= 1, "panel: need at least one interval per day");
    require(holiday.size() == days.size(), "panel: holiday flags do not match days");
    require(unit_area.size() == unit_ids.size() && demand.size() == unit_ids.size(),
            "panel: unit tables disagree");
    require(temperature.rows() == d &&
                temperature.cols() == static_cast<Eigen::Index>(area_ids.size()),
            "panel: temperature table has the wrong shape");
    for (std::size_t u = 0; u < demand.size(); ++u) {
      require(demand[u].rows() == d && demand[u].cols() == intervals,
              "panel: demand of unit " + unit_ids[u] + " has the wrong shape");
      require(unit_area[u] >= 0 && unit_area[u] < static_cast<int>(area_ids.size()),
              "panel: unit " + unit_ids[u] + " has an unknown area");
      if (!demand[u].allFinite()) throw InvalidData("panel: non-finite demand for unit " + unit_ids[u]);
    }
    if (!temperature.allFinite()) throw InvalidData("panel: non-finite temperature");
  }
};

/// T lag days, H temperature bases, Q cyclic bases, L weekday dummies, J intervals.
struct DemandModelSpec {
  int lags = 7;
  int temperature_bases = 5;
  int cyclic_bases = 5;
  int weekday_dummies = 6;
  int intervals = 24;

  void validate() const {
    if (lags < 0 || temperature_bases < 1 || cyclic_bases < 1 || weekday_dummies < 0 ||
        weekday_dummies > 6 || intervals < 1) {
      throw ConfigError("DemandModelSpec: need T >= 0, H >= 1, Q >= 1, 0 <= L <= 6, J >= 1");
    }
  }

  int interaction_columns() const { return cyclic_bases * temperature_bases; }
  int unit_columns() const { return lags + interaction_columns() + weekday_dummies; }
  /// Aggregated design with area-shared weather blocks: M T + R Q H + L.
  long long shared_columns(long long units, long long areas) const {
    return units * lags + areas * interaction_columns() + weekday_dummies;
  }
};

/// Temperature basis with knots at quantiles of the observed temperatures.
struct TemperatureBasis {
  std::vector<double> knots;
  int degree = 3;

  static TemperatureBasis from_data(std::vector<double> values, int count) {
    require(count >= 1, "temperature basis needs at least one function");
    require(!values.empty(), "temperature basis needs data");
    std::sort(values.begin(), values.end());
    TemperatureBasis b;
    b.degree = spline_degree(count);
    const double lo = values.front();
    double hi = values.back();
    if (!(hi > lo)) hi = lo + 1.0;  // constant temperature: any nonempty interval
    const int interior = count - b.degree - 1;
    std::vector<double> inner;
    for (int i = 1; i <= interior; ++i) {
      const double pos = static_cast<double>(i) / (interior + 1) * (values.size() - 1);
      const auto idx = static_cast<std::size_t>(pos);
      const double frac = pos - static_cast<double>(idx);
      const double v = idx + 1 < values.size()
                           ? values[idx] + frac * (values[idx + 1] - values[idx])
                           : values[idx];
      inner.push_back(std::clamp(v, lo, hi));
    }
    b.knots = clamped_knots(lo, hi, inner, b.degree);
    return b;
  }

  Vector operator()(double x) const { return bspline_basis(x, knots, degree); }
};

namespace detail {

struct DesignContext {
  TemperatureBasis temperature;
  Matrix cyclic;  // intervals x Q
  int cyclic_degree = 3;
};

inline DesignContext design_context(const PanelSeries& panel, const DemandModelSpec& spec) {
  spec.validate();
  panel.validate();
  require(panel.intervals == spec.intervals, "panel interval count does not match the spec");
  if (panel.day_count() < static_cast<std::size_t>(spec.lags) + 1) {
    throw InvalidData("panel has " + std::to_string(panel.day_count()) +
                      " days; at least T + 1 = " + std::to_string(spec.lags + 1) + " are needed");
  }
  DesignContext ctx;
  const auto& t = panel.temperature;
  ctx.temperature = TemperatureBasis::from_data(
      std::vector<double>(t.data(), t.data() + t.size()), spec.temperature_bases);
  ctx.cyclic_degree = spline_degree(spec.cyclic_bases);
  ctx.cyclic.resize(spec.intervals, spec.cyclic_bases);
  for (int j = 1; j <= spec.intervals; ++j) {
    ctx.cyclic.row(j - 1) =
        cyclic_bspline_basis(j, spec.intervals, spec.cyclic_bases, ctx.cyclic_degree).transpose();
  }
  return ctx;
}

// Mon..Sat map to dummies 1..6; Sunday and holidays to none.
inline void fill_weekday(Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row, const PanelSeries& panel,
                         std::size_t day, int dummies) {
  row.setZero();
  if (panel.holiday[day]) return;
  const unsigned wd = iso_weekday(panel.days[day]);
  if (wd <= static_cast<unsigned>(dummies)) row(static_cast<Eigen::Index>(wd) - 1) = 1.0;
}

inline void fill_interactions(Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row, const DesignContext& ctx,
                              int interval, double temperature) {
  const Vector g = ctx.temperature(temperature);
  const Eigen::Index h = g.size();
  for (Eigen::Index q = 0; q < ctx.cyclic.cols(); ++q) {
    row.segment(q * h, h) = ctx.cyclic(interval, q) * g.transpose();
  }
}

}  // namespace detail

/**
 * Per-unit design. Rows run over days i > T (day-major) and intervals j;
 * columns are [T lags | Q H interactions, q-major | L weekday dummies].
 */
inline RegressionProblem build_design(const PanelSeries& panel, const DemandModelSpec& spec,
                                      std::size_t unit, int model_id = 1) {
  const detail::DesignContext ctx = detail::design_context(panel, spec);
  require(unit < panel.unit_ids.size(), "build_design: unit index out of range");
  const auto days = panel.day_count();
  const int t_lags = spec.lags;
  const int qh = spec.interaction_columns();
  const Eigen::Index rows = static_cast<Eigen::Index>(days - t_lags) * spec.intervals;
  RegressionProblem out;
  out.model_id = model_id;
  out.design = Matrix::Zero(rows, spec.unit_columns());
  out.response.resize(rows);
  const Matrix& y = panel.demand[unit];
  const int area = panel.unit_area[unit];
  Eigen::Index row = 0;
  for (std::size_t i = t_lags; i < days; ++i) {
    for (int j = 0; j < spec.intervals; ++j, ++row) {
      auto r = out.design.row(row);
      for (int t = 1; t <= t_lags; ++t) r(t - 1) = y(static_cast<Eigen::Index>(i) - t, j);
      detail::fill_interactions(r.segment(t_lags, qh), ctx, j, panel.temperature(i, area));
      detail::fill_weekday(r.segment(t_lags + qh, spec.weekday_dummies), panel, i,
                           spec.weekday_dummies);
      out.response(row) = y(static_cast<Eigen::Index>(i), j);
    }
  }
  return out;
}

/**
 * Aggregated design for a set of units: unit-specific lag blocks (in the
 * given unit order), one interaction block per distinct area (ascending
 * area index), one shared weekday block. Response is the summed demand.
 */
inline RegressionProblem build_avr_design(const PanelSeries& panel, const DemandModelSpec& spec,
                                          const std::vector<std::size_t>& units) {
  const detail::DesignContext ctx = detail::design_context(panel, spec);
  require(!units.empty(), "build_avr_design: no units");
  std::set<int> area_set;
  for (std::size_t u : units) {
    require(u < panel.unit_ids.size(), "build_avr_design: unit index out of range");
    area_set.insert(panel.unit_area[u]);
  }
  const std::vector<int> areas(area_set.begin(), area_set.end());
  const auto days = panel.day_count();
  const int t_lags = spec.lags;
  const int qh = spec.interaction_columns();
  const auto m = static_cast<Eigen::Index>(units.size());
  const auto r_count = static_cast<Eigen::Index>(areas.size());
  const Eigen::Index rows = static_cast<Eigen::Index>(days - t_lags) * spec.intervals;
  const auto cols = static_cast<Eigen::Index>(spec.shared_columns(m, r_count));
  RegressionProblem out;
  out.model_id = 1;
  out.design = Matrix::Zero(rows, cols);
  out.response = Vector::Zero(rows);
  Eigen::Index row = 0;
  for (std::size_t i = t_lags; i < days; ++i) {
    for (int j = 0; j < spec.intervals; ++j, ++row) {
      auto r = out.design.row(row);
      for (Eigen::Index k = 0; k < m; ++k) {
        const Matrix& y = panel.demand[units[static_cast<std::size_t>(k)]];
        for (int t = 1; t <= t_lags; ++t) r(k * t_lags + t - 1) = y(static_cast<Eigen::Index>(i) - t, j);
        out.response(row) += y(static_cast<Eigen::Index>(i), j);
      }
      for (Eigen::Index a = 0; a < r_count; ++a) {
        detail::fill_interactions(r.segment(m * t_lags + a * qh, qh), ctx, j,
                                  panel.temperature(i, areas[static_cast<std::size_t>(a)]));
      }
      detail::fill_weekday(r.segment(m * t_lags + r_count * qh, spec.weekday_dummies), panel, i,
                           spec.weekday_dummies);
    }
  }
  return out;
}

/// Per-unit designs for every unit, as a collection with ids 1..M in unit order.
inline ModelCollection build_collection(const PanelSeries& panel, const DemandModelSpec& spec) {
  std::vector<RegressionProblem> problems;
  for (std::size_t u = 0; u < panel.unit_ids.size(); ++u) {
    problems.push_back(build_design(panel, spec, u, static_cast<int>(u) + 1));
  }
  return ModelCollection(std::move(problems));
}

// ---- CSV loading -------------------------------------------------------

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// Reads a headed CSV and returns rows as maps from column name to value.
struct CsvTable {
  std::string path;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw InvalidData(path + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }

  std::string where(std::size_t row) const {
    return path + ":" + std::to_string(line_numbers[row]);
  }
};

inline CsvTable read_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidData("cannot open '" + path + "'");
  CsvTable t;
  t.path = path;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw InvalidData(path + ":" + std::to_string(lineno) + ": expected " +
                        std::to_string(t.header.size()) + " fields, got " +
                        std::to_string(fields.size()));
    }
    t.rows.push_back(std::move(fields));
    t.line_numbers.push_back(lineno);
  }
  if (t.header.empty()) throw InvalidData(path + ": empty file");
  return t;
}

inline double parse_number(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InvalidData(where + ": '" + s + "' is not a finite number");
  }
}

inline int parse_int(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InvalidData(where + ": '" + s + "' is not an integer");
  }
}

inline bool date_less(const Date& a, const Date& b) {
  return std::chrono::sys_days{a} < std::chrono::sys_days{b};
}

}  // namespace detail

/**
 * Loads a panel from CSV files:
 *   demand:   date,interval,unit_id,value
 *   weather:  date,area,temperature
 *   units:    unit_id,area,category
 *   holidays: date (optional)
 * The panel must be complete: every (date, interval, unit) cell and every
 * (date, area) temperature present exactly once.
 */
inline PanelSeries load_panel(const std::string& demand_path, const std::string& weather_path,
                              const std::string& units_path,
                              const std::optional<std::string>& holidays_path = std::nullopt) {
  using detail::parse_int;
  using detail::parse_number;
  PanelSeries p;

  const auto units = detail::read_table(units_path);
  const std::size_t u_id = units.column("unit_id");
  const std::size_t u_area = units.column("area");
  units.column("category");
  std::map<std::string, std::string> area_of;
  for (std::size_t r = 0; r < units.rows.size(); ++r) {
    const auto& row = units.rows[r];
    if (!area_of.emplace(row[u_id], row[u_area]).second) {
      throw InvalidData(units.where(r) + ": duplicate unit '" + row[u_id] + "'");
    }
    p.unit_ids.push_back(row[u_id]);
  }
  if (p.unit_ids.empty()) throw InvalidData(units_path + ": no units");
  std::set<std::string> area_set;
  for (const auto& [u, a] : area_of) area_set.insert(a);
  p.area_ids.assign(area_set.begin(), area_set.end());
  auto area_index = [&](const std::string& a) {
    return static_cast<int>(std::lower_bound(p.area_ids.begin(), p.area_ids.end(), a) -
                            p.area_ids.begin());
  };
  for (const auto& u : p.unit_ids) p.unit_area.push_back(area_index(area_of[u]));

  const auto demand = detail::read_table(demand_path);
  const std::size_t d_date = demand.column("date");
  const std::size_t d_int = demand.column("interval");
  const std::size_t d_unit = demand.column("unit_id");
  const std::size_t d_val = demand.column("value");
  std::map<std::chrono::sys_days, std::size_t> day_index;
  int max_interval = 0;
  for (std::size_t r = 0; r < demand.rows.size(); ++r) {
    const auto& row = demand.rows[r];
    day_index.emplace(std::chrono::sys_days{parse_date(row[d_date])}, 0);
    const int j = parse_int(row[d_int], demand.where(r));
    if (j < 1) throw InvalidData(demand.where(r) + ": interval must be >= 1");
    max_interval = std::max(max_interval, j);
  }
  if (day_index.empty()) throw InvalidData(demand_path + ": no rows");
  p.intervals = max_interval;
  for (auto& [day, idx] : day_index) {
    idx = p.days.size();
    p.days.emplace_back(day);
  }
  const auto nd = static_cast<Eigen::Index>(p.days.size());
  std::map<std::string, std::size_t> unit_index;
  for (std::size_t u = 0; u < p.unit_ids.size(); ++u) unit_index[p.unit_ids[u]] = u;
  p.demand.assign(p.unit_ids.size(), Matrix::Constant(nd, p.intervals, std::nan("")));
  for (std::size_t r = 0; r < demand.rows.size(); ++r) {
    const auto& row = demand.rows[r];
    const auto it = unit_index.find(row[d_unit]);
    if (it == unit_index.end()) {
      throw InvalidData(demand.where(r) + ": unit '" + row[d_unit] + "' not in units table");
    }
    const auto di = static_cast<Eigen::Index>(day_index[std::chrono::sys_days{parse_date(row[d_date])}]);
    const int j = parse_int(row[d_int], demand.where(r)) - 1;
    double& cell = p.demand[it->second](di, j);
    if (!std::isnan(cell)) throw InvalidData(demand.where(r) + ": duplicate demand cell");
    cell = parse_number(row[d_val], demand.where(r));
  }
  for (std::size_t u = 0; u < p.unit_ids.size(); ++u) {
    for (Eigen::Index i = 0; i < nd; ++i) {
      for (int j = 0; j < p.intervals; ++j) {
        if (std::isnan(p.demand[u](i, j))) {
          throw InvalidData(demand_path + ": missing value for unit '" + p.unit_ids[u] +
                            "' on " + format_date(p.days[static_cast<std::size_t>(i)]) +
                            " interval " + std::to_string(j + 1));
        }
      }
    }
  }

  const auto weather = detail::read_table(weather_path);
  const std::size_t w_date = weather.column("date");
  const std::size_t w_area = weather.column("area");
  const std::size_t w_temp = weather.column("temperature");
  p.temperature = Matrix::Constant(nd, static_cast<Eigen::Index>(p.area_ids.size()), std::nan(""));
  for (std::size_t r = 0; r < weather.rows.size(); ++r) {
    const auto& row = weather.rows[r];
    const auto it = day_index.find(std::chrono::sys_days{parse_date(row[w_date])});
    if (it == day_index.end()) continue;  // weather outside the demand window
    if (!area_set.count(row[w_area])) continue;
    double& cell = p.temperature(static_cast<Eigen::Index>(it->second), area_index(row[w_area]));
    if (!std::isnan(cell)) throw InvalidData(weather.where(r) + ": duplicate temperature");
    cell = parse_number(row[w_temp], weather.where(r));
  }
  for (Eigen::Index i = 0; i < p.temperature.rows(); ++i) {
    for (Eigen::Index a = 0; a < p.temperature.cols(); ++a) {
      if (std::isnan(p.temperature(i, a))) {
        throw InvalidData(weather_path + ": missing temperature for area '" +
                          p.area_ids[static_cast<std::size_t>(a)] + "' on " +
                          format_date(p.days[static_cast<std::size_t>(i)]));
      }
    }
  }

  p.holiday.assign(p.days.size(), false);
  if (holidays_path) {
    const auto hol = detail::read_table(*holidays_path);
    const std::size_t h_date = hol.column("date");
    for (const auto& row : hol.rows) {
      const auto it = day_index.find(std::chrono::sys_days{parse_date(row[h_date])});
      if (it != day_index.end()) p.holiday[it->second] = true;
    }
  }
  // Dates must be consecutive so that lag t means t days earlier.
  for (std::size_t i = 1; i < p.days.size(); ++i) {
    if (std::chrono::sys_days{p.days[i]} - std::chrono::sys_days{p.days[i - 1]} !=
        std::chrono::days{1}) {
      throw InvalidData(demand_path + ": dates are not consecutive around " +
                        format_date(p.days[i]));
    }
  }
  p.validate();
  return p;
}

/// A deterministic synthetic panel (for dry runs and tests).
inline PanelSeries synthetic_panel(std::size_t units, std::size_t areas, std::size_t days,
                                   int intervals, std::uint64_t seed = 0) {
  require(units >= 1 && areas >= 1 && areas <= units && days >= 1 && intervals >= 1,
          "synthetic_panel: bad sizes");
  PanelSeries p;
  p.intervals = intervals;
  const std::chrono::sys_days start{std::chrono::year{2024} / 1 / 1};
  for (std::size_t i = 0; i < days; ++i) {
    p.days.emplace_back(start + std::chrono::days{static_cast<int>(i)});
    p.holiday.push_back(i % 17 == 5);
  }
  for (std::size_t a = 0; a < areas; ++a) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "A%03zu", a);
    p.area_ids.emplace_back(buf);
  }
  const auto nd = static_cast<Eigen::Index>(days);
  p.temperature.resize(nd, static_cast<Eigen::Index>(areas));
  std::uint64_t state = seed * 0x9E3779B97F4A7C15ull + 1;
  auto noise = [&state]() {
    state = state * 6364136223846793005ull + 1442695040888963407ull;
    return static_cast<double>(state >> 11) * 0x1.0p-53 - 0.5;
  };
  for (Eigen::Index i = 0; i < nd; ++i)
    for (Eigen::Index a = 0; a < p.temperature.cols(); ++a)
      p.temperature(i, a) = 15.0 + 10.0 * std::sin(0.017 * static_cast<double>(i) + a) + 2.0 * noise();
  for (std::size_t u = 0; u < units; ++u) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "U%04zu", u);
    p.unit_ids.emplace_back(buf);
    p.unit_area.push_back(static_cast<int>(u % areas));
    Matrix y(nd, intervals);
    for (Eigen::Index i = 0; i < nd; ++i)
      for (int j = 0; j < intervals; ++j)
        y(i, j) = 100.0 + 20.0 * std::sin(6.283185307179586 * j / intervals) +
                  0.5 * p.temperature(i, p.unit_area.back()) + 5.0 * noise();
    p.demand.push_back(std::move(y));
  }
  return p;
}

}  // namespace avrc
