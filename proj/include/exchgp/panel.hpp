#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdlib>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "exchgp/common.hpp"
#include "exchgp/rng.hpp"

namespace exchgp {

// One unit's trajectory: times strictly increasing, outcomes aligned,
// covariates (T_i x p), optional last-untreated time T0 (w=1 iff t > T0).
struct UnitRecord {
  std::string unit_id;
  std::vector<int> times;
  Eigen::VectorXd outcomes;
  Eigen::MatrixXd covariates;  // times.size() x p
  std::optional<int> treatment_time;

  int rows() const { return static_cast<int>(times.size()); }

  // Index of time t within this unit, or -1.
  int row_of_time(int t) const {
    auto it = std::lower_bound(times.begin(), times.end(), t);
    if (it == times.end() || *it != t) return -1;
    return static_cast<int>(it - times.begin());
  }
};

struct PanelDataset {
  std::vector<UnitRecord> units;            // sorted by unit_id
  std::vector<std::string> covariate_names;  // size p

  int n_units() const { return static_cast<int>(units.size()); }
  int n_covariates() const { return static_cast<int>(covariate_names.size()); }

  int total_rows() const {
    int n = 0;
    for (const auto& u : units) n += u.rows();
    return n;
  }

  const UnitRecord* find_unit(const std::string& id) const {
    for (const auto& u : units)
      if (u.unit_id == id) return &u;
    return nullptr;
  }
  int unit_index(const std::string& id) const {
    for (std::size_t i = 0; i < units.size(); ++i)
      if (units[i].unit_id == id) return static_cast<int>(i);
    return -1;
  }

  std::vector<std::string> never_treated_ids() const {
    std::vector<std::string> out;
    for (const auto& u : units)
      if (!u.treatment_time) out.push_back(u.unit_id);
    return out;
  }
  std::vector<std::string> treated_ids() const {
    std::vector<std::string> out;
    for (const auto& u : units)
      if (u.treatment_time) out.push_back(u.unit_id);
    return out;
  }

  void validate() const {
    std::set<std::string> seen;
    for (const auto& u : units) {
      if (!seen.insert(u.unit_id).second)
        throw DataError("duplicate unit id '" + u.unit_id + "'");
      if (u.times.empty()) throw DataError("unit '" + u.unit_id + "' has no rows");
      for (std::size_t r = 1; r < u.times.size(); ++r)
        if (u.times[r] <= u.times[r - 1])
          throw DataError("unit '" + u.unit_id +
                          "': times not strictly increasing at t=" +
                          std::to_string(u.times[r]));
      if (u.outcomes.size() != u.rows())
        throw DataError("unit '" + u.unit_id + "': outcome length mismatch");
      if (u.covariates.rows() != u.rows() ||
          u.covariates.cols() != static_cast<Eigen::Index>(covariate_names.size()))
        throw DataError("unit '" + u.unit_id + "': covariate shape mismatch");
      if (u.treatment_time) {
        const int t0 = *u.treatment_time;
        if (t0 < u.times.front() || t0 > u.times.back())
          throw DataError("unit '" + u.unit_id + "': treatment_time " +
                          std::to_string(t0) + " outside observed range [" +
                          std::to_string(u.times.front()) + ", " +
                          std::to_string(u.times.back()) + "]");
      }
    }
  }
};

// A stacked observation address. Splits and predictive rows are ordered
// lists of these.
struct RowKey {
  std::string unit_id;
  int t = 0;

  friend bool operator==(const RowKey& a, const RowKey& b) {
    return a.unit_id == b.unit_id && a.t == b.t;
  }
};

struct TrainPredSplit {
  std::vector<RowKey> train_rows;
  std::vector<RowKey> pred_rows;
};

// ---------------------------------------------------------------------------
// CSV interchange. Long format, header row, columns
// unit,time,outcome[,x1..xp][,treatment_time]; empty treatment_time cell
// means never treated.
// ---------------------------------------------------------------------------

struct CsvSchema {
  std::string unit = "unit";
  std::string time = "time";
  std::string outcome = "outcome";
  std::string treatment_time = "treatment_time";

  // Parses "unit=state,time=year,outcome=sales,treatment_time=t0".
  static CsvSchema parse(const std::string& mapping) {
    CsvSchema s;
    std::stringstream ss(mapping);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      const auto eq = item.find('=');
      if (eq == std::string::npos)
        throw ConfigError("--schema entry '" + item + "' is not key=value");
      const std::string key = item.substr(0, eq), val = item.substr(eq + 1);
      if (key == "unit") s.unit = val;
      else if (key == "time") s.time = val;
      else if (key == "outcome") s.outcome = val;
      else if (key == "treatment_time") s.treatment_time = val;
      else throw ConfigError("--schema: unknown key '" + key + "'");
    }
    return s;
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

inline double parse_double_cell(const std::string& cell, int line_no,
                                const std::string& col) {
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (cell.empty() || end != cell.c_str() + cell.size())
    throw DataError("row " + std::to_string(line_no) + ", column '" + col +
                    "': cannot parse '" + cell + "' as a number");
  return v;
}

inline int parse_int_cell(const std::string& cell, int line_no,
                          const std::string& col) {
  const double v = parse_double_cell(cell, line_no, col);
  const int i = static_cast<int>(v);
  if (static_cast<double>(i) != v)
    throw DataError("row " + std::to_string(line_no) + ", column '" + col +
                    "': '" + cell + "' is not an integer");
  return i;
}

}  // namespace detail

inline PanelDataset load_panel(std::istream& in,
                               const CsvSchema& schema = CsvSchema{}) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("CSV: empty input");
  const auto header = detail::split_csv_line(line);

  int c_unit = -1, c_time = -1, c_outcome = -1, c_t0 = -1;
  std::vector<int> c_cov;
  std::vector<std::string> cov_names;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const std::string& h = header[i];
    if (h == schema.unit) c_unit = static_cast<int>(i);
    else if (h == schema.time) c_time = static_cast<int>(i);
    else if (h == schema.outcome) c_outcome = static_cast<int>(i);
    else if (h == schema.treatment_time) c_t0 = static_cast<int>(i);
    else {
      c_cov.push_back(static_cast<int>(i));
      cov_names.push_back(h);
    }
  }
  if (c_unit < 0) throw DataError("CSV: missing required column '" + schema.unit + "'");
  if (c_time < 0) throw DataError("CSV: missing required column '" + schema.time + "'");
  if (c_outcome < 0)
    throw DataError("CSV: missing required column '" + schema.outcome + "'");

  struct Row {
    int t;
    double y;
    std::vector<double> x;
    std::optional<int> t0;
    int line_no;
  };
  std::map<std::string, std::vector<Row>> by_unit;

  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError("row " + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " cells, got " +
                      std::to_string(cells.size()));
    Row r;
    r.line_no = line_no;
    r.t = detail::parse_int_cell(cells[c_time], line_no, schema.time);
    r.y = detail::parse_double_cell(cells[c_outcome], line_no, schema.outcome);
    for (std::size_t j = 0; j < c_cov.size(); ++j)
      r.x.push_back(detail::parse_double_cell(cells[c_cov[j]], line_no, cov_names[j]));
    if (c_t0 >= 0 && !cells[c_t0].empty())
      r.t0 = detail::parse_int_cell(cells[c_t0], line_no, schema.treatment_time);
    by_unit[cells[c_unit]].push_back(std::move(r));
  }
  if (by_unit.empty()) throw DataError("CSV: no data rows");

  PanelDataset data;
  data.covariate_names = cov_names;
  for (auto& [id, rows] : by_unit) {
    std::stable_sort(rows.begin(), rows.end(),
                     [](const Row& a, const Row& b) { return a.t < b.t; });
    UnitRecord u;
    u.unit_id = id;
    u.outcomes.resize(static_cast<Eigen::Index>(rows.size()));
    u.covariates.resize(static_cast<Eigen::Index>(rows.size()),
                        static_cast<Eigen::Index>(cov_names.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (r > 0 && rows[r].t == rows[r - 1].t)
        throw DataError("row " + std::to_string(rows[r].line_no) +
                        ": duplicate (unit, time) pair ('" + id + "', " +
                        std::to_string(rows[r].t) + ")");
      u.times.push_back(rows[r].t);
      u.outcomes[static_cast<Eigen::Index>(r)] = rows[r].y;
      for (std::size_t j = 0; j < cov_names.size(); ++j)
        u.covariates(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) =
            rows[r].x[j];
      if (rows[r].t0) {
        if (u.treatment_time && *u.treatment_time != *rows[r].t0)
          throw DataError("unit '" + id + "': conflicting treatment_time values " +
                          std::to_string(*u.treatment_time) + " and " +
                          std::to_string(*rows[r].t0));
        u.treatment_time = rows[r].t0;
      }
    }
    data.units.push_back(std::move(u));
  }
  data.validate();
  return data;
}

inline void save_panel(const PanelDataset& data, std::ostream& out) {
  out << "unit,time,outcome";
  for (const auto& name : data.covariate_names) out << ',' << name;
  out << ",treatment_time\n";
  char buf[64];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << buf;
  };
  for (const auto& u : data.units) {
    for (int r = 0; r < u.rows(); ++r) {
      out << u.unit_id << ',' << u.times[r] << ',';
      put(u.outcomes[r]);
      for (Eigen::Index j = 0; j < u.covariates.cols(); ++j) {
        out << ',';
        put(u.covariates(r, j));
      }
      out << ',';
      if (u.treatment_time) out << *u.treatment_time;
      out << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Train/prediction splitting.
// ---------------------------------------------------------------------------

// Train rows: every never-treated unit's full series plus the designated
// unit's rows with t <= t0. Other treated units are excluded entirely.
// Pred rows: designated unit's rows with t0 < t <= t0 + horizon.
inline TrainPredSplit make_split(const PanelDataset& data,
                                 const std::string& treated_unit, int t0,
                                 std::optional<int> horizon = std::nullopt) {
  const UnitRecord* treated = data.find_unit(treated_unit);
  if (!treated) throw DataError("make_split: unknown unit '" + treated_unit + "'");
  if (t0 < treated->times.front() || t0 > treated->times.back())
    throw DataError("make_split: t0=" + std::to_string(t0) +
                    " outside unit '" + treated_unit + "' observed range [" +
                    std::to_string(treated->times.front()) + ", " +
                    std::to_string(treated->times.back()) + "]");
  if (treated->treatment_time && t0 > *treated->treatment_time)
    throw DataError("make_split: t0=" + std::to_string(t0) +
                    " is after unit '" + treated_unit + "' treatment time " +
                    std::to_string(*treated->treatment_time));
  if (horizon && *horizon <= 0)
    throw DataError("make_split: horizon must be positive");

  TrainPredSplit split;
  for (const auto& u : data.units) {
    if (u.unit_id == treated_unit) continue;
    if (u.treatment_time) continue;  // other treated units dropped entirely
    for (int t : u.times) split.train_rows.push_back({u.unit_id, t});
  }
  int n_pre = 0;
  for (int t : treated->times) {
    if (t <= t0) {
      split.train_rows.push_back({treated_unit, t});
      ++n_pre;
    } else if (!horizon || t <= t0 + *horizon) {
      split.pred_rows.push_back({treated_unit, t});
    }
  }
  if (n_pre == 0)
    throw DataError("make_split: unit '" + treated_unit +
                    "' has no pre-period rows at t0=" + std::to_string(t0));
  if (split.pred_rows.empty())
    throw DataError("make_split: empty prediction window for unit '" +
                    treated_unit + "' after t0=" + std::to_string(t0));
  return split;
}

// Reduced dataset: the designated unit plus M never-treated units drawn
// uniformly without replacement; deterministic for a fixed seed. Units in
// the result are sorted by unit_id.
inline PanelDataset subsample_controls(const PanelDataset& data,
                                       const std::string& treated_unit, int M,
                                       std::uint64_t seed) {
  const UnitRecord* treated = data.find_unit(treated_unit);
  if (!treated)
    throw DataError("subsample_controls: unknown unit '" + treated_unit + "'");
  std::vector<const UnitRecord*> pool;
  for (const auto& u : data.units)
    if (!u.treatment_time && u.unit_id != treated_unit) pool.push_back(&u);
  if (M < 0 || static_cast<std::size_t>(M) > pool.size())
    throw DataError("subsample_controls: M=" + std::to_string(M) +
                    " exceeds never-treated pool of size " +
                    std::to_string(pool.size()));

  SplitMix64 rng(seed);
  const auto picks = sample_without_replacement(pool.size(),
                                                static_cast<std::size_t>(M), rng);
  PanelDataset out;
  out.covariate_names = data.covariate_names;
  out.units.push_back(*treated);
  for (std::size_t i : picks) out.units.push_back(*pool[i]);
  std::sort(out.units.begin(), out.units.end(),
            [](const UnitRecord& a, const UnitRecord& b) {
              return a.unit_id < b.unit_id;
            });
  return out;
}

}  // namespace exchgp
