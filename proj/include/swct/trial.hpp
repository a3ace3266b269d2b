#pragma once

// Stepped-wedge trial data model: crossover schedule, derived cluster sets,
// and the cluster-period outcome panel.
//
// Clusters are 0-based indices. Periods are 1-based throughout the public
// API; a cluster's last control period j_i = 0 means it is on intervention
// from period 1, and j_i = J means it never crosses over.

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "swct/error.hpp"

namespace swct {

class TrialDesign {
 public:
  TrialDesign() = default;

  int n_clusters() const { return static_cast<int>(last_control_.size()); }
  int n_periods() const { return n_periods_; }

  // j_i for cluster i.
  int last_control(int cluster) const { return last_control_[cluster]; }
  std::span<const int> last_control_periods() const { return last_control_; }

  // X_{i,j}: monotone by construction.
  bool treated(int cluster, int period) const {
    return period > last_control_[cluster];
  }

  // Number of clusters on control in `period`.
  int n_control(int period) const {
    return static_cast<int>(std::count_if(last_control_.begin(), last_control_.end(),
                                          [period](int j) { return j >= period; }));
  }

  bool operator==(const TrialDesign&) const = default;

 private:
  friend TrialDesign build_design(std::span<const int>, int);
  std::vector<int> last_control_;
  int n_periods_ = 0;
};

// I_{0,j}, I_{1,j}, I_{2,j}: on control in both j-1 and j, crossing over in j,
// on intervention in both.
struct ClusterSets {
  std::vector<int> control;
  std::vector<int> crossing;
  std::vector<int> treated;

  bool operator==(const ClusterSets&) const = default;
};

inline TrialDesign build_design(std::span<const int> last_control_periods, int n_periods) {
  if (last_control_periods.empty()) throw InputError("design needs at least one cluster");
  if (n_periods < 1) throw InputError("design needs at least one period");
  for (std::size_t i = 0; i < last_control_periods.size(); ++i) {
    const int j = last_control_periods[i];
    if (j < 0 || j > n_periods) {
      throw InputError("cluster " + std::to_string(i) + ": last control period " +
                       std::to_string(j) + " outside [0, " + std::to_string(n_periods) + "]");
    }
  }
  TrialDesign d;
  d.last_control_.assign(last_control_periods.begin(), last_control_periods.end());
  d.n_periods_ = n_periods;
  return d;
}

inline TrialDesign build_design(std::initializer_list<int> last_control_periods, int n_periods) {
  return build_design(std::span<const int>(last_control_periods.begin(), last_control_periods.size()),
                      n_periods);
}

// Entries arriving from JSON or CSV may be non-integral.
inline TrialDesign build_design(std::span<const double> last_control_periods, int n_periods) {
  std::vector<int> as_int;
  as_int.reserve(last_control_periods.size());
  for (double x : last_control_periods) {
    if (!std::isfinite(x) || x != std::floor(x)) {
      throw InputError("last control period must be an integer, got " + std::to_string(x));
    }
    as_int.push_back(static_cast<int>(x));
  }
  return build_design(std::span<const int>(as_int), n_periods);
}

// The one-crossover-per-period layout: cluster i (0-based) crosses in period i+2.
inline TrialDesign standard_design(int n_clusters) {
  std::vector<int> j(n_clusters);
  for (int i = 0; i < n_clusters; ++i) j[i] = i + 1;
  return build_design(std::span<const int>(j), n_clusters + 1);
}

inline bool is_standard_design(const TrialDesign& d) {
  if (d.n_periods() != d.n_clusters() + 1) return false;
  for (int i = 0; i < d.n_clusters(); ++i)
    if (d.last_control(i) != i + 1) return false;
  return true;
}

inline ClusterSets cluster_sets(const TrialDesign& design, int period) {
  if (period < 2 || period > design.n_periods()) {
    throw InputError("cluster sets need 2 <= period <= " + std::to_string(design.n_periods()) +
                     ", got " + std::to_string(period));
  }
  ClusterSets s;
  for (int i = 0; i < design.n_clusters(); ++i) {
    const bool now = design.treated(i, period);
    const bool before = design.treated(i, period - 1);
    if (!now) s.control.push_back(i);
    else if (!before) s.crossing.push_back(i);
    else s.treated.push_back(i);
  }
  return s;
}

// Clusters that never leave control. Permitted; reported as a warning.
inline std::vector<int> never_crossing(const TrialDesign& design) {
  std::vector<int> out;
  for (int i = 0; i < design.n_clusters(); ++i)
    if (design.last_control(i) >= design.n_periods()) out.push_back(i);
  return out;
}

// Cluster-period means Y_{i,j}, optionally backed by event counts over
// at-risk denominators K_{i,j}. Stored cluster x (period - 1).
class OutcomePanel {
 public:
  OutcomePanel() = default;

  static OutcomePanel from_means(Eigen::MatrixXd means) {
    OutcomePanel p;
    p.values_ = std::move(means);
    return p;
  }

  static OutcomePanel from_counts(const Eigen::MatrixXi& events, const Eigen::MatrixXi& at_risk) {
    if (events.rows() != at_risk.rows() || events.cols() != at_risk.cols())
      throw InputError("events and at_risk grids differ in shape");
    OutcomePanel p;
    p.values_.resize(events.rows(), events.cols());
    for (Eigen::Index i = 0; i < events.rows(); ++i)
      for (Eigen::Index j = 0; j < events.cols(); ++j)
        p.values_(i, j) = at_risk(i, j) > 0 ? static_cast<double>(events(i, j)) / at_risk(i, j)
                                            : std::numeric_limits<double>::quiet_NaN();
    p.events_ = events;
    p.at_risk_ = at_risk;
    return p;
  }

  // Means with denominators but no event counts, e.g. after effect removal.
  static OutcomePanel from_means(Eigen::MatrixXd means, Eigen::MatrixXi at_risk) {
    OutcomePanel p;
    p.values_ = std::move(means);
    p.at_risk_ = std::move(at_risk);
    return p;
  }

  int n_clusters() const { return static_cast<int>(values_.rows()); }
  int n_periods() const { return static_cast<int>(values_.cols()); }

  double y(int cluster, int period) const { return values_(cluster, period - 1); }
  const Eigen::MatrixXd& values() const { return values_; }

  bool has_counts() const { return events_.has_value(); }
  bool has_at_risk() const { return at_risk_.has_value(); }
  const Eigen::MatrixXi& events() const { return *events_; }
  const Eigen::MatrixXi& at_risk() const { return *at_risk_; }

 private:
  Eigen::MatrixXd values_;
  std::optional<Eigen::MatrixXi> events_;
  std::optional<Eigen::MatrixXi> at_risk_;
};

struct PanelCheck {
  std::vector<std::string> warnings;
};

// Enforces grid completeness (NaN marks a missing cell), outcome ranges and
// count consistency.
inline PanelCheck validate_panel(const TrialDesign& design, const OutcomePanel& panel) {
  if (panel.n_clusters() != design.n_clusters() || panel.n_periods() != design.n_periods()) {
    throw InputError("panel is " + std::to_string(panel.n_clusters()) + "x" +
                     std::to_string(panel.n_periods()) + " but design is " +
                     std::to_string(design.n_clusters()) + "x" + std::to_string(design.n_periods()));
  }
  auto cell = [](int i, int j) {
    return "(cluster " + std::to_string(i) + ", period " + std::to_string(j) + ")";
  };
  for (int i = 0; i < panel.n_clusters(); ++i) {
    for (int j = 1; j <= panel.n_periods(); ++j) {
      if (panel.has_counts()) {
        const int ev = panel.events()(i, j - 1);
        const int k = panel.at_risk()(i, j - 1);
        if (k <= 0) throw InputError("non-positive at_risk at " + cell(i, j));
        if (ev < 0 || ev > k) {
          throw InputError("events " + std::to_string(ev) + " inconsistent with at_risk " +
                           std::to_string(k) + " at " + cell(i, j));
        }
      }
      const double y = panel.y(i, j);
      if (std::isnan(y)) throw InputError("missing cell " + cell(i, j));
      if (!std::isfinite(y)) throw InputError("non-finite outcome at " + cell(i, j));
      if (panel.has_counts() && (y < 0.0 || y > 1.0))
        throw InputError("outcome outside [0,1] at " + cell(i, j));
    }
  }
  PanelCheck check;
  for (int i : never_crossing(design))
    check.warnings.push_back("cluster " + std::to_string(i) + " never crosses over");
  return check;
}

// A design and panel with the cluster labels they were read under.
struct Trial {
  TrialDesign design;
  OutcomePanel panel;
  std::vector<std::string> cluster_labels;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    auto field = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r'))
      field.remove_suffix(1);
    out.push_back(field);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <class T>
T parse_number(std::string_view s, std::string_view what, std::size_t line_no) {
  T value{};
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw InputError("line " + std::to_string(line_no) + ": cannot parse " + std::string(what) +
                     " '" + std::string(s) + "'");
  }
  return value;
}

}  // namespace detail

// Reads `cluster,period,treated,events,at_risk` or
// `cluster,period,treated,outcome_mean`. Cluster order is first appearance;
// j_i is inferred from the treated flags, which must be monotone.
inline Trial read_trial_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw InputError("empty trial CSV");
  ++line_no;
  const auto header = detail::split_csv_line(line);
  bool counts = false;
  if (header.size() == 5 && header[0] == "cluster" && header[1] == "period" &&
      header[2] == "treated" && header[3] == "events" && header[4] == "at_risk") {
    counts = true;
  } else if (!(header.size() == 4 && header[0] == "cluster" && header[1] == "period" &&
               header[2] == "treated" && header[3] == "outcome_mean")) {
    throw InputError(
        "trial CSV header must be cluster,period,treated,events,at_risk or "
        "cluster,period,treated,outcome_mean");
  }

  struct Cell {
    int treated;
    int events;
    int at_risk;
    double mean;
  };
  std::vector<std::string> labels;
  std::map<std::string, int, std::less<>> index;
  std::map<std::pair<int, int>, Cell> cells;
  int max_period = 0;

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != header.size()) {
      throw InputError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " fields");
    }
    const std::string label(f[0]);
    auto it = index.find(label);
    if (it == index.end()) {
      it = index.emplace(label, static_cast<int>(labels.size())).first;
      labels.push_back(label);
    }
    const int period = detail::parse_number<int>(f[1], "period", line_no);
    if (period < 1) throw InputError("line " + std::to_string(line_no) + ": periods start at 1");
    const int treated = detail::parse_number<int>(f[2], "treated", line_no);
    if (treated != 0 && treated != 1)
      throw InputError("line " + std::to_string(line_no) + ": treated must be 0 or 1");
    Cell c{treated, 0, 0, 0.0};
    if (counts) {
      c.events = detail::parse_number<int>(f[3], "events", line_no);
      c.at_risk = detail::parse_number<int>(f[4], "at_risk", line_no);
    } else {
      c.mean = detail::parse_number<double>(f[3], "outcome_mean", line_no);
    }
    if (!cells.emplace(std::make_pair(it->second, period), c).second) {
      throw InputError("duplicate cell (cluster " + label + ", period " + std::to_string(period) + ")");
    }
    max_period = std::max(max_period, period);
  }
  if (labels.empty()) throw InputError("trial CSV has no data rows");

  const int n_clusters = static_cast<int>(labels.size());
  std::vector<int> last_control(n_clusters, 0);
  Eigen::MatrixXi events(n_clusters, max_period), at_risk(n_clusters, max_period);
  Eigen::MatrixXd means(n_clusters, max_period);
  for (int i = 0; i < n_clusters; ++i) {
    int last = 0;
    bool seen_treated = false;
    for (int j = 1; j <= max_period; ++j) {
      auto it = cells.find({i, j});
      if (it == cells.end()) {
        throw InputError("missing cell (cluster " + labels[i] + ", period " + std::to_string(j) + ")");
      }
      const Cell& c = it->second;
      if (c.treated == 1) {
        seen_treated = true;
      } else {
        if (seen_treated) {
          throw InputError("cluster " + labels[i] + " returns to control in period " +
                           std::to_string(j) + "; treatment must be monotone");
        }
        last = j;
      }
      events(i, j - 1) = c.events;
      at_risk(i, j - 1) = c.at_risk;
      means(i, j - 1) = c.mean;
    }
    last_control[i] = last;
  }

  Trial t;
  t.design = build_design(std::span<const int>(last_control), max_period);
  t.panel = counts ? OutcomePanel::from_counts(events, at_risk) : OutcomePanel::from_means(means);
  t.cluster_labels = std::move(labels);
  auto check = validate_panel(t.design, t.panel);
  t.warnings = std::move(check.warnings);
  return t;
}

inline Trial read_trial_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open trial CSV '" + path + "'");
  return read_trial_csv(in);
}

inline void write_trial_csv(std::ostream& out, const TrialDesign& design, const OutcomePanel& panel,
                            std::span<const std::string> labels = {}) {
  out << (panel.has_counts() ? "cluster,period,treated,events,at_risk\n"
                             : "cluster,period,treated,outcome_mean\n");
  out.precision(17);
  for (int i = 0; i < design.n_clusters(); ++i) {
    const std::string label = labels.empty() ? std::to_string(i + 1) : labels[i];
    for (int j = 1; j <= design.n_periods(); ++j) {
      out << label << ',' << j << ',' << (design.treated(i, j) ? 1 : 0) << ',';
      if (panel.has_counts())
        out << panel.events()(i, j - 1) << ',' << panel.at_risk()(i, j - 1) << '\n';
      else
        out << panel.y(i, j) << '\n';
    }
  }
}

}  // namespace swct
