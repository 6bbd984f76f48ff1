#pragma once

// Benchmark reports. A report stores per-instance lengths and times for every
// method; every summary number is recomputed from those records, so a report
// read back from JSON summarizes to exactly the same values.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "permtour/ensemble.hpp"
#include "permtour/error.hpp"

namespace permtour {

struct MethodRun {
  std::string name;
  std::vector<double> lengths;  // per instance
  std::vector<double> seconds;  // per instance compute time
  double setup_seconds = 0.0;   // model load etc., excluded from per-instance time
};

struct BenchmarkReport {
  std::vector<MethodRun> methods;
  std::optional<std::vector<double>> optimum;  // Held-Karp lengths when available
  std::string reference;  // method name used when no optimum; empty = first method
  nlohmann::json metadata = nlohmann::json::object();

  std::size_t instances() const {
    if (!methods.empty()) return methods.front().lengths.size();
    return optimum ? optimum->size() : 0;
  }

  void validate() const {
    const std::size_t m = instances();
    for (const auto& r : methods)
      require(r.lengths.size() == m && r.seconds.size() == m, ErrorCode::ShapeMismatch,
              "report: method " + r.name + " has a different instance count");
    if (optimum)
      require(optimum->size() == m, ErrorCode::ShapeMismatch, "report: optimum count mismatch");
  }
};

struct MethodSummary {
  std::string name;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
  std::optional<double> gap_pct;           // 100 (mean - ref) / ref
  std::optional<double> mean_instance_gap_pct;  // mean over instances of 100 (len/opt - 1); oracle only
  double total_seconds = 0.0;
  double per_instance_ms = 0.0;
};

struct ReportSummary {
  std::string reference;  // "optimal" or a method name
  double reference_mean = 0.0;
  std::vector<MethodSummary> rows;
};

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

inline ReportSummary summarize(const BenchmarkReport& r) {
  r.validate();
  ReportSummary out;
  const std::vector<double>* ref = nullptr;
  if (r.optimum) {
    ref = &*r.optimum;
    out.reference = "optimal";
  } else if (!r.methods.empty()) {
    const MethodRun* m = &r.methods.front();
    for (const auto& x : r.methods)
      if (x.name == r.reference) m = &x;
    ref = &m->lengths;
    out.reference = m->name;
  }
  if (ref) out.reference_mean = mean_of(*ref);
  for (const auto& m : r.methods) {
    MethodSummary s;
    s.name = m.name;
    s.mean = mean_of(m.lengths);
    s.stddev = stddev_of(m.lengths);
    if (ref && out.reference_mean > 0.0)
      s.gap_pct = 100.0 * (s.mean - out.reference_mean) / out.reference_mean;
    if (r.optimum) {
      double g = 0.0;
      for (std::size_t i = 0; i < m.lengths.size(); ++i) g += 100.0 * (m.lengths[i] / (*r.optimum)[i] - 1.0);
      s.mean_instance_gap_pct = m.lengths.empty() ? 0.0 : g / static_cast<double>(m.lengths.size());
    }
    for (double t : m.seconds) s.total_seconds += t;
    s.per_instance_ms = m.seconds.empty() ? 0.0 : 1000.0 * s.total_seconds / static_cast<double>(m.seconds.size());
    s.total_seconds += m.setup_seconds;
    out.rows.push_back(std::move(s));
  }
  return out;
}

struct Histogram {
  double lo = 0.0, hi = 0.0, width = 0.0;
  std::vector<std::size_t> counts;
};

/// Fixed-width bins over [min, max]; the maximum falls in the last bin.
inline Histogram histogram(const std::vector<double>& v, std::size_t bins = 50) {
  require(bins >= 1, ErrorCode::Validation, "histogram: bins must be >= 1");
  Histogram h;
  h.counts.assign(bins, 0);
  if (v.empty()) return h;
  h.lo = *std::min_element(v.begin(), v.end());
  h.hi = *std::max_element(v.begin(), v.end());
  h.width = (h.hi - h.lo) / static_cast<double>(bins);
  for (double x : v) {
    std::size_t b = h.width > 0.0 ? static_cast<std::size_t>((x - h.lo) / h.width) : 0;
    ++h.counts[std::min(b, bins - 1)];
  }
  return h;
}

inline void write_histograms_csv(std::ostream& out, const BenchmarkReport& r, std::size_t bins = 50) {
  out << "method,bin_left,count\n" << std::setprecision(17);
  for (const auto& m : r.methods) {
    const Histogram h = histogram(m.lengths, bins);
    for (std::size_t b = 0; b < h.counts.size(); ++b)
      out << m.name << ',' << h.lo + static_cast<double>(b) * h.width << ',' << h.counts[b] << '\n';
  }
}

inline nlohmann::json to_json(const BenchmarkReport& r) {
  nlohmann::json methods = nlohmann::json::array();
  for (const auto& m : r.methods)
    methods.push_back({{"name", m.name}, {"lengths", m.lengths}, {"seconds", m.seconds},
                       {"setup_seconds", m.setup_seconds}});
  nlohmann::json j{{"methods", methods}, {"reference", r.reference}, {"metadata", r.metadata}};
  if (r.optimum) j["optimum"] = *r.optimum;
  const ReportSummary s = summarize(r);
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : s.rows) {
    nlohmann::json x{{"method", row.name}, {"mean", row.mean}, {"std", row.stddev},
                     {"total_seconds", row.total_seconds}, {"per_instance_ms", row.per_instance_ms}};
    if (row.gap_pct) x["gap_pct"] = *row.gap_pct;
    if (row.mean_instance_gap_pct) x["mean_instance_gap_pct"] = *row.mean_instance_gap_pct;
    rows.push_back(x);
  }
  j["summary"] = {{"reference", s.reference}, {"reference_mean", s.reference_mean}, {"rows", rows}};
  return j;
}

inline BenchmarkReport report_from_json(const nlohmann::json& j) {
  BenchmarkReport r;
  try {
    for (const auto& m : j.at("methods"))
      r.methods.push_back({m.at("name").get<std::string>(), m.at("lengths").get<std::vector<double>>(),
                           m.at("seconds").get<std::vector<double>>(), m.value("setup_seconds", 0.0)});
    if (j.contains("optimum")) r.optimum = j.at("optimum").get<std::vector<double>>();
    r.reference = j.value("reference", std::string{});
    if (j.contains("metadata")) r.metadata = j.at("metadata");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Io, std::string("report JSON: ") + e.what());
  }
  r.validate();
  return r;
}

/// Per-instance CSV: instance, one length column per method, optimum if known.
inline void write_instances_csv(std::ostream& out, const BenchmarkReport& r) {
  out << "instance";
  for (const auto& m : r.methods) out << ',' << m.name;
  if (r.optimum) out << ",optimal";
  out << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < r.instances(); ++i) {
    out << i;
    for (const auto& m : r.methods) out << ',' << m.lengths[i];
    if (r.optimum) out << ',' << (*r.optimum)[i];
    out << '\n';
  }
}

enum class TableFormat { Csv, Json, Markdown };

inline TableFormat table_format_from_string(const std::string& s) {
  if (s == "csv") return TableFormat::Csv;
  if (s == "json") return TableFormat::Json;
  if (s == "md" || s == "markdown") return TableFormat::Markdown;
  fail(ErrorCode::Validation, "unknown format '" + s + "' (csv, json, md)");
}

namespace detail {

inline std::string fmt(double v, int prec) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

inline void write_table(std::ostream& out, TableFormat f, const std::vector<std::string>& header,
                        const std::vector<std::vector<std::string>>& rows) {
  if (f == TableFormat::Csv) {
    for (std::size_t k = 0; k < header.size(); ++k) out << (k ? "," : "") << header[k];
    out << '\n';
    for (const auto& r : rows) {
      for (std::size_t k = 0; k < r.size(); ++k) out << (k ? "," : "") << r[k];
      out << '\n';
    }
  } else if (f == TableFormat::Markdown) {
    out << '|';
    for (const auto& h : header) out << ' ' << h << " |";
    out << "\n|";
    for (std::size_t k = 0; k < header.size(); ++k) out << "---|";
    out << '\n';
    for (const auto& r : rows) {
      out << '|';
      for (const auto& c : r) out << ' ' << c << " |";
      out << '\n';
    }
  } else {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows) {
      nlohmann::json o = nlohmann::json::object();
      for (std::size_t k = 0; k < header.size(); ++k) {
        char* end = nullptr;
        const double v = std::strtod(r[k].c_str(), &end);
        if (!r[k].empty() && end && *end == '\0')
          o[header[k]] = v;
        else if (r[k].empty())
          o[header[k]] = nullptr;
        else
          o[header[k]] = r[k];
      }
      arr.push_back(o);
    }
    out << arr.dump(2) << '\n';
  }
}

}  // namespace detail

/// Method table: mean length, std, gap, time.
inline void write_method_table(std::ostream& out, const BenchmarkReport& r, TableFormat f) {
  const ReportSummary s = summarize(r);
  std::vector<std::vector<std::string>> rows;
  for (const auto& row : s.rows)
    rows.push_back({row.name, detail::fmt(row.mean, 4), detail::fmt(row.stddev, 4),
                    row.gap_pct ? detail::fmt(*row.gap_pct, 2) : "",
                    detail::fmt(row.total_seconds, 3), detail::fmt(row.per_instance_ms, 3)});
  if (r.optimum) rows.push_back({"optimal", detail::fmt(s.reference_mean, 4), detail::fmt(stddev_of(*r.optimum), 4), detail::fmt(0.0, 2), "", ""});
  detail::write_table(out, f, {"method", "mean_length", "std", "gap_pct_vs_" + s.reference, "total_s", "per_instance_ms"}, rows);
}

/// Ensemble table: one row per member with mean length and win percentage,
/// then the ensemble mean.
inline void write_ensemble_table(std::ostream& out, const EnsembleSummary& s, TableFormat f) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t k = 0; k < s.tags.size(); ++k)
    rows.push_back({s.tags[k], detail::fmt(s.mean_length[k], 4), std::to_string(s.wins[k]), detail::fmt(s.win_pct[k], 1)});
  rows.push_back({"ensemble", detail::fmt(s.ensemble_mean, 4), "", ""});
  detail::write_table(out, f, {"member", "mean_length", "wins", "win_pct"}, rows);
}

}  // namespace permtour
