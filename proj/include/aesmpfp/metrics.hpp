#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "envsim.hpp"

namespace aesmpfp {

// One training-curve record, appended when an episode finishes. trailing_tcr
// is the completion-rate fraction over the last trailing_window episodes.
struct CurvePoint {
  size_t step = 0;
  double episodic_return = 0.0;
  double trailing_tcr = 0.0;
};

struct EvalRow {
  uint64_t seed = 0;
  size_t episode = 0;
  int aikf = 0;
  int abc = 0;
  bool tcr = false;
  bool psr = false;
};

// aikf/abc are mean +- sample sd over episodes x seeds (sd 0 when n < 2);
// tcr/psr are percentages.
struct EvalAggregates {
  size_t episodes = 0;
  double aikf_mean = 0.0, aikf_sd = 0.0;
  double abc_mean = 0.0, abc_sd = 0.0;
  double tcr_pct = 0.0;
  double psr_pct = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  EvalAggregates agg;
};

inline EvalAggregates compute_aggregates(const std::vector<EvalRow>& rows) {
  EvalAggregates a;
  a.episodes = rows.size();
  if (rows.empty()) return a;
  const double n = static_cast<double>(rows.size());
  double aikf_sum = 0, abc_sum = 0, tcr_sum = 0, psr_sum = 0;
  for (const EvalRow& r : rows) {
    aikf_sum += r.aikf;
    abc_sum += r.abc;
    tcr_sum += r.tcr ? 1.0 : 0.0;
    psr_sum += r.psr ? 1.0 : 0.0;
  }
  a.aikf_mean = aikf_sum / n;
  a.abc_mean = abc_sum / n;
  a.tcr_pct = 100.0 * tcr_sum / n;
  a.psr_pct = 100.0 * psr_sum / n;
  if (rows.size() > 1) {
    double va = 0, vb = 0;
    for (const EvalRow& r : rows) {
      va += (r.aikf - a.aikf_mean) * (r.aikf - a.aikf_mean);
      vb += (r.abc - a.abc_mean) * (r.abc - a.abc_mean);
    }
    a.aikf_sd = std::sqrt(va / (n - 1.0));
    a.abc_sd = std::sqrt(vb / (n - 1.0));
  }
  return a;
}

inline nlohmann::json curve_point_json(const CurvePoint& p) {
  return {{"step", p.step}, {"return", p.episodic_return}, {"trailing_tcr", p.trailing_tcr}};
}

inline CurvePoint curve_point_from_json(const nlohmann::json& j) {
  CurvePoint p;
  p.step = j.at("step").get<size_t>();
  p.episodic_return = j.at("return").get<double>();
  p.trailing_tcr = j.at("trailing_tcr").get<double>();
  return p;
}

inline nlohmann::json eval_row_json(const EvalRow& r) {
  return {{"seed", r.seed}, {"episode", r.episode}, {"aikf", r.aikf},
          {"abc", r.abc},   {"tcr", r.tcr ? 1 : 0}, {"psr", r.psr ? 1 : 0}};
}

inline EvalRow eval_row_from_json(const nlohmann::json& j) {
  EvalRow r;
  r.seed = j.at("seed").get<uint64_t>();
  r.episode = j.at("episode").get<size_t>();
  r.aikf = j.at("aikf").get<int>();
  r.abc = j.at("abc").get<int>();
  r.tcr = j.at("tcr").get<int>() != 0;
  r.psr = j.at("psr").get<int>() != 0;
  return r;
}

// Per-episode rows followed by one aggregate line; the aggregates are a pure
// function of the rows so a reader can verify the file against itself.
inline void write_eval_report(const std::string& path, const EvalReport& report) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("metrics: cannot open " + path);
  for (const EvalRow& r : report.rows) os << eval_row_json(r).dump() << "\n";
  const EvalAggregates& a = report.agg;
  const nlohmann::json agg = {
      {"aggregate", true},        {"episodes", a.episodes},
      {"aikf_mean", a.aikf_mean}, {"aikf_sd", a.aikf_sd},
      {"abc_mean", a.abc_mean},   {"abc_sd", a.abc_sd},
      {"tcr_pct", a.tcr_pct},     {"psr_pct", a.psr_pct}};
  os << agg.dump() << "\n";
}

inline EvalReport read_eval_report(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("metrics: cannot open " + path);
  EvalReport report;
  bool saw_agg = false;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    if (j.contains("aggregate")) {
      report.agg.episodes = j.at("episodes").get<size_t>();
      report.agg.aikf_mean = j.at("aikf_mean").get<double>();
      report.agg.aikf_sd = j.at("aikf_sd").get<double>();
      report.agg.abc_mean = j.at("abc_mean").get<double>();
      report.agg.abc_sd = j.at("abc_sd").get<double>();
      report.agg.tcr_pct = j.at("tcr_pct").get<double>();
      report.agg.psr_pct = j.at("psr_pct").get<double>();
      saw_agg = true;
    } else {
      report.rows.push_back(eval_row_from_json(j));
    }
  }
  if (!saw_agg) throw Error("metrics: report missing aggregate line: " + path);
  return report;
}

inline std::vector<CurvePoint> read_curve(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("metrics: cannot open " + path);
  std::vector<CurvePoint> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(curve_point_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

inline std::string csv_header() {
  return "preset,episodes,aikf_mean,aikf_sd,abc_mean,abc_sd,tcr_pct,psr_pct";
}

inline std::string csv_row(const std::string& preset, const EvalAggregates& a) {
  std::ostringstream os;
  os << preset << ',' << a.episodes;
  const double vals[] = {a.aikf_mean, a.aikf_sd, a.abc_mean, a.abc_sd, a.tcr_pct, a.psr_pct};
  for (double v : vals) os << ',' << nlohmann::json(v).dump();
  return os.str();
}

}  // namespace aesmpfp
