#pragma once

#include "lof.hpp"

namespace aesmpfp {

struct PriorityWeights {
  double w1 = 1.0;
  double w2 = 1.0;
  double w3 = 1.0;
};

struct PrioritySignals {
  double p_ice = 0.0;
  double p_tc = 0.0;
  bool ik_flag = false;
  double p_per = 0.0;
  double p_total = 0.0;
};

// Composite per-transition priority
//   p_total = w1 * max(0, p_ice - 1) + w2 * p_tc * ik + w3 * p_per
// The hinge realizes the rule that only outliers (LOF > 1) contribute.
inline double total_priority(const PrioritySignals& s, const PriorityWeights& w) {
  return w.w1 * std::max(0.0, s.p_ice - 1.0) +
         w.w2 * s.p_tc * (s.ik_flag ? 1.0 : 0.0) + w.w3 * s.p_per;
}

// Per-episode priority computation.  p_ice is the LOF of each pre-transition
// observation within the episode; episodes too short for a k-neighborhood get
// p_ice = 1 (no outlier evidence, hinge contributes 0).  p_per is the raw
// model loss normalized by the episode's running maximum.
inline std::vector<PrioritySignals> compute_priorities(
    const std::vector<FeaturePoint>& observations, const std::vector<bool>& ik_flags,
    const std::vector<double>& rssm_losses, const PriorityWeights& w, size_t k,
    double lambda, double p_tc_value) {
  const size_t n = observations.size();
  if (ik_flags.size() != n || rssm_losses.size() != n)
    throw ShapeMismatch("compute_priorities: length mismatch");
  if (w.w1 < 0 || w.w2 < 0 || w.w3 < 0)
    throw Error("compute_priorities: negative weight");

  std::vector<double> ice(n, 1.0);
  if (n > k && w.w1 > 0.0) ice = lof_scores(observations, k, lambda);

  std::vector<PrioritySignals> out(n);
  double running_max = 0.0;
  for (size_t i = 0; i < n; ++i) {
    running_max = std::max(running_max, rssm_losses[i]);
    PrioritySignals& s = out[i];
    s.p_ice = ice[i];
    s.p_tc = p_tc_value;
    s.ik_flag = ik_flags[i];
    s.p_per = running_max > 0.0 ? rssm_losses[i] / running_max : 0.0;
    s.p_total = total_priority(s, w);
  }
  return out;
}

// A fragment is a window of consecutive transitions inside one episode.
struct Fragment {
  size_t start = 0;
  size_t length = 0;
  double total_priority = 0.0;
};

// Select up to max_fragments non-overlapping windows of length W with the
// highest summed priority, greedily, ties broken toward earlier starts.
// Episodes shorter than W yield one whole-episode fragment.
inline std::vector<Fragment> extract_fragments(const std::vector<PrioritySignals>& sig,
                                               size_t W, size_t max_fragments) {
  const size_t n = sig.size();
  if (W < 1 || n < 1) throw Error("extract_fragments: empty input");
  std::vector<Fragment> out;
  if (n < W) {
    double s = 0.0;
    for (const PrioritySignals& p : sig) s += p.p_total;
    out.push_back({0, n, s});
    return out;
  }

  // Fresh per-window sums: a rolling sum would accumulate rounding drift and
  // could flip greedy decisions on exact ties.
  std::vector<Fragment> windows(n - W + 1);
  for (size_t s = 0; s + W <= n; ++s) {
    double acc = 0.0;
    for (size_t i = s; i < s + W; ++i) acc += sig[i].p_total;
    windows[s] = {s, W, acc};
  }
  std::stable_sort(windows.begin(), windows.end(), [](const Fragment& a, const Fragment& b) {
    if (a.total_priority != b.total_priority) return a.total_priority > b.total_priority;
    return a.start < b.start;
  });

  std::vector<bool> used(n, false);
  for (const Fragment& cand : windows) {
    if (out.size() >= max_fragments) break;
    bool overlap = false;
    for (size_t i = cand.start; i < cand.start + cand.length && !overlap; ++i)
      overlap = used[i];
    if (overlap) continue;
    for (size_t i = cand.start; i < cand.start + cand.length; ++i) used[i] = true;
    out.push_back(cand);
  }
  return out;
}

}  // namespace aesmpfp
