#pragma once

#include <algorithm>
#include <vector>

#include "common.hpp"

namespace aesmpfp {

// One observation viewed as a point in feature space: the flattened occupancy
// map compared under L1 and the state vector compared by cosine.
struct FeaturePoint {
  std::vector<double> map;
  std::vector<double> vec;
};

// When a neighborhood is fully coincident (all reachability distances zero)
// the local density is taken to be this sentinel, which makes the LOF of
// coincident points come out as exactly 1.
constexpr double kLrdSentinel = 1e12;

namespace lof_detail {

inline double cosine_term(const std::vector<double>& a, const std::vector<double>& b,
                          bool* zero_norm) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  bool equal = true;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
    equal = equal && a[i] == b[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na == 0.0 || nb == 0.0) {
    if (zero_norm) *zero_norm = true;
    // Convention: two zero vectors point "the same way", one zero vector is
    // maximally misaligned.
    return (na == 0.0 && nb == 0.0) ? 0.0 : 1.0;
  }
  // cos(v, v) must be exactly 1 so that d(a, a) = 0; the quotient alone can
  // land one ulp off.
  if (equal) return 0.0;
  return 1.0 - dot / (na * nb);
}

inline double l1(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += std::abs(b[i] - a[i]);
  return s;
}

}  // namespace lof_detail

// Feature-space distance ||m_b - m_a||_1 + lambda * (1 - cos(v_a, v_b)).
// Throws ZeroVector when either state vector has zero norm; lof_scores applies
// the documented convention instead of failing.
inline double feature_distance(const FeaturePoint& a, const FeaturePoint& b,
                               double lambda) {
  if (a.map.size() != b.map.size() || a.vec.size() != b.vec.size())
    throw ShapeMismatch("feature_distance: dimension mismatch");
  bool zero = false;
  const double cos_term = lof_detail::cosine_term(a.vec, b.vec, &zero);
  if (zero) throw ZeroVector("feature_distance: zero-norm state vector");
  return lof_detail::l1(a.map, b.map) + lambda * cos_term;
}

// Same metric with the zero-norm convention applied, used internally.
inline double feature_distance_conv(const FeaturePoint& a, const FeaturePoint& b,
                                    double lambda) {
  return lof_detail::l1(a.map, b.map) +
         lambda * lof_detail::cosine_term(a.vec, b.vec, nullptr);
}

// Local outlier factor of every point: k-distance neighborhoods with ties,
// reachability distances, local reachability density, and the mean density
// ratio.  Output is aligned with the input order.
inline std::vector<double> lof_scores(const std::vector<FeaturePoint>& points,
                                      size_t k, double lambda) {
  const size_t n = points.size();
  if (k < 1 || n <= k)
    throw Error("lof_scores: need |points| > k >= 1");

  std::vector<double> dist(n * n, 0.0);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) {
      const double d = feature_distance_conv(points[i], points[j], lambda);
      dist[i * n + j] = d;
      dist[j * n + i] = d;
    }

  std::vector<double> kdist(n);
  std::vector<std::vector<size_t>> nbr(n);
  std::vector<double> row(n - 1);
  for (size_t i = 0; i < n; ++i) {
    size_t m = 0;
    for (size_t j = 0; j < n; ++j)
      if (j != i) row[m++] = dist[i * n + j];
    std::nth_element(row.begin(), row.begin() + (k - 1), row.end());
    kdist[i] = row[k - 1];
    for (size_t j = 0; j < n; ++j)
      if (j != i && dist[i * n + j] <= kdist[i]) nbr[i].push_back(j);
  }

  std::vector<double> lrd(n);
  for (size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (size_t j : nbr[i]) sum += std::max(kdist[j], dist[i * n + j]);
    const double mean = sum / static_cast<double>(nbr[i].size());
    lrd[i] = mean > 0.0 ? 1.0 / mean : kLrdSentinel;
  }

  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (size_t j : nbr[i]) sum += lrd[j] / lrd[i];
    out[i] = sum / static_cast<double>(nbr[i].size());
  }
  return out;
}

}  // namespace aesmpfp
