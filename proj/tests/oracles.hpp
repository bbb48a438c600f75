#pragma once

// Independent reference implementations used to cross-check the library.
// Plain loops over std::vector<double>; nothing here calls into translico.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

namespace oracle {

using Rows = std::vector<std::vector<double>>;

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  return dot(a, b) / (norm(a) * norm(b));
}

inline std::vector<double> unit(const std::vector<double>& a) {
  std::vector<double> u = a;
  const double n = norm(a);
  for (auto& x : u) x /= n;
  return u;
}

// Per-anchor InfoNCE, averaged over all anchors.
inline double tcm_loss(const Rows& h, const std::vector<std::size_t>& pair_of, double tau) {
  const std::size_t n = h.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      denom += std::exp(cosine(h[i], h[j]) / tau);
    }
    const double pos = cosine(h[i], h[pair_of[i]]) / tau;
    total += -(pos - std::log(denom));
  }
  return total / static_cast<double>(n);
}

// Full sort of every candidate; stable so equal scores keep index order.
inline double retrieval_accuracy(const Rows& q, const Rows& c, const std::vector<std::size_t>& gold, std::size_t k) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    std::vector<double> s(c.size());
    for (std::size_t j = 0; j < c.size(); ++j) s[j] = cosine(q[i], c[j]);
    std::vector<std::size_t> order(c.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
    for (std::size_t r = 0; r < k; ++r)
      if (order[r] == gold[i]) {
        ++correct;
        break;
      }
  }
  return static_cast<double>(correct) / static_cast<double>(q.size());
}

// Raw centroid cosine matrix with groups in tag-name order.
inline Rows centroid_cosines(const Rows& h, const std::vector<std::string>& tags, bool normalize) {
  std::map<std::string, std::vector<double>> sum;
  std::map<std::string, double> count;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const auto v = normalize ? unit(h[i]) : h[i];
    auto& s = sum[tags[i]];
    if (s.empty()) s.assign(v.size(), 0.0);
    for (std::size_t d = 0; d < v.size(); ++d) s[d] += v[d];
    count[tags[i]] += 1.0;
  }
  Rows cents;
  for (auto& [tag, s] : sum) {
    for (auto& x : s) x /= count[tag];
    cents.push_back(s);
  }
  Rows m(cents.size(), std::vector<double>(cents.size()));
  for (std::size_t a = 0; a < cents.size(); ++a)
    for (std::size_t b = 0; b < cents.size(); ++b) m[a][b] = cosine(cents[a], cents[b]);
  return m;
}

inline double sqdist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

inline double alignment(const Rows& h, const std::vector<std::size_t>& pair_of) {
  double s = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) s += sqdist(unit(h[i]), unit(h[pair_of[i]]));
  return s / static_cast<double>(h.size());
}

inline double uniformity(const Rows& h) {
  double s = 0.0, n = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i)
    for (std::size_t j = 0; j < h.size(); ++j) {
      if (i == j) continue;
      s += std::exp(-2.0 * sqdist(unit(h[i]), unit(h[j])));
      n += 1.0;
    }
  return std::log(s / n);
}

// Cyclic Jacobi rotations on a symmetric matrix; returns eigenvalues sorted
// descending.
inline std::vector<double> jacobi_eigenvalues(Rows a) {
  const std::size_t n = a.size();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a[i][i];
  std::sort(ev.rbegin(), ev.rend());
  return ev;
}

// Sample covariance (n - 1 denominator).
inline Rows covariance(const Rows& x) {
  const std::size_t n = x.size(), d = x.front().size();
  std::vector<double> mean(d, 0.0);
  for (const auto& r : x)
    for (std::size_t j = 0; j < d; ++j) mean[j] += r[j] / static_cast<double>(n);
  Rows c(d, std::vector<double>(d, 0.0));
  for (const auto& r : x)
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) c[a][b] += (r[a] - mean[a]) * (r[b] - mean[b]) / static_cast<double>(n - 1);
  return c;
}

}  // namespace oracle
