#pragma once
// Reference implementations used only by the tests. Each one takes the
// slowest obvious route to the answer and shares no code with the library.

#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

/// Gauss-Jordan inverse with partial pivoting.
inline Matrix inverse(Matrix a) {
  const std::size_t n = a.size();
  Matrix inv(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    }
    if (a[pivot][col] == 0.0) throw std::runtime_error("singular matrix");
    std::swap(a[col], a[pivot]);
    std::swap(inv[col], inv[pivot]);
    const double d = a[col][col];
    for (std::size_t c = 0; c < n; ++c) {
      a[col][c] /= d;
      inv[col][c] /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a[r][col];
      if (f == 0.0) continue;
      for (std::size_t c = 0; c < n; ++c) {
        a[r][c] -= f * a[col][c];
        inv[r][c] -= f * inv[col][c];
      }
    }
  }
  return inv;
}

inline double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

struct GpResult {
  double mean;      // target units
  double variance;  // standardized units
};

/// GP posterior through an explicit (K + noise I)^-1.
inline GpResult gp(const Matrix& x, const std::vector<double>& y, const std::vector<double>& q,
                   double lengthscale, double signal_var, double noise_var) {
  const std::size_t n = x.size();
  double mean = 0.0;
  for (const double v : y) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (const double v : y) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double scale = var > 0.0 ? std::sqrt(var) : 1.0;

  const auto kern = [&](const std::vector<double>& a, const std::vector<double>& b) {
    return signal_var * std::exp(-sq_dist(a, b) / (2.0 * lengthscale * lengthscale));
  };
  Matrix k(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) k[i][j] = kern(x[i], x[j]) + (i == j ? noise_var : 0.0);
  }
  const auto inv = inverse(k);
  std::vector<double> ks(n);
  for (std::size_t i = 0; i < n; ++i) ks[i] = kern(x[i], q);
  double m = 0.0, quad = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      m += ks[i] * inv[i][j] * (y[j] - mean) / scale;
      quad += ks[i] * inv[i][j] * ks[j];
    }
  }
  return {m * scale + mean, signal_var - quad};
}

/// Trust score by scanning every stored embedding.
inline double trust(const std::vector<std::pair<int, std::vector<double>>>& bank,
                    const std::vector<double>& h, int predicted) {
  double dp = std::numeric_limits<double>::infinity();
  double dc = std::numeric_limits<double>::infinity();
  bool any_p = false, any_c = false;
  for (const auto& [label, e] : bank) {
    const double d = std::sqrt(sq_dist(e, h));
    if (label == predicted) {
      any_p = true;
      if (d < dp) dp = d;
    } else {
      any_c = true;
      if (d < dc) dc = d;
    }
  }
  if (!any_c) return 1.0;
  if (!any_p) return 0.0;
  if (dp == 0.0 && dc == 0.0) return 0.5;
  return dc / (dp + dc);
}

struct Item {
  double confidence;
  int predicted;
  int gold;
};

struct Threshold {
  double tau;
  double coverage;
};

/// Tries every candidate threshold (each observed confidence and +inf)
/// and keeps the feasible one with the largest coverage, preferring the
/// larger threshold on equal coverage.
inline Threshold best_threshold(const std::vector<Item>& dev, double e) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> candidates{inf};
  for (const auto& it : dev) {
    if (!std::isnan(it.confidence) && std::isfinite(it.confidence)) candidates.push_back(it.confidence);
  }
  Threshold best{inf, 0.0};
  std::size_t best_count = 0;
  for (const double tau : candidates) {
    std::size_t count = 0;
    long long sq = 0;
    for (const auto& it : dev) {
      if (tau != inf && !std::isnan(it.confidence) && it.confidence >= tau) {
        ++count;
        const long long d = it.predicted - it.gold;
        sq += d * d;
      }
    }
    const double err = std::sqrt(static_cast<double>(sq) / static_cast<double>(dev.size()));
    if (err > e) continue;
    if (count > best_count || (count == best_count && tau > best.tau)) {
      best_count = count;
      best = {tau, static_cast<double>(count) / static_cast<double>(dev.size())};
    }
  }
  return best;
}

}  // namespace oracle
