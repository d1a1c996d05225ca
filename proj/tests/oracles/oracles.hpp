#pragma once

// Test-only reference implementations. Plain loops over std::vector, kept
// independent of the Eigen code paths they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <utility>
#include <vector>

#include "coder/coder.hpp"

namespace oracle {

using Table = std::vector<std::vector<double>>;

inline Table to_table(const xcod::Matrix& m) {
  Table t(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) t[r][c] = m(r, c);
  return t;
}

inline std::vector<double> to_list(const xcod::Vector& v) { return {v.data(), v.data() + v.size()}; }

// Sum over sides of ||a' - a||^2 plus lambda * sum_k f_k sum_i ||W_dec,k^i||_2,
// averaged over rows, with f = ReLU(sum_i W_enc^i a^i + b_enc).
inline double crosscoder_loss(const xcod::coder::CrosscoderParams& p, const xcod::coder::Batch& b, double lambda) {
  const std::size_t n_sides = static_cast<std::size_t>(p.n_sides());
  const std::size_t F = static_cast<std::size_t>(p.n_features());
  std::vector<Table> enc, dec, x;
  std::vector<std::vector<double>> bdec;
  for (std::size_t i = 0; i < n_sides; ++i) {
    enc.push_back(to_table(p.encoder[i]));
    dec.push_back(to_table(p.decoder[i]));
    bdec.push_back(to_list(p.decoder_bias[i]));
    x.push_back(to_table(b.sides[i]));
  }
  const auto benc = to_list(p.encoder_bias);
  std::vector<double> norm_sum(F, 0.0);
  for (std::size_t k = 0; k < F; ++k)
    for (std::size_t i = 0; i < n_sides; ++i) {
      double s = 0.0;
      for (double w : dec[i][k]) s += w * w;
      norm_sum[k] += std::sqrt(s);
    }
  const std::size_t rows = x[0].size();
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> f(F);
    for (std::size_t k = 0; k < F; ++k) {
      double z = benc[k];
      for (std::size_t i = 0; i < n_sides; ++i)
        for (std::size_t j = 0; j < x[i][r].size(); ++j) z += enc[i][k][j] * x[i][r][j];
      f[k] = z > 0.0 ? z : 0.0;
    }
    for (std::size_t i = 0; i < n_sides; ++i)
      for (std::size_t j = 0; j < x[i][r].size(); ++j) {
        double recon = bdec[i][j];
        for (std::size_t k = 0; k < F; ++k) recon += f[k] * dec[i][k][j];
        const double e = recon - x[i][r][j];
        total += e * e;
      }
    for (std::size_t k = 0; k < F; ++k) total += lambda * f[k] * norm_sum[k];
  }
  return total / static_cast<double>(rows);
}

// Central differences of fn over every parameter, in for_each_block order.
inline std::vector<double> finite_difference(xcod::coder::CrosscoderParams p,
                                             const std::function<double(const xcod::coder::CrosscoderParams&)>& fn,
                                             double h) {
  std::vector<double*> slots;
  p.for_each_block([&](double* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) slots.push_back(data + i);
  });
  std::vector<double> out;
  for (double* s : slots) {
    const double keep = *s;
    *s = keep + h;
    const double up = fn(p);
    *s = keep - h;
    const double down = fn(p);
    *s = keep;
    out.push_back((up - down) / (2.0 * h));
  }
  return out;
}

inline std::vector<double> flatten(xcod::coder::CrosscoderParams p) {
  std::vector<double> out;
  p.for_each_block([&](double* data, std::size_t n) { out.insert(out.end(), data, data + n); });
  return out;
}

// Cyclic Jacobi rotations on a symmetric matrix; eigenvalues descending.
inline std::vector<double> jacobi_eigenvalues(Table a, int sweeps = 100) {
  const std::size_t n = a.size();
  for (int s = 0; s < sweeps; ++s) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a[i][j] * a[i][j];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - sn * akq;
          a[k][q] = sn * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - sn * aqk;
          a[q][k] = sn * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a[i][i];
  std::sort(ev.rbegin(), ev.rend());
  return ev;
}

// Sample covariance (N - 1 divisor) by explicit loops.
inline Table covariance(const Table& x) {
  const std::size_t n = x.size(), d = x[0].size();
  std::vector<double> mean(d, 0.0);
  for (const auto& row : x)
    for (std::size_t j = 0; j < d; ++j) mean[j] += row[j] / static_cast<double>(n);
  Table c(d, std::vector<double>(d, 0.0));
  for (const auto& row : x)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) c[i][j] += (row[i] - mean[i]) * (row[j] - mean[j]) / static_cast<double>(n - 1);
  return c;
}

// Fraction of losses <= t via rank in a sorted copy.
inline double cumulative_fraction(std::vector<double> losses, double t) {
  std::sort(losses.begin(), losses.end());
  std::size_t rank = 0;
  while (rank < losses.size() && losses[rank] <= t) ++rank;
  return static_cast<double>(rank) / static_cast<double>(losses.size());
}

inline xcod::Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  xcod::Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

inline xcod::coder::CrosscoderParams random_params(const xcod::coder::CoderShape& shape, std::mt19937_64& rng,
                                                   double scale = 0.5) {
  auto p = xcod::coder::CrosscoderParams::zeros(shape);
  std::normal_distribution<double> n(0.0, scale);
  p.for_each_block([&](double* d, std::size_t len) {
    for (std::size_t i = 0; i < len; ++i) d[i] = n(rng);
  });
  return p;
}

inline xcod::coder::Batch random_batch(const xcod::coder::CoderShape& shape, Eigen::Index rows, std::mt19937_64& rng) {
  xcod::coder::Batch b;
  for (const auto d : shape.dims) b.sides.push_back(random_matrix(rows, d, rng));
  return b;
}

}  // namespace oracle
