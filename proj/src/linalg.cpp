#include "lemp/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace lemp {

void log_warn(const std::string& msg) { std::fprintf(stderr, "[lemp] warning: %s\n", msg.c_str()); }

Tensor matmul_value(const Tensor& a, const Tensor& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul_value: inner dimensions disagree");
  Tensor c(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    double* crow = c.row(i);
    for (int l = 0; l < a.cols; ++l) {
      const double x = a.at(i, l);
      if (x == 0.0) continue;
      const double* brow = b.row(l);
      for (int j = 0; j < b.cols; ++j) crow[j] += x * brow[j];
    }
  }
  return c;
}

Tensor transpose(const Tensor& a) {
  Tensor t(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

double l2_distance(const double* a, const double* b, int d) {
  double s = 0.0;
  for (int i = 0; i < d; ++i) {
    const double diff = a[i] - b[i];
    s += diff * diff;
  }
  return std::sqrt(s);
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double cos_pi(double x) {
  double r = std::fmod(x, 2.0);
  if (r < 0.0) r += 2.0;
  if (r == 0.0) return 1.0;
  if (r == 1.0) return -1.0;
  if (r == 0.5 || r == 1.5) return 0.0;
  return std::cos(M_PI * r);
}

std::vector<double> standardize(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("standardize: empty input");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= n;
  std::vector<double> out(values.size(), 0.0);
  if (var < 1e-12) return out;
  const double inv_sd = 1.0 / std::sqrt(var);
  for (size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - mean) * inv_sd;
  return out;
}

void jacobi_eigensymm(Tensor a, std::vector<double>& eigenvalues, Tensor& v) {
  const int d = a.rows;
  if (a.cols != d) throw std::invalid_argument("jacobi_eigensymm: matrix must be square");
  v = Tensor(d, d);
  for (int i = 0; i < d; ++i) v.at(i, i) = 1.0;

  auto offdiag = [&]() {
    double s = 0.0;
    for (int i = 0; i < d; ++i)
      for (int j = i + 1; j < d; ++j) s += a.at(i, j) * a.at(i, j);
    return s;
  };
  double norm = 0.0;
  for (double x : a.v) norm += x * x;
  const double tol = std::max(1e-300, norm * 1e-28);

  for (int sweep = 0; sweep < 100 && offdiag() > tol; ++sweep) {
    for (int p = 0; p < d - 1; ++p) {
      for (int q = p + 1; q < d; ++q) {
        const double apq = a.at(p, q);
        if (apq == 0.0) continue;
        const double app = a.at(p, p);
        const double aqq = a.at(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < d; ++k) {
          const double akp = a.at(k, p);
          const double akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < d; ++k) {
          const double apk = a.at(p, k);
          const double aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < d; ++k) {
          const double vkp = v.at(k, p);
          const double vkq = v.at(k, q);
          v.at(k, p) = c * vkp - s * vkq;
          v.at(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<int> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int i, int j) { return a.at(i, i) > a.at(j, j); });
  eigenvalues.resize(d);
  Tensor sorted(d, d);
  for (int j = 0; j < d; ++j) {
    eigenvalues[j] = a.at(order[j], order[j]);
    for (int i = 0; i < d; ++i) sorted.at(i, j) = v.at(i, order[j]);
  }
  v = std::move(sorted);
}

PcaResult pca_fit(const Tensor& x, int out_dim) {
  const int n = x.rows;
  const int d = x.cols;
  if (n == 0 || d == 0) throw std::invalid_argument("pca_fit: empty matrix");
  if (out_dim <= 0 || out_dim > std::min(n, d))
    throw std::invalid_argument("pca_fit: out_dim must be in [1, min(n, d)]");

  PcaResult res;
  res.mean.assign(d, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) res.mean[j] += x.at(i, j);
  for (double& m : res.mean) m /= n;

  Tensor centered(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) centered.at(i, j) = x.at(i, j) - res.mean[j];

  Tensor cov(d, d);
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < d; ++a) {
      const double ca = centered.at(i, a);
      if (ca == 0.0) continue;
      for (int b = 0; b < d; ++b) cov.at(a, b) += ca * centered.at(i, b) / denom;
    }

  std::vector<double> eig;
  Tensor v;
  jacobi_eigensymm(cov, eig, v);

  res.components = Tensor(d, out_dim);
  res.eigenvalues.assign(eig.begin(), eig.begin() + out_dim);
  const double max_eig = eig.empty() ? 0.0 : std::max(eig[0], 0.0);
  for (int j = 0; j < out_dim; ++j) {
    int arg = 0;
    double best = 0.0;
    for (int i = 0; i < d; ++i) {
      if (std::abs(v.at(i, j)) > best) {
        best = std::abs(v.at(i, j));
        arg = i;
      }
    }
    const double sign = v.at(arg, j) >= 0.0 ? 1.0 : -1.0;
    for (int i = 0; i < d; ++i) res.components.at(i, j) = sign * v.at(i, j);
    if (eig[j] <= max_eig * 1e-12) ++res.null_components;
  }
  if (res.null_components > 0)
    log_warn("pca_fit: " + std::to_string(res.null_components) +
             " requested component(s) beyond the numerical rank");

  res.transformed = matmul_value(centered, res.components);
  return res;
}

Tensor pca_fit_transform(const Tensor& x, int out_dim) {
  return pca_fit(x, out_dim).transformed;
}

}  // namespace lemp
