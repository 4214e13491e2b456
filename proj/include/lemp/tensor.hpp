#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <vector>

namespace lemp {

/// Dense row-major 2-D array of doubles. Vectors are 1×n or n×1 tensors.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int r, int c, double fill = 0.0)
      : rows(r), cols(c), v(static_cast<size_t>(r) * static_cast<size_t>(c), fill) {
    if (r < 0 || c < 0) throw std::invalid_argument("Tensor: negative shape");
  }

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> data) {
    Tensor t(static_cast<int>(data.size()),
             data.size() ? static_cast<int>(data.begin()->size()) : 0);
    int r = 0;
    for (const auto& row : data) {
      if (static_cast<int>(row.size()) != t.cols)
        throw std::invalid_argument("Tensor::from_rows: ragged rows");
      int c = 0;
      for (double x : row) t.at(r, c++) = x;
      ++r;
    }
    return t;
  }

  static Tensor row_vector(const std::vector<double>& data) {
    Tensor t(1, static_cast<int>(data.size()));
    t.v = data;
    return t;
  }

  double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }

  const double* row(int r) const { return v.data() + static_cast<size_t>(r) * cols; }
  double* row(int r) { return v.data() + static_cast<size_t>(r) * cols; }

  size_t size() const { return v.size(); }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
  void fill(double x) { std::fill(v.begin(), v.end(), x); }
};

// --- deterministic RNG streams -------------------------------------------
//
// Every stochastic component draws from its own stream so that adding a
// consumer to one stream (e.g. extra parameter init) cannot shift the draws
// of another (e.g. dropout masks).

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

namespace streams {
constexpr uint64_t kInit = 0x01;
constexpr uint64_t kDropout = 0x02;
constexpr uint64_t kSynthData = 0x03;
constexpr uint64_t kOracle = 0x04;
}  // namespace streams

inline std::mt19937_64 make_rng(uint64_t seed, uint64_t stream, uint64_t salt = 0) {
  return std::mt19937_64(splitmix64(splitmix64(seed ^ (stream * 0xd6e8feb86659fd93ULL)) ^ salt));
}

}  // namespace lemp
