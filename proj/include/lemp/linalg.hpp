#pragma once

#include <string>
#include <vector>

#include "lemp/tensor.hpp"

namespace lemp {

Tensor matmul_value(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

double l2_distance(const double* a, const double* b, int d);

double sigmoid(double x);

/// cos(pi*x), exact at integer and half-integer x.
double cos_pi(double x);

/// Zero-mean unit-variance rescaling (population variance). Arrays with
/// variance below 1e-12 map to all zeros.
std::vector<double> standardize(const std::vector<double>& values);

struct PcaResult {
  Tensor transformed;                    // n × out_dim
  Tensor components;                     // d × out_dim, columns are PCs
  std::vector<double> eigenvalues;       // descending, length out_dim
  std::vector<double> mean;              // length d
  int null_components = 0;               // trailing numerically-null PCs
};

/// Mean-centered projection onto the top principal components of the d×d
/// covariance (symmetric Jacobi eigendecomposition). Components are ordered
/// by decreasing eigenvalue and signed so the largest-magnitude coordinate
/// of each is positive. out_dim beyond the numerical rank is permitted; a
/// warning is printed and null_components reports how many are degenerate.
PcaResult pca_fit(const Tensor& x, int out_dim);

Tensor pca_fit_transform(const Tensor& x, int out_dim);

/// Symmetric eigendecomposition by cyclic Jacobi rotations; eigenvalues
/// descending, eigenvectors as columns of V.
void jacobi_eigensymm(Tensor a, std::vector<double>& eigenvalues, Tensor& v);

void log_warn(const std::string& msg);

}  // namespace lemp
