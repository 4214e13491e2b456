#pragma once

#include <utility>
#include <vector>

#include "lemp/graph.hpp"
#include "lemp/tensor.hpp"

namespace lemp {

/// Semi-supervised clustering outcome: per-class centers, nearest-center
/// pseudo-labels, and each node's distance to its own (final) center.
struct ClusterState {
  Tensor centers;                       // K × d
  std::vector<int> pseudo_labels;       // size n
  std::vector<double> dist_to_center;   // size n
  std::vector<int> seedless_classes;    // classes with no labeled node
};

/// Centers seeded from labeled nodes (label -1 = unlabeled), pseudo-labels
/// assigned by nearest center (ties toward the lowest class), then exactly
/// one center recompute over all nodes. A class with no labeled seed starts
/// at the global labeled mean and is reported in seedless_classes.
ClusterState semi_cluster(const Tensor& h, const std::vector<int>& labels,
                          int num_classes);

/// sigmoid(gamma*d_pair) / sigmoid(d_center_sum) on raw operands.
double rd_value(double pair_dist, double center_sum, double gamma);

/// Per-edge distances feeding the reliable-difference ratio.
struct EdgeDistances {
  std::vector<double> pair;        // ‖h_u - h_v‖ per edge
  std::vector<double> center_sum;  // d_u + d_v per edge
};

EdgeDistances edge_distances(const Tensor& h, const ClusterState& cluster,
                             const std::vector<std::pair<int, int>>& edges);

/// RD per edge. With `standardized` both distance arrays are z-scored
/// across the edge list before entering the sigmoids (gamma applies to the
/// standardized pair distance); the raw path exists for closed-form tests.
std::vector<double> reliable_difference(const Tensor& h, const ClusterState& cluster,
                                        const std::vector<std::pair<int, int>>& edges,
                                        double gamma, bool standardized = true);

struct EmbeddingPair {
  Tensor before;  // pre-aggregation embedding
  Tensor after;   // post-aggregation embedding
};

/// Weight-based probe through the live model's first layer:
/// before = sigmoid(XW0 + b0), after = sigmoid(Â (XW0 + b0)).
/// Dropout is off and no messages are involved: this measures what plain
/// aggregation does to the current representation.
EmbeddingPair embedding_pair_wb(const Tensor& w0, const Tensor& b0,
                                const NormAdj& adj, const Tensor& x);

/// Weight-free probe: before = sigmoid(X_pca), after = sigmoid(Â X_pca).
EmbeddingPair embedding_pair_wf(const Tensor& x_pca, const NormAdj& adj);

std::vector<double> vrd(const std::vector<double>& rd_before,
                        const std::vector<double>& rd_after);

/// MVRD_uv = sigmoid(eta * d_after_std) * VRD_uv * Â_uv.
std::vector<double> mvrd(const std::vector<double>& vrd_values,
                         const std::vector<double>& d_after_std, double eta,
                         const NormAdj& adj,
                         const std::vector<std::pair<int, int>>& edges);

enum class LambdaHorizon {
  PaperLiteral,  // N_e = k * budget / interval
  Rounds         // N_e = interval * budget / k
};

/// lambda = omega * cos(pi * n_e / N_e) + phi, clamped to [0, 1].
double lambda_schedule(double n_e, double budget, double interval, double batch_k,
                       double omega, double phi,
                       LambdaHorizon horizon = LambdaHorizon::PaperLiteral);

std::vector<double> fuse_scores(const std::vector<double>& wf,
                                const std::vector<double>& wb, double lambda);

/// Indices of the min(k, |candidates|) best-scored candidates via a bounded
/// heap; ordering and ties are deterministic: score desc, then u asc, v asc.
std::vector<int> select_top_k(const std::vector<double>& scores,
                              const std::vector<std::pair<int, int>>& candidates,
                              int k);

/// Everything one track produces for an edge list, kept for reporting.
struct MvrdScores {
  std::vector<double> d_before_raw, d_after_raw;
  std::vector<double> d_before_std, d_after_std;
  std::vector<double> rd_before, rd_after;
  std::vector<double> vrd, mvrd;
};

MvrdScores mvrd_track(const EmbeddingPair& pair, const std::vector<int>& labels,
                      int num_classes, const std::vector<std::pair<int, int>>& edges,
                      const NormAdj& adj, double gamma, double eta,
                      bool standardized = true);

}  // namespace lemp
