#include "lemp/mvrd.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <stdexcept>

#include "lemp/linalg.hpp"

namespace lemp {

namespace {

Tensor spmm_value(const NormAdj& adj, const Tensor& x) {
  if (adj.n != x.rows) throw std::invalid_argument("spmm_value: shape mismatch");
  Tensor out(x.rows, x.cols);
  for (int i = 0; i < adj.n; ++i) {
    double* dst = out.row(i);
    for (int p = adj.row_ptr[i]; p < adj.row_ptr[i + 1]; ++p) {
      const double w = adj.val[p];
      const double* src = x.row(adj.col_idx[p]);
      for (int c = 0; c < x.cols; ++c) dst[c] += w * src[c];
    }
  }
  return out;
}

Tensor sigmoid_all(Tensor t) {
  for (auto& v : t.v) v = sigmoid(v);
  return t;
}

}  // namespace

ClusterState semi_cluster(const Tensor& h, const std::vector<int>& labels,
                          int num_classes) {
  const int n = h.rows, d = h.cols;
  if (static_cast<int>(labels.size()) != n)
    throw std::invalid_argument("semi_cluster: labels size != rows");
  if (num_classes <= 0) throw std::invalid_argument("semi_cluster: need classes");

  ClusterState state;
  state.centers = Tensor(num_classes, d);
  std::vector<int> counts(num_classes, 0);
  std::vector<double> global_mean(d, 0.0);
  int labeled = 0;
  for (int i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0) continue;
    if (y >= num_classes) throw std::out_of_range("semi_cluster: label out of range");
    ++counts[y];
    ++labeled;
    for (int c = 0; c < d; ++c) {
      state.centers.at(y, c) += h.at(i, c);
      global_mean[c] += h.at(i, c);
    }
  }
  if (labeled == 0) throw std::invalid_argument("semi_cluster: no labeled nodes");
  for (double& m : global_mean) m /= labeled;
  for (int k = 0; k < num_classes; ++k) {
    if (counts[k] == 0) {
      state.seedless_classes.push_back(k);
      for (int c = 0; c < d; ++c) state.centers.at(k, c) = global_mean[c];
    } else {
      for (int c = 0; c < d; ++c) state.centers.at(k, c) /= counts[k];
    }
  }

  state.pseudo_labels.resize(n);
  for (int i = 0; i < n; ++i) {
    int best = 0;
    double best_d = l2_distance(h.row(i), state.centers.row(0), d);
    for (int k = 1; k < num_classes; ++k) {
      const double dist = l2_distance(h.row(i), state.centers.row(k), d);
      if (dist < best_d) {
        best_d = dist;
        best = k;
      }
    }
    state.pseudo_labels[i] = best;
  }

  // single refinement pass: recompute centers over all nodes
  Tensor refined(num_classes, d);
  std::vector<int> refined_counts(num_classes, 0);
  for (int i = 0; i < n; ++i) {
    const int k = state.pseudo_labels[i];
    ++refined_counts[k];
    for (int c = 0; c < d; ++c) refined.at(k, c) += h.at(i, c);
  }
  for (int k = 0; k < num_classes; ++k) {
    if (refined_counts[k] == 0) continue;  // keep the seed center
    for (int c = 0; c < d; ++c) state.centers.at(k, c) = refined.at(k, c) / refined_counts[k];
  }

  state.dist_to_center.resize(n);
  for (int i = 0; i < n; ++i)
    state.dist_to_center[i] =
        l2_distance(h.row(i), state.centers.row(state.pseudo_labels[i]), d);
  return state;
}

double rd_value(double pair_dist, double center_sum, double gamma) {
  return sigmoid(gamma * pair_dist) / sigmoid(center_sum);
}

EdgeDistances edge_distances(const Tensor& h, const ClusterState& cluster,
                             const std::vector<std::pair<int, int>>& edges) {
  EdgeDistances out;
  out.pair.reserve(edges.size());
  out.center_sum.reserve(edges.size());
  for (auto [u, v] : edges) {
    out.pair.push_back(l2_distance(h.row(u), h.row(v), h.cols));
    out.center_sum.push_back(cluster.dist_to_center[u] + cluster.dist_to_center[v]);
  }
  return out;
}

std::vector<double> reliable_difference(const Tensor& h, const ClusterState& cluster,
                                        const std::vector<std::pair<int, int>>& edges,
                                        double gamma, bool standardized) {
  if (gamma <= 0.0) throw std::invalid_argument("reliable_difference: gamma must be > 0");
  if (edges.empty()) throw std::invalid_argument("reliable_difference: empty edge list");
  EdgeDistances d = edge_distances(h, cluster, edges);
  if (standardized) {
    d.pair = standardize(d.pair);
    d.center_sum = standardize(d.center_sum);
  }
  std::vector<double> rd(edges.size());
  for (size_t e = 0; e < edges.size(); ++e)
    rd[e] = rd_value(d.pair[e], d.center_sum[e], gamma);
  return rd;
}

EmbeddingPair embedding_pair_wb(const Tensor& w0, const Tensor& b0,
                                const NormAdj& adj, const Tensor& x) {
  Tensor z = matmul_value(x, w0);
  for (int i = 0; i < z.rows; ++i)
    for (int c = 0; c < z.cols; ++c) z.at(i, c) += b0.v[c];
  EmbeddingPair out;
  out.before = sigmoid_all(z);
  out.after = sigmoid_all(spmm_value(adj, z));
  return out;
}

EmbeddingPair embedding_pair_wf(const Tensor& x_pca, const NormAdj& adj) {
  EmbeddingPair out;
  out.before = sigmoid_all(x_pca);
  out.after = sigmoid_all(spmm_value(adj, x_pca));
  return out;
}

std::vector<double> vrd(const std::vector<double>& rd_before,
                        const std::vector<double>& rd_after) {
  if (rd_before.size() != rd_after.size())
    throw std::invalid_argument("vrd: length mismatch");
  std::vector<double> out(rd_before.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = rd_before[i] - rd_after[i];
  return out;
}

std::vector<double> mvrd(const std::vector<double>& vrd_values,
                         const std::vector<double>& d_after_std, double eta,
                         const NormAdj& adj,
                         const std::vector<std::pair<int, int>>& edges) {
  if (eta <= 0.0) throw std::invalid_argument("mvrd: eta must be > 0");
  if (vrd_values.size() != d_after_std.size() || vrd_values.size() != edges.size())
    throw std::invalid_argument("mvrd: length mismatch");
  std::vector<double> out(vrd_values.size());
  for (size_t e = 0; e < out.size(); ++e)
    out[e] = sigmoid(eta * d_after_std[e]) * vrd_values[e] *
             adj.entry(edges[e].first, edges[e].second);
  return out;
}

double lambda_schedule(double n_e, double budget, double interval, double batch_k,
                       double omega, double phi, LambdaHorizon horizon) {
  if (n_e < 0.0) throw std::invalid_argument("lambda_schedule: n_e must be >= 0");
  const double horizon_epochs = horizon == LambdaHorizon::PaperLiteral
                                    ? batch_k * budget / interval
                                    : interval * budget / batch_k;
  if (!(horizon_epochs > 0.0))
    throw std::invalid_argument("lambda_schedule: horizon N_e is zero");
  const double lambda = omega * cos_pi(n_e / horizon_epochs) + phi;
  return std::clamp(lambda, 0.0, 1.0);
}

std::vector<double> fuse_scores(const std::vector<double>& wf,
                                const std::vector<double>& wb, double lambda) {
  if (wf.size() != wb.size()) throw std::invalid_argument("fuse_scores: length mismatch");
  if (lambda < 0.0 || lambda > 1.0)
    throw std::invalid_argument("fuse_scores: lambda must be in [0,1]");
  std::vector<double> out(wf.size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = lambda * wf[i] + (1.0 - lambda) * wb[i];
  return out;
}

std::vector<int> select_top_k(const std::vector<double>& scores,
                              const std::vector<std::pair<int, int>>& candidates,
                              int k) {
  if (scores.size() != candidates.size())
    throw std::invalid_argument("select_top_k: scores/candidates mismatch");
  if (k <= 0) return {};

  // "a ranks ahead of b": higher score, then lower (u, v)
  auto ahead = [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return candidates[a] < candidates[b];
  };
  // min-heap on rank: top() is the weakest of the kept k
  auto weaker = [&](int a, int b) { return ahead(a, b); };
  std::priority_queue<int, std::vector<int>, decltype(weaker)> heap(weaker);
  for (int i = 0; i < static_cast<int>(candidates.size()); ++i) {
    if (static_cast<int>(heap.size()) < k) {
      heap.push(i);
    } else if (ahead(i, heap.top())) {
      heap.pop();
      heap.push(i);
    }
  }
  std::vector<int> out(heap.size());
  for (size_t i = out.size(); i-- > 0;) {
    out[i] = heap.top();
    heap.pop();
  }
  return out;
}

MvrdScores mvrd_track(const EmbeddingPair& pair, const std::vector<int>& labels,
                      int num_classes, const std::vector<std::pair<int, int>>& edges,
                      const NormAdj& adj, double gamma, double eta,
                      bool standardized) {
  MvrdScores s;
  ClusterState before = semi_cluster(pair.before, labels, num_classes);
  ClusterState after = semi_cluster(pair.after, labels, num_classes);
  EdgeDistances db = edge_distances(pair.before, before, edges);
  EdgeDistances da = edge_distances(pair.after, after, edges);
  s.d_before_raw = db.pair;
  s.d_after_raw = da.pair;
  s.d_before_std = standardized ? standardize(db.pair) : db.pair;
  s.d_after_std = standardized ? standardize(da.pair) : da.pair;
  const auto sb = standardized ? standardize(db.center_sum) : db.center_sum;
  const auto sa = standardized ? standardize(da.center_sum) : da.center_sum;
  s.rd_before.resize(edges.size());
  s.rd_after.resize(edges.size());
  for (size_t e = 0; e < edges.size(); ++e) {
    s.rd_before[e] = rd_value(s.d_before_std[e], sb[e], gamma);
    s.rd_after[e] = rd_value(s.d_after_std[e], sa[e], gamma);
  }
  s.vrd = vrd(s.rd_before, s.rd_after);
  s.mvrd = mvrd(s.vrd, s.d_after_std, eta, adj, edges);
  return s;
}

}  // namespace lemp
