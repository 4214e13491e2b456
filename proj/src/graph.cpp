#include "lemp/graph.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace lemp {

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val" || s == "valid" || s == "validation") return Split::Val;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split tag: '" + s + "'");
}

const char* split_to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    default: return "test";
  }
}

bool Graph::has_all_labels() const {
  for (int l : labels)
    if (l < 0) return false;
  return n > 0;
}

bool Graph::has_edge(int u, int v) const {
  if (u < 0 || v < 0 || u >= n || v >= n || u == v) return false;
  const auto& nb = adj_[u];
  return std::binary_search(nb.begin(), nb.end(), v);
}

Graph build_graph(const std::vector<std::pair<int, int>>& raw_edges, int n,
                  std::vector<int> labels, std::vector<Split> splits,
                  int num_classes) {
  if (n < 0) throw std::invalid_argument("build_graph: negative node count");
  Graph g;
  g.n = n;

  std::set<std::pair<int, int>> dedup;
  for (auto [u, v] : raw_edges) {
    if (u < 0 || u >= n || v < 0 || v >= n)
      throw std::out_of_range("build_graph: edge endpoint " +
                              std::to_string(u >= n || u < 0 ? u : v) +
                              " outside [0, " + std::to_string(n) + ")");
    if (u == v) continue;  // self-loops dropped
    dedup.emplace(std::min(u, v), std::max(u, v));
  }
  g.edges.assign(dedup.begin(), dedup.end());

  if (labels.empty()) labels.assign(n, -1);
  if (static_cast<int>(labels.size()) != n)
    throw std::invalid_argument("build_graph: labels size != n");
  int max_label = -1;
  for (int l : labels) {
    if (l < -1) throw std::out_of_range("build_graph: label " + std::to_string(l) + " < 0");
    max_label = std::max(max_label, l);
  }
  if (num_classes <= 0) num_classes = max_label + 1;
  if (max_label >= num_classes)
    throw std::out_of_range("build_graph: label " + std::to_string(max_label) +
                            " >= num_classes " + std::to_string(num_classes));
  g.labels = std::move(labels);
  g.num_classes = num_classes;

  if (splits.empty()) splits.assign(n, Split::Train);
  if (static_cast<int>(splits.size()) != n)
    throw std::invalid_argument("build_graph: splits size != n");
  g.splits = std::move(splits);

  g.degree.assign(n, 0);
  g.adj_.assign(n, {});
  for (auto [u, v] : g.edges) {
    g.degree[u]++;
    g.degree[v]++;
    g.adj_[u].push_back(v);
    g.adj_[v].push_back(u);
  }
  for (auto& nb : g.adj_) std::sort(nb.begin(), nb.end());
  return g;
}

NormAdj norm_adjacency(const Graph& g) {
  NormAdj a;
  a.n = g.n;
  a.row_ptr.assign(g.n + 1, 0);
  for (int i = 0; i < g.n; ++i)
    a.row_ptr[i + 1] = a.row_ptr[i] + static_cast<int>(g.neighbors(i).size()) + 1;
  a.col_idx.resize(a.row_ptr[g.n]);
  a.val.resize(a.row_ptr[g.n]);

  auto weight = [&](int i, int j) {
    return 1.0 / std::sqrt((g.degree[i] + 1.0) * (g.degree[j] + 1.0));
  };
  for (int i = 0; i < g.n; ++i) {
    int p = a.row_ptr[i];
    bool self_done = false;
    for (int j : g.neighbors(i)) {
      if (!self_done && j > i) {
        a.col_idx[p] = i;
        a.val[p] = weight(i, i);
        ++p;
        self_done = true;
      }
      a.col_idx[p] = j;
      a.val[p] = weight(i, j);
      ++p;
    }
    if (!self_done) {
      a.col_idx[p] = i;
      a.val[p] = weight(i, i);
      ++p;
    }
  }
  return a;
}

double NormAdj::entry(int i, int j) const {
  if (i < 0 || j < 0 || i >= n || j >= n) return 0.0;
  auto first = col_idx.begin() + row_ptr[i];
  auto last = col_idx.begin() + row_ptr[i + 1];
  auto it = std::lower_bound(first, last, j);
  if (it == last || *it != j) return 0.0;
  return val[it - col_idx.begin()];
}

double edge_homophily(const Graph& g) {
  if (!g.has_all_labels()) throw std::invalid_argument("edge_homophily: missing labels");
  if (g.edges.empty()) return 1.0;
  size_t same = 0;
  for (auto [u, v] : g.edges)
    if (g.labels[u] == g.labels[v]) ++same;
  return static_cast<double>(same) / static_cast<double>(g.edges.size());
}

double node_homophily(const Graph& g) {
  if (!g.has_all_labels()) throw std::invalid_argument("node_homophily: missing labels");
  double sum = 0.0;
  int counted = 0;
  for (int i = 0; i < g.n; ++i) {
    if (g.degree[i] == 0) continue;  // Eq. with d_i = 0 is undefined; excluded
    int same = 0;
    for (int j : g.neighbors(i))
      if (g.labels[j] == g.labels[i]) ++same;
    sum += static_cast<double>(same) / static_cast<double>(g.degree[i]);
    ++counted;
  }
  if (counted == 0) return 1.0;
  return sum / counted;
}

}  // namespace lemp
