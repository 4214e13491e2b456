#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace lemp {

enum class Split : uint8_t { Train = 0, Val = 1, Test = 2 };

Split split_from_string(const std::string& s);
const char* split_to_string(Split s);

/// Undirected simple graph with per-node labels and train/val/test tags.
/// Edges are stored once as (min, max); self-loops and duplicates are
/// dropped at construction. Immutable after build_graph.
struct Graph {
  int n = 0;
  int num_classes = 0;                        // K; labels live in {0..K-1}, -1 = absent
  std::vector<std::pair<int, int>> edges;     // u < v, sorted, unique
  std::vector<int> labels;                    // size n, -1 when absent
  std::vector<Split> splits;                  // size n
  std::vector<int> degree;                    // size n

  bool has_all_labels() const;
  const std::vector<int>& neighbors(int u) const { return adj_[u]; }
  bool has_edge(int u, int v) const;

  std::vector<std::vector<int>> adj_;         // neighbor lists, sorted
};

/// Builds a Graph from raw (possibly duplicated, possibly self-looped)
/// edges. (u,v) and (v,u) collapse to one undirected edge.
/// num_classes <= 0 infers K = max(label)+1.
Graph build_graph(const std::vector<std::pair<int, int>>& raw_edges, int n,
                  std::vector<int> labels = {}, std::vector<Split> splits = {},
                  int num_classes = -1);

/// Symmetric-normalized adjacency with self-loops,
/// entry(i,j) = 1/sqrt((deg_i+1)(deg_j+1)) for edges and the diagonal.
/// Compressed row storage; rows hold sorted column indices.
struct NormAdj {
  int n = 0;
  std::vector<int> row_ptr;   // size n+1
  std::vector<int> col_idx;
  std::vector<double> val;

  /// Stored entry or 0.0.
  double entry(int i, int j) const;
  size_t nnz() const { return val.size(); }
};

NormAdj norm_adjacency(const Graph& g);

/// Fraction of edges whose endpoints share a label. Vacuously 1.0 on an
/// edgeless graph.
double edge_homophily(const Graph& g);

/// Mean over nodes of the same-label-neighbor fraction. Degree-0 nodes are
/// excluded from the average; vacuously 1.0 if every node is isolated.
double node_homophily(const Graph& g);

}  // namespace lemp
