#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>

#include "lemp/graph.hpp"
#include <Eigen/Dense>

#include "oracles.hpp"

using namespace lemp;

namespace {

Graph random_labeled_graph(int n, double p, int classes, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> lab(0, classes - 1);
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (u(rng) < p) edges.emplace_back(i, j);
  std::vector<int> labels(n);
  for (auto& l : labels) l = lab(rng);
  return build_graph(edges, n, labels);
}

}  // namespace

TEST_CASE("build_graph drops self-loops and duplicate orientations") {
  Graph g = build_graph({{0, 1}, {1, 0}, {2, 2}}, 3);
  CHECK(g.edges.size() == 1);
  CHECK(g.edges[0] == std::pair<int, int>(0, 1));
  CHECK(g.degree == std::vector<int>{1, 1, 0});
}

TEST_CASE("build_graph with no edges") {
  Graph g = build_graph({}, 5);
  CHECK(g.edges.empty());
  CHECK(g.degree == std::vector<int>(5, 0));
}

TEST_CASE("build_graph matches set-based dedup oracle on a random multigraph") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> node(0, 99);
  std::vector<std::pair<int, int>> raw;
  for (int i = 0; i < 4000; ++i) raw.emplace_back(node(rng), node(rng));
  Graph g = build_graph(raw, 100);
  auto expect = oracle::dedup_edges(raw);
  REQUIRE(g.edges.size() == expect.size());
  CHECK(std::equal(g.edges.begin(), g.edges.end(), expect.begin()));
  for (int i = 0; i < 100; ++i) {
    int deg = 0;
    for (auto [u, v] : expect)
      if (u == i || v == i) ++deg;
    CHECK(g.degree[i] == deg);
  }
}

TEST_CASE("build_graph rejects bad input") {
  CHECK_THROWS_AS(build_graph({{0, 5}}, 3), std::out_of_range);
  CHECK_THROWS_AS(build_graph({{-1, 0}}, 3), std::out_of_range);
  CHECK_THROWS_AS(build_graph({}, 2, {0, 3}, {}, 2), std::out_of_range);
  CHECK_THROWS_AS(build_graph({}, 2, {0}), std::invalid_argument);
}

TEST_CASE("norm_adjacency on a single edge gives four 0.5 entries") {
  Graph g = build_graph({{0, 1}}, 2);
  NormAdj a = norm_adjacency(g);
  CHECK(a.entry(0, 0) == 0.5);
  CHECK(a.entry(0, 1) == 0.5);
  CHECK(a.entry(1, 0) == 0.5);
  CHECK(a.entry(1, 1) == 0.5);
  CHECK(a.nnz() == 4);
}

TEST_CASE("norm_adjacency isolated node keeps only a unit diagonal") {
  Graph g = build_graph({{0, 1}}, 3);
  NormAdj a = norm_adjacency(g);
  CHECK(a.entry(2, 2) == 1.0);
  CHECK(a.entry(2, 0) == 0.0);
  CHECK(a.entry(2, 1) == 0.0);
}

TEST_CASE("norm_adjacency matches the dense oracle on a random 20-node graph") {
  Graph g = random_labeled_graph(20, 0.2, 3, 11);
  NormAdj a = norm_adjacency(g);
  Tensor dense = oracle::dense_norm_adjacency(g);
  for (int i = 0; i < g.n; ++i)
    for (int j = 0; j < g.n; ++j)
      CHECK(std::abs(a.entry(i, j) - dense.at(i, j)) <= 1e-12);
}

TEST_CASE("norm_adjacency symmetry and formula hold exactly for stored pairs") {
  for (uint64_t seed : {1, 2, 3}) {
    Graph g = random_labeled_graph(30, 0.15, 2, seed);
    NormAdj a = norm_adjacency(g);
    for (int i = 0; i < g.n; ++i) {
      bool diag_seen = false;
      for (int p = a.row_ptr[i]; p < a.row_ptr[i + 1]; ++p) {
        const int j = a.col_idx[p];
        CHECK(a.val[p] == a.entry(j, i));
        CHECK(a.val[p] ==
              1.0 / std::sqrt((g.degree[i] + 1.0) * (g.degree[j] + 1.0)));
        if (j == i) {
          diag_seen = true;
          CHECK(a.val[p] > 0.0);
        }
      }
      CHECK(diag_seen);
    }
  }
}

TEST_CASE("norm_adjacency rows are positive and the spectrum stays in [-1, 1]") {
  for (uint64_t seed : {4, 5, 6, 7}) {
    Graph g = random_labeled_graph(40, 0.1, 2, seed);
    NormAdj a = norm_adjacency(g);
    for (int i = 0; i < g.n; ++i) {
      double s = 0.0;
      for (int p = a.row_ptr[i]; p < a.row_ptr[i + 1]; ++p) s += a.val[p];
      CHECK(s > 0.0);
    }
    Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(g.n, g.n);
    for (int i = 0; i < g.n; ++i)
      for (int p = a.row_ptr[i]; p < a.row_ptr[i + 1]; ++p)
        dense(i, a.col_idx[p]) = a.val[p];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(dense);
    CHECK(eig.eigenvalues().maxCoeff() <= 1.0 + 1e-12);
    CHECK(eig.eigenvalues().minCoeff() >= -1.0 - 1e-12);
  }
}

TEST_CASE("edge homophily on small fixtures") {
  Graph tri = build_graph({{0, 1}, {1, 2}, {0, 2}}, 3, {0, 0, 0});
  CHECK(edge_homophily(tri) == 1.0);

  Graph path = build_graph({{0, 1}, {1, 2}}, 3, {0, 1, 0});
  CHECK(edge_homophily(path) == 0.0);

  Graph cycle = build_graph({{0, 1}, {1, 2}, {2, 3}, {3, 0}}, 4, {0, 0, 1, 1});
  CHECK(edge_homophily(cycle) == 0.5);
}

TEST_CASE("node homophily on small fixtures") {
  Graph tri = build_graph({{0, 1}, {1, 2}, {0, 2}}, 3, {0, 0, 0});
  CHECK(node_homophily(tri) == 1.0);

  Graph star = build_graph({{0, 1}, {0, 2}, {0, 3}}, 4, {0, 1, 1, 1});
  CHECK(node_homophily(star) == 0.0);
}

TEST_CASE("node homophily matches the double-loop oracle on a random graph") {
  Graph g = random_labeled_graph(50, 0.08, 4, 23);
  CHECK(std::abs(node_homophily(g) - oracle::node_homophily_loops(g)) <= 1e-12);
}

TEST_CASE("homophily metrics are invariant under class relabeling") {
  Graph g = random_labeled_graph(40, 0.1, 3, 31);
  const double he = edge_homophily(g);
  const double hn = node_homophily(g);
  // permutation 0->2, 1->0, 2->1
  std::vector<int> permuted = g.labels;
  for (auto& l : permuted) l = (l + 2) % 3;
  Graph p = build_graph(g.edges, g.n, permuted);
  CHECK(edge_homophily(p) == he);
  CHECK(node_homophily(p) == hn);
}

TEST_CASE("homophily bounds and the all-same-label case") {
  for (uint64_t seed : {41, 42, 43}) {
    Graph g = random_labeled_graph(30, 0.12, 5, seed);
    const double he = edge_homophily(g);
    const double hn = node_homophily(g);
    CHECK(he >= 0.0);
    CHECK(he <= 1.0);
    CHECK(hn >= 0.0);
    CHECK(hn <= 1.0);

    Graph same = build_graph(g.edges, g.n, std::vector<int>(g.n, 0));
    CHECK(edge_homophily(same) == 1.0);
    CHECK(node_homophily(same) == 1.0);
  }
}

TEST_CASE("homophily requires labels") {
  Graph g = build_graph({{0, 1}}, 2);
  CHECK_THROWS_AS(edge_homophily(g), std::invalid_argument);
  CHECK_THROWS_AS(node_homophily(g), std::invalid_argument);
}
