#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "lemp/linalg.hpp"
#include "lemp/mvrd.hpp"
#include "oracles.hpp"

using namespace lemp;

namespace {

Tensor random_tensor(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(r, c);
  for (auto& v : t.v) v = n(rng);
  return t;
}

Graph random_graph(int n, double p, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (u(rng) < p) edges.emplace_back(i, j);
  return build_graph(edges, n);
}

}  // namespace

TEST_CASE("semi_cluster on the two-seed fixture") {
  Tensor h = Tensor::from_rows({{0.0, 0.0}, {10.0, 10.0}, {1.0, 1.0}});
  ClusterState s = semi_cluster(h, {0, 1, -1}, 2);
  CHECK(s.pseudo_labels == std::vector<int>{0, 1, 0});
  CHECK(s.centers.at(0, 0) == 0.5);
  CHECK(s.centers.at(0, 1) == 0.5);
  CHECK(s.centers.at(1, 0) == 10.0);
  CHECK(s.centers.at(1, 1) == 10.0);
  CHECK(s.seedless_classes.empty());
  CHECK(s.dist_to_center[1] == 0.0);
}

TEST_CASE("semi_cluster pseudo-labels may flip fully labeled nodes") {
  // class-0 seeds straddle the class-1 seed, so the nearest-center rule
  // reassigns the node at 0
  Tensor h = Tensor::from_rows({{0.0}, {10.0}, {4.0}});
  ClusterState s = semi_cluster(h, {0, 0, 1}, 2);
  CHECK(s.pseudo_labels == std::vector<int>{1, 0, 1});
  CHECK(s.centers.at(0, 0) == 10.0);
  CHECK(s.centers.at(1, 0) == 2.0);
}

TEST_CASE("semi_cluster matches brute-force loops on random data") {
  std::mt19937_64 rng(5);
  const int n = 40, d = 4, k = 4;
  Tensor h = random_tensor(n, d, rng);
  std::vector<int> labels(n, -1);
  std::uniform_int_distribution<int> lab(0, k - 1);
  for (int i = 0; i < n; i += 2) labels[i] = lab(rng);

  ClusterState mine = semi_cluster(h, labels, k);

  // independent recomputation
  Tensor centers(k, d);
  std::vector<int> counts(k, 0);
  std::vector<double> mean(d, 0.0);
  int labeled = 0;
  for (int i = 0; i < n; ++i) {
    if (labels[i] < 0) continue;
    ++counts[labels[i]];
    ++labeled;
    for (int c = 0; c < d; ++c) {
      centers.at(labels[i], c) += h.at(i, c);
      mean[c] += h.at(i, c);
    }
  }
  for (int c = 0; c < d; ++c) mean[c] /= labeled;
  for (int j = 0; j < k; ++j)
    for (int c = 0; c < d; ++c)
      centers.at(j, c) = counts[j] ? centers.at(j, c) / counts[j] : mean[c];
  std::vector<int> pl(n);
  for (int i = 0; i < n; ++i) {
    int best = 0;
    double bd = 1e300;
    for (int j = 0; j < k; ++j) {
      double dist = 0.0;
      for (int c = 0; c < d; ++c)
        dist += (h.at(i, c) - centers.at(j, c)) * (h.at(i, c) - centers.at(j, c));
      if (dist < bd) {
        bd = dist;
        best = j;
      }
    }
    pl[i] = best;
  }
  Tensor refined(k, d);
  std::vector<int> rc(k, 0);
  for (int i = 0; i < n; ++i) {
    ++rc[pl[i]];
    for (int c = 0; c < d; ++c) refined.at(pl[i], c) += h.at(i, c);
  }
  for (int j = 0; j < k; ++j)
    if (rc[j])
      for (int c = 0; c < d; ++c) refined.at(j, c) /= rc[j];
    else
      for (int c = 0; c < d; ++c) refined.at(j, c) = centers.at(j, c);

  CHECK(mine.pseudo_labels == pl);
  for (int j = 0; j < k; ++j)
    for (int c = 0; c < d; ++c) CHECK(mine.centers.at(j, c) == refined.at(j, c));
}

TEST_CASE("semi_cluster seeds an unlabeled class at the global labeled mean") {
  Tensor h = Tensor::from_rows({{0.0, 0.0}, {2.0, 2.0}, {5.0, 5.0}});
  ClusterState s = semi_cluster(h, {0, 0, -1}, 3);
  CHECK(s.seedless_classes == std::vector<int>{1, 2});
  CHECK_THROWS_AS(semi_cluster(h, {-1, -1, -1}, 2), std::invalid_argument);
}

TEST_CASE("reliable difference degenerates to 1.0 on a single edge") {
  Tensor h = Tensor::from_rows({{0.0, 0.0}, {3.0, 4.0}});
  ClusterState cluster;
  cluster.centers = Tensor(1, 2);
  cluster.pseudo_labels = {0, 0};
  cluster.dist_to_center = {1.0, 2.5};
  auto rd = reliable_difference(h, cluster, {{0, 1}}, 1.0, true);
  REQUIRE(rd.size() == 1);
  CHECK(rd[0] == 1.0);  // standardization zeroes both arrays
}

TEST_CASE("reliable difference reproduces the sigmoid ratio on the raw path") {
  Tensor h = Tensor::from_rows({{0.0}, {1.0}, {5.0}});
  ClusterState cluster;
  cluster.centers = Tensor(1, 1);
  cluster.pseudo_labels = {0, 0, 0};
  cluster.dist_to_center = {0.0, 0.0, 0.0};
  auto rd = reliable_difference(h, cluster, {{0, 1}}, 1.0, false);
  CHECK(std::abs(rd[0] - 1.46212) <= 1e-5);
  CHECK_THROWS_AS(reliable_difference(h, cluster, {}, 1.0, false),
                  std::invalid_argument);
  CHECK_THROWS_AS(reliable_difference(h, cluster, {{0, 1}}, 0.0, false),
                  std::invalid_argument);
}

TEST_CASE("rd is strictly monotone in its raw operands") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> upos(0.01, 4.0);
  for (int i = 0; i < 1000; ++i) {
    const double dij = upos(rng), di = upos(rng), dj = upos(rng), g = upos(rng);
    const double base = rd_value(dij, di + dj, g);
    CHECK(rd_value(dij + 0.1, di + dj, g) > base);
    CHECK(rd_value(dij, di + 0.1 + dj, g) < base);
    CHECK(rd_value(dij, di + (dj + 0.1), g) < base);
  }
}

TEST_CASE("weight-based embedding pair: aggregation is identity on an edgeless graph") {
  std::mt19937_64 rng(9);
  Graph g = build_graph({}, 6);
  NormAdj adj = norm_adjacency(g);
  Tensor w0 = random_tensor(3, 4, rng), b0(1, 4, 0.1);
  Tensor x = random_tensor(6, 3, rng);
  EmbeddingPair p = embedding_pair_wb(w0, b0, adj, x);
  CHECK(p.before.v == p.after.v);
}

TEST_CASE("weight-based embedding pair: zero weights give constant rows and flat RD") {
  // regular graph: Â rows sum to 1, so constant rows stay constant under
  // aggregation
  Graph g = build_graph({{0, 1}, {1, 2}, {2, 3}, {3, 0}}, 4);
  NormAdj adj = norm_adjacency(g);
  Tensor w0(3, 4, 0.0), b0(1, 4, 0.7);
  std::mt19937_64 rng(11);
  Tensor x = random_tensor(4, 3, rng);
  EmbeddingPair p = embedding_pair_wb(w0, b0, adj, x);
  for (int i = 0; i < 4; ++i)
    for (int c = 0; c < 4; ++c) {
      CHECK(p.before.at(i, c) == oracle::sigmoid(0.7));
      CHECK(p.after.at(i, c) == doctest::Approx(oracle::sigmoid(0.7)).epsilon(1e-12));
    }
  auto track = mvrd_track(p, {0, 1, -1, -1}, 2, g.edges, adj, 1.0, 0.8, true);
  for (double rd : track.rd_before) CHECK(rd == 1.0);
  for (double rd : track.rd_after) CHECK(rd == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("embedding pairs match a dense oracle on a random instance") {
  std::mt19937_64 rng(13);
  Graph g = random_graph(9, 0.3, 13);
  NormAdj adj = norm_adjacency(g);
  Tensor dense = oracle::dense_norm_adjacency(g);
  Tensor x = random_tensor(9, 5, rng);
  Tensor w0 = random_tensor(5, 4, rng), b0 = random_tensor(1, 4, rng);

  EmbeddingPair wb = embedding_pair_wb(w0, b0, adj, x);
  Tensor z = oracle::matmul(x, w0);
  for (int i = 0; i < 9; ++i)
    for (int c = 0; c < 4; ++c) z.at(i, c) += b0.v[c];
  Tensor az = oracle::matmul(dense, z);
  for (int i = 0; i < 9; ++i)
    for (int c = 0; c < 4; ++c) {
      CHECK(std::abs(wb.before.at(i, c) - oracle::sigmoid(z.at(i, c))) <= 1e-10);
      CHECK(std::abs(wb.after.at(i, c) - oracle::sigmoid(az.at(i, c))) <= 1e-10);
    }

  EmbeddingPair wf = embedding_pair_wf(x, adj);
  Tensor ax = oracle::matmul(dense, x);
  for (int i = 0; i < 9; ++i)
    for (int c = 0; c < 5; ++c) {
      CHECK(std::abs(wf.before.at(i, c) - oracle::sigmoid(x.at(i, c))) <= 1e-10);
      CHECK(std::abs(wf.after.at(i, c) - oracle::sigmoid(ax.at(i, c))) <= 1e-10);
    }
}

TEST_CASE("vrd subtracts elementwise and is antisymmetric") {
  CHECK(vrd({1.2}, {0.8})[0] == doctest::Approx(0.4).epsilon(1e-15));
  std::vector<double> same = {0.3, 0.7, 1.1};
  for (double v : vrd(same, same)) CHECK(v == 0.0);

  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  std::vector<double> a(64), b(64);
  for (size_t i = 0; i < a.size(); ++i) {
    a[i] = u(rng);
    b[i] = u(rng);
  }
  auto ab = vrd(a, b), ba = vrd(b, a);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(ab[i] == a[i] - b[i]);
    CHECK(ab[i] == -ba[i]);
  }
  CHECK_THROWS_AS(vrd({1.0}, {1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("mvrd modulation halves at zero distance and annihilates zero vrd") {
  Graph g = build_graph({{0, 1}, {1, 2}}, 3);
  NormAdj adj = norm_adjacency(g);

  auto half = mvrd({2.0, -3.0}, {0.0, 0.0}, 0.8, adj, g.edges);
  CHECK(half[0] == 0.5 * 2.0 * adj.entry(0, 1));
  CHECK(half[1] == 0.5 * -3.0 * adj.entry(1, 2));

  auto zero = mvrd({0.0, 0.0}, {1.7, -2.4}, 0.8, adj, g.edges);
  CHECK(zero == std::vector<double>{0.0, 0.0});
}

TEST_CASE("mvrd matches a step-by-step oracle and is dominated by |vrd|*A") {
  Graph g = random_graph(12, 0.4, 19);
  NormAdj adj = norm_adjacency(g);
  std::mt19937_64 rng(19);
  std::normal_distribution<double> nd(0.0, 1.5);
  std::vector<double> v(g.edges.size()), d(g.edges.size());
  for (size_t i = 0; i < v.size(); ++i) {
    v[i] = nd(rng);
    d[i] = nd(rng);
  }
  auto out = mvrd(v, d, 0.8, adj, g.edges);
  for (size_t e = 0; e < g.edges.size(); ++e) {
    const double expect =
        oracle::sigmoid(0.8 * d[e]) * v[e] * adj.entry(g.edges[e].first, g.edges[e].second);
    CHECK(std::abs(out[e] - expect) <= 1e-12);
    CHECK(std::abs(out[e]) <
          std::abs(v[e]) * adj.entry(g.edges[e].first, g.edges[e].second) + 1e-300);
  }
}

TEST_CASE("lambda schedule hits its endpoints exactly") {
  const double B = 40, I = 10, k = 5;
  const double horizon = k * B / I;  // paper-literal N_e
  CHECK(lambda_schedule(0, B, I, k, 0.5, 0.5) == 1.0);
  CHECK(lambda_schedule(horizon, B, I, k, 0.5, 0.5) == 0.0);
  CHECK(lambda_schedule(horizon / 2, B, I, k, 0.5, 0.5) == 0.5);
}

TEST_CASE("lambda schedule horizons, monotonicity, and clamping") {
  const double B = 40, I = 10, k = 5;
  CHECK(lambda_schedule(I * B / k, B, I, k, 0.5, 0.5, LambdaHorizon::Rounds) == 0.0);

  double prev = 2.0;
  const double horizon = k * B / I;
  for (double e = 0; e <= horizon; e += horizon / 16) {
    const double l = lambda_schedule(e, B, I, k, 0.5, 0.5);
    CHECK(l <= prev);
    CHECK(l >= 0.0);
    CHECK(l <= 1.0);
    prev = l;
  }
  // omega+phi beyond 1 clamps
  CHECK(lambda_schedule(0, B, I, k, 0.8, 0.5) == 1.0);
  CHECK(lambda_schedule(horizon, B, I, k, 0.8, 0.5) == 0.0);
  CHECK_THROWS_AS(lambda_schedule(1, 0, I, k, 0.5, 0.5), std::invalid_argument);
}

TEST_CASE("fuse_scores mixes the two tracks") {
  std::vector<double> wf = {1.0, 2.0, 3.0}, wb = {-1.0, 0.5, 9.0};
  CHECK(fuse_scores(wf, wb, 1.0) == wf);
  CHECK(fuse_scores(wf, wb, 0.0) == wb);
  auto mixed = fuse_scores(wf, wb, 0.3);
  for (size_t i = 0; i < wf.size(); ++i)
    CHECK(mixed[i] == 0.3 * wf[i] + 0.7 * wb[i]);
  CHECK_THROWS_AS(fuse_scores(wf, {1.0}, 0.5), std::invalid_argument);
}

TEST_CASE("select_top_k matches a full sort on 1000 random instances") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> ksmall(0, 12);
  for (int iter = 0; iter < 1000; ++iter) {
    const int m = 1 + iter % 40;
    std::vector<std::pair<int, int>> cands;
    std::set<std::pair<int, int>> seen;
    std::uniform_int_distribution<int> node(0, 19);
    while (static_cast<int>(cands.size()) < m) {
      int a = node(rng), b = node(rng);
      if (a == b) continue;
      auto e = std::minmax(a, b);
      if (seen.insert({e.first, e.second}).second) cands.push_back({e.first, e.second});
    }
    std::vector<double> scores(m);
    for (auto& s : scores) s = iter % 3 == 0 ? std::round(u(rng) * 4) / 4 : u(rng);
    const int k = ksmall(rng);

    auto mine = select_top_k(scores, cands, k);

    std::vector<int> order(m);
    for (int i = 0; i < m; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (scores[a] != scores[b]) return scores[a] > scores[b];
      return cands[a] < cands[b];
    });
    order.resize(std::min(k, m));
    CHECK(mine == order);
  }
}

TEST_CASE("select_top_k fixtures: overflow k, exact ties, zero k") {
  std::vector<std::pair<int, int>> cands = {{3, 4}, {0, 2}, {1, 2}, {0, 1}};
  std::vector<double> flat(4, 1.0);
  auto all = select_top_k(flat, cands, 10);
  CHECK(all == std::vector<int>{3, 1, 2, 0});  // lexicographic pairs
  auto three = select_top_k({0.1, 0.9, 0.5, 0.7}, cands, 3);
  CHECK(three == std::vector<int>{1, 3, 2});
  CHECK(select_top_k(flat, cands, 0).empty());
}

TEST_CASE("selected edges never reappear across simulated rounds") {
  Graph g = random_graph(30, 0.2, 29);
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::pair<int, int>> candidates = g.edges;
  std::set<std::pair<int, int>> taken;
  while (!candidates.empty()) {
    std::vector<double> scores(candidates.size());
    for (auto& s : scores) s = u(rng);
    auto picked = select_top_k(scores, candidates, 7);
    std::vector<std::pair<int, int>> next;
    std::set<int> picked_set(picked.begin(), picked.end());
    for (int idx : picked) {
      CHECK(taken.insert(candidates[idx]).second);  // never picked before
    }
    for (int i = 0; i < static_cast<int>(candidates.size()); ++i)
      if (!picked_set.count(i)) next.push_back(candidates[i]);
    candidates = std::move(next);
  }
  CHECK(taken.size() == g.edges.size());
}
