#include "lemp/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "lemp/linalg.hpp"

namespace lemp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void put_u32_le(std::ostream& os, uint32_t x) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(x >> (8 * i));
  os.write(reinterpret_cast<char*>(b), 4);
}

uint32_t get_u32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  uint32_t x = 0;
  for (int i = 0; i < 4; ++i) x |= static_cast<uint32_t>(b[i]) << (8 * i);
  return x;
}

std::string id_to_key(const json& id) {
  if (id.is_string()) return id.get<std::string>();
  return id.dump();
}

std::vector<int> train_label_mask(const Graph& g) {
  std::vector<int> labels(g.n, -1);
  for (int i = 0; i < g.n; ++i)
    if (g.splits[i] == Split::Train) labels[i] = g.labels[i];
  return labels;
}

}  // namespace

DatasetBundle ingest(const std::string& dir) {
  const fs::path root(dir);
  DatasetBundle bundle;
  bundle.name = root.filename().string();

  // nodes.jsonl
  std::ifstream nodes_file(root / "nodes.jsonl");
  if (!nodes_file) throw std::runtime_error("ingest: missing " + (root / "nodes.jsonl").string());
  std::map<std::string, int> id_to_index;
  std::vector<int> labels;
  std::vector<Split> splits;
  std::vector<std::string> texts;
  bool any_text = false;
  std::string line;
  size_t lineno = 0;
  while (std::getline(nodes_file, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error("ingest: nodes.jsonl:" + std::to_string(lineno) +
                               ": " + e.what());
    }
    if (!j.contains("id"))
      throw std::runtime_error("ingest: nodes.jsonl:" + std::to_string(lineno) +
                               ": node without id");
    const std::string key = id_to_key(j["id"]);
    if (!id_to_index.emplace(key, static_cast<int>(labels.size())).second)
      throw std::runtime_error("ingest: duplicate node id '" + key + "'");
    labels.push_back(j.contains("label") && !j["label"].is_null()
                         ? j["label"].get<int>()
                         : -1);
    if (!j.contains("split"))
      throw std::runtime_error("ingest: node '" + key + "' has no split tag");
    splits.push_back(split_from_string(j["split"].get<std::string>()));
    if (j.contains("text") && !j["text"].is_null()) {
      texts.push_back(j["text"].get<std::string>());
      any_text = true;
    } else {
      texts.emplace_back();
    }
  }
  const int n = static_cast<int>(labels.size());
  if (n == 0) throw std::runtime_error("ingest: nodes.jsonl is empty");

  // edges.csv
  std::ifstream edges_file(root / "edges.csv");
  if (!edges_file) throw std::runtime_error("ingest: missing " + (root / "edges.csv").string());
  std::vector<std::pair<int, int>> edges;
  lineno = 0;
  while (std::getline(edges_file, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw std::runtime_error("ingest: edges.csv:" + std::to_string(lineno) +
                               ": expected 'u,v'");
    std::string a = line.substr(0, comma);
    std::string b = line.substr(comma + 1);
    if (!b.empty() && b.back() == '\r') b.pop_back();
    auto ia = id_to_index.find(a);
    auto ib = id_to_index.find(b);
    if (ia == id_to_index.end() || ib == id_to_index.end())
      throw std::runtime_error("ingest: edges.csv:" + std::to_string(lineno) +
                               ": dangling endpoint '" +
                               (ia == id_to_index.end() ? a : b) + "'");
    edges.emplace_back(ia->second, ib->second);
  }

  // embeddings.bin
  std::ifstream emb_file(root / "embeddings.bin", std::ios::binary);
  if (!emb_file)
    throw std::runtime_error("ingest: missing " + (root / "embeddings.bin").string());
  char magic[4];
  emb_file.read(magic, 4);
  if (emb_file.gcount() != 4 || std::memcmp(magic, "EMB1", 4) != 0)
    throw std::runtime_error("ingest: embeddings.bin has a bad magic (want EMB1)");
  const uint32_t file_n = get_u32_le(emb_file);
  const uint32_t file_d = get_u32_le(emb_file);
  if (file_n != static_cast<uint32_t>(n))
    throw std::runtime_error("ingest: embeddings.bin row count " +
                             std::to_string(file_n) + " != node count " +
                             std::to_string(n));
  bundle.features = Tensor(n, static_cast<int>(file_d));
  std::vector<unsigned char> buf(static_cast<size_t>(file_n) * file_d * 4);
  emb_file.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (emb_file.gcount() != static_cast<std::streamsize>(buf.size()))
    throw std::runtime_error("ingest: embeddings.bin truncated: expected " +
                             std::to_string(buf.size()) + " payload bytes");
  for (size_t i = 0; i < bundle.features.size(); ++i) {
    uint32_t x = 0;
    for (int b = 0; b < 4; ++b)
      x |= static_cast<uint32_t>(buf[i * 4 + b]) << (8 * b);
    float f;
    std::memcpy(&f, &x, 4);
    bundle.features.v[i] = static_cast<double>(f);
  }

  // optional meta.json
  int classes = -1;
  if (fs::exists(root / "meta.json")) {
    std::ifstream meta(root / "meta.json");
    json j = json::parse(meta);
    bundle.domain = j.value("domain", bundle.domain);
    classes = j.value("classes", -1);
  }

  bundle.graph = build_graph(edges, n, std::move(labels), std::move(splits), classes);
  if (any_text) bundle.texts = std::move(texts);
  return bundle;
}

void synth_dataset(const SynthConfig& cfg, const std::string& out_dir) {
  if (cfg.kind != "heterophilic" && cfg.kind != "homophilic")
    throw std::invalid_argument("synth_dataset: kind must be heterophilic|homophilic");
  if (cfg.p_intra < 0 || cfg.p_intra > 1 || cfg.p_inter < 0 || cfg.p_inter > 1)
    throw std::invalid_argument("synth_dataset: probabilities must be in [0,1]");
  if (cfg.kind == "heterophilic" && cfg.p_inter <= cfg.p_intra)
    throw std::invalid_argument("synth_dataset: heterophilic needs p_inter > p_intra");
  if (cfg.kind == "homophilic" && cfg.p_intra <= cfg.p_inter)
    throw std::invalid_argument("synth_dataset: homophilic needs p_intra > p_inter");
  if (cfg.classes < 2 || cfg.n % cfg.classes != 0)
    throw std::invalid_argument("synth_dataset: n must divide evenly into classes");
  if (cfg.feature_dim < cfg.classes)
    throw std::invalid_argument("synth_dataset: feature_dim must cover the classes");

  auto rng = make_rng(cfg.seed, streams::kSynthData);
  const int per_class = cfg.n / cfg.classes;
  auto class_of = [&](int i) { return i / per_class; };

  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < cfg.n; ++i)
    for (int j = i + 1; j < cfg.n; ++j) {
      const double p = class_of(i) == class_of(j) ? cfg.p_intra : cfg.p_inter;
      if (u(rng) < p) edges.emplace_back(i, j);
    }

  // prototypes e_k/sqrt(2): unit pairwise separation
  std::normal_distribution<double> noise(0.0, cfg.feature_noise);
  Tensor features(cfg.n, cfg.feature_dim);
  for (int i = 0; i < cfg.n; ++i) {
    features.at(i, class_of(i)) = 1.0 / std::sqrt(2.0);
    for (int c = 0; c < cfg.feature_dim; ++c) features.at(i, c) += noise(rng);
  }

  std::vector<int> order(cfg.n);
  for (int i = 0; i < cfg.n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Split> splits(cfg.n, Split::Test);
  const int n_train = static_cast<int>(std::round(cfg.train_frac * cfg.n));
  const int n_val = static_cast<int>(std::round(cfg.val_frac * cfg.n));
  for (int r = 0; r < cfg.n; ++r)
    splits[order[r]] = r < n_train            ? Split::Train
                       : r < n_train + n_val  ? Split::Val
                                              : Split::Test;

  fs::create_directories(out_dir);
  {
    std::ofstream os(fs::path(out_dir) / "nodes.jsonl", std::ios::trunc);
    for (int i = 0; i < cfg.n; ++i) {
      json j{{"id", i},
             {"label", class_of(i)},
             {"split", split_to_string(splits[i])},
             {"text", "entity " + std::to_string(i) + " drawn from group " +
                          std::to_string(class_of(i)) + " of the synthetic corpus"}};
      os << j.dump() << "\n";
    }
  }
  {
    std::ofstream os(fs::path(out_dir) / "edges.csv", std::ios::trunc);
    for (auto [a, b] : edges) os << a << "," << b << "\n";
  }
  {
    std::ofstream os(fs::path(out_dir) / "embeddings.bin",
                     std::ios::trunc | std::ios::binary);
    os.write("EMB1", 4);
    put_u32_le(os, static_cast<uint32_t>(cfg.n));
    put_u32_le(os, static_cast<uint32_t>(cfg.feature_dim));
    for (double dvz : features.v) {
      const float f = static_cast<float>(dvz);
      uint32_t x;
      std::memcpy(&x, &f, 4);
      put_u32_le(os, x);
    }
  }
  {
    std::ofstream os(fs::path(out_dir) / "meta.json", std::ios::trunc);
    json j{{"domain", "generic"},
           {"classes", cfg.classes},
           {"kind", cfg.kind},
           {"seed", cfg.seed}};
    os << j.dump(2) << "\n";
  }
}

ProbeResult probe(const DatasetBundle& bundle, TrainConfig base, int num_seeds) {
  if (!bundle.graph.has_all_labels())
    throw std::invalid_argument("probe: dataset must be fully labeled");
  ProbeResult res;
  res.h_edge = edge_homophily(bundle.graph);
  res.h_node = node_homophily(bundle.graph);
  NormAdj adj = norm_adjacency(bundle.graph);

  auto run_config = [&](ModelKind kind, int layers, std::vector<double>& accs) {
    TrainConfig cfg = base;
    cfg.layers = layers;
    double mean = 0.0;
    for (int s = 0; s < num_seeds; ++s) {
      cfg.seed = base.seed + static_cast<uint64_t>(s);
      TrainResult tr = train(kind, bundle.graph, adj, bundle.features, nullptr, cfg);
      const double acc = evaluate(tr.best, bundle.graph, adj, bundle.features,
                                  nullptr, Split::Test);
      accs.push_back(acc);
      mean += acc;
    }
    return mean / num_seeds;
  };

  res.mlp2 = run_config(ModelKind::Mlp, 2, res.mlp2_runs);
  res.mlp4 = run_config(ModelKind::Mlp, 4, res.mlp4_runs);
  res.gcn2 = run_config(ModelKind::Gcn, 2, res.gcn2_runs);
  res.gcn4 = run_config(ModelKind::Gcn, 4, res.gcn4_runs);

  const double best_mlp = std::max(res.mlp2, res.mlp4);
  const double best_gcn = std::max(res.gcn2, res.gcn4);
  // half an accuracy point separates the categories
  if (best_gcn < best_mlp - 0.005)
    res.verdict = "malignant";
  else if (best_gcn > best_mlp + 0.005)
    res.verdict = "benign";
  else
    res.verdict = "ambiguous";
  return res;
}

RunReport run_lemp(const DatasetBundle& bundle, const RunConfig& cfg,
                   const ProviderBundle& providers) {
  const auto t0 = std::chrono::steady_clock::now();
  if (cfg.budget < 0) throw std::invalid_argument("run_lemp: negative budget");
  if (cfg.interval <= 0) throw std::invalid_argument("run_lemp: interval must be > 0");
  if (cfg.batch_k <= 0) throw std::invalid_argument("run_lemp: batch size must be > 0");

  RunReport report;
  report.dataset = bundle.name;
  report.seed = cfg.train.seed;
  report.budget_total = cfg.budget;
  report.h_edge = bundle.graph.has_all_labels() ? edge_homophily(bundle.graph) : 0.0;
  report.h_node = bundle.graph.has_all_labels() ? node_homophily(bundle.graph) : 0.0;

  NormAdj adj = norm_adjacency(bundle.graph);
  const Graph& g = bundle.graph;

  int msg_dim = providers.cache.dim();
  if (msg_dim <= 0) msg_dim = bundle.features.cols;  // synthetic oracle dimension

  Trainer trainer(ModelKind::Lemp, g, adj, bundle.features, cfg.train, msg_dim);

  // the weight-free track never changes during the run
  const int pca_dim =
      std::min({cfg.heuristic.pca_dim, bundle.features.cols, bundle.features.rows});
  EmbeddingPair wf_pair =
      embedding_pair_wf(pca_fit_transform(bundle.features, pca_dim), adj);
  const std::vector<int> cluster_labels = train_label_mask(g);

  ModelParams best_params = trainer.params();
  EnhancedEdgeSet best_enhanced = trainer.enhanced();
  double best_acc = -1.0;
  int since_best = 0;
  long selected_total = 0;
  bool budget_halt = false;

  for (int epoch = 1; epoch <= cfg.train.max_epochs; ++epoch) {
    EpochMetrics m = trainer.run_epoch();
    report.epochs.push_back(m);
    if (m.val_acc > best_acc) {
      best_acc = m.val_acc;
      best_params = trainer.params();
      best_enhanced = trainer.enhanced();
      report.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.train.patience) {
      break;
    }

    const bool round_due = epoch % cfg.interval == 0;
    const long budget_left = cfg.budget - selected_total;
    if (!round_due || budget_left <= 0) continue;

    // candidates: edges not yet enhanced
    std::vector<std::pair<int, int>> candidates;
    for (const auto& e : g.edges)
      if (!trainer.enhanced().contains(e.first, e.second)) candidates.push_back(e);
    if (candidates.empty()) continue;

    const auto tq = std::chrono::steady_clock::now();
    MvrdScores wf = mvrd_track(wf_pair, cluster_labels, g.num_classes, candidates,
                               adj, cfg.heuristic.gamma, cfg.heuristic.eta,
                               cfg.heuristic.standardized);
    EmbeddingPair wb_pair = embedding_pair_wb(
        trainer.params().weights[0], trainer.params().biases[0], adj, bundle.features);
    MvrdScores wb = mvrd_track(wb_pair, cluster_labels, g.num_classes, candidates,
                               adj, cfg.heuristic.gamma, cfg.heuristic.eta,
                               cfg.heuristic.standardized);
    const double lambda = lambda_schedule(
        epoch, static_cast<double>(cfg.budget), cfg.interval, cfg.batch_k,
        cfg.heuristic.omega, cfg.heuristic.phi, cfg.heuristic.horizon);
    std::vector<double> fused = fuse_scores(wf.mvrd, wb.mvrd, lambda);

    const int k_eff = static_cast<int>(
        std::min<long>({static_cast<long>(cfg.batch_k), budget_left,
                        static_cast<long>(candidates.size())}));
    std::vector<int> picked = select_top_k(fused, candidates, k_eff);

    RoundReport round;
    round.epoch = epoch;
    round.lambda = lambda;
    std::vector<std::pair<int, int>> pairs;
    for (int idx : picked) {
      pairs.push_back(candidates[idx]);
      round.selected.push_back({candidates[idx].first, candidates[idx].second,
                                wf.mvrd[idx], wb.mvrd[idx], fused[idx]});
    }

    providers.ledger.begin_round();
    QueryStats stats;
    std::vector<PairMessage> messages =
        query_connection_analysis(pairs, bundle.texts, providers.tmpl,
                                  providers.provider, providers.cache,
                                  providers.ledger, providers.rate, &stats);
    round.provider_calls = stats.provider_calls;
    round.cache_hits = stats.cache_hits;
    for (const auto& msg : messages) trainer.insert_message(msg.u, msg.v, msg.embedding);

    selected_total += static_cast<long>(pairs.size());
    report.rounds.push_back(std::move(round));
    report.query_seconds += seconds_since(tq);

    if (cfg.strict_budget_stop && selected_total >= cfg.budget) {
      budget_halt = true;
      break;
    }
  }
  (void)budget_halt;

  report.pairs_selected = selected_total;
  report.provider_queries = providers.ledger.used();
  report.cost_usd = providers.ledger.cost();
  report.test_accuracy =
      evaluate(best_params, g, adj, bundle.features, &best_enhanced, Split::Test);
  report.wall_seconds = seconds_since(t0);
  return report;
}

SelectionPreview preview_selection(const DatasetBundle& bundle, const RunConfig& cfg,
                                   int k) {
  NormAdj adj = norm_adjacency(bundle.graph);
  const Graph& g = bundle.graph;

  TrainConfig warmup = cfg.train;
  warmup.max_epochs = cfg.interval;
  warmup.patience = cfg.interval;
  Trainer trainer(ModelKind::Gcn, g, adj, bundle.features, warmup);
  for (int e = 0; e < cfg.interval; ++e) trainer.run_epoch();

  const int pca_dim =
      std::min({cfg.heuristic.pca_dim, bundle.features.cols, bundle.features.rows});
  EmbeddingPair wf_pair =
      embedding_pair_wf(pca_fit_transform(bundle.features, pca_dim), adj);
  EmbeddingPair wb_pair = embedding_pair_wb(
      trainer.params().weights[0], trainer.params().biases[0], adj, bundle.features);
  const std::vector<int> cluster_labels = train_label_mask(g);

  MvrdScores wf = mvrd_track(wf_pair, cluster_labels, g.num_classes, g.edges, adj,
                             cfg.heuristic.gamma, cfg.heuristic.eta,
                             cfg.heuristic.standardized);
  MvrdScores wb = mvrd_track(wb_pair, cluster_labels, g.num_classes, g.edges, adj,
                             cfg.heuristic.gamma, cfg.heuristic.eta,
                             cfg.heuristic.standardized);

  SelectionPreview preview;
  const long budget = cfg.budget > 0 ? cfg.budget : static_cast<long>(g.edges.size());
  preview.lambda = lambda_schedule(cfg.interval, static_cast<double>(budget),
                                   cfg.interval, cfg.batch_k, cfg.heuristic.omega,
                                   cfg.heuristic.phi, cfg.heuristic.horizon);
  std::vector<double> fused = fuse_scores(wf.mvrd, wb.mvrd, preview.lambda);
  for (int idx : select_top_k(fused, g.edges, k))
    preview.ranked.push_back({g.edges[idx].first, g.edges[idx].second, wf.mvrd[idx],
                              wb.mvrd[idx], fused[idx]});
  return preview;
}

void report_export(const RunReport& report, const std::string& out_dir) {
  fs::create_directories(out_dir);

  json j{{"dataset", report.dataset},
         {"model", report.model},
         {"seed", report.seed},
         {"best_epoch", report.best_epoch},
         {"test_accuracy", report.test_accuracy},
         {"edge_homophily", report.h_edge},
         {"node_homophily", report.h_node},
         {"probe_verdict", report.probe_verdict},
         {"budget", report.budget_total},
         {"pairs_selected", report.pairs_selected},
         {"provider_queries", report.provider_queries},
         {"cost_usd", report.cost_usd},
         {"wall_seconds", report.wall_seconds},
         {"query_seconds", report.query_seconds},
         {"epochs", json::array()},
         {"rounds", json::array()}};
  for (const auto& e : report.epochs)
    j["epochs"].push_back(json{{"train_loss", e.train_loss},
                               {"train_acc", e.train_acc},
                               {"val_loss", e.val_loss},
                               {"val_acc", e.val_acc}});
  for (const auto& r : report.rounds) {
    json rj{{"epoch", r.epoch},
            {"lambda", r.lambda},
            {"provider_calls", r.provider_calls},
            {"cache_hits", r.cache_hits},
            {"selected", json::array()}};
    for (const auto& s : r.selected)
      rj["selected"].push_back(json{{"u", s.u},
                                    {"v", s.v},
                                    {"score_wf", s.score_wf},
                                    {"score_wb", s.score_wb},
                                    {"fused", s.fused}});
    j["rounds"].push_back(std::move(rj));
  }
  {
    std::ofstream os(fs::path(out_dir) / "report.json", std::ios::trunc);
    if (!os) throw std::runtime_error("report_export: cannot write to " + out_dir);
    os << j.dump(2) << "\n";
  }
  {
    std::ofstream os(fs::path(out_dir) / "epochs.csv", std::ios::trunc);
    os << "epoch,train_loss,train_acc,val_loss,val_acc\n";
    for (size_t e = 0; e < report.epochs.size(); ++e)
      os << e + 1 << "," << report.epochs[e].train_loss << ","
         << report.epochs[e].train_acc << "," << report.epochs[e].val_loss << ","
         << report.epochs[e].val_acc << "\n";
  }
  {
    std::ofstream os(fs::path(out_dir) / "selections.csv", std::ios::trunc);
    os << "round,epoch,lambda,u,v,score_wf,score_wb,fused\n";
    for (size_t r = 0; r < report.rounds.size(); ++r)
      for (const auto& s : report.rounds[r].selected)
        os << r + 1 << "," << report.rounds[r].epoch << "," << report.rounds[r].lambda
           << "," << s.u << "," << s.v << "," << s.score_wf << "," << s.score_wb
           << "," << s.fused << "\n";
  }
  {
    std::ofstream os(fs::path(out_dir) / "budget_accuracy.csv", std::ios::trunc);
    os << "budget,pairs_selected,test_accuracy,cost_usd\n";
    os << report.budget_total << "," << report.pairs_selected << ","
       << report.test_accuracy << "," << report.cost_usd << "\n";
  }
}

}  // namespace lemp
