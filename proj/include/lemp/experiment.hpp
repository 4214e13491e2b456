#pragma once

#include <string>
#include <vector>

#include "lemp/graph.hpp"
#include "lemp/models.hpp"
#include "lemp/mvrd.hpp"
#include "lemp/providers.hpp"

namespace lemp {

struct DatasetBundle {
  std::string name;
  std::string domain = "generic";      // prompt template key
  Graph graph;
  Tensor features;                     // n × d, float32-sourced
  std::vector<std::string> texts;      // empty when the dataset has none
};

/// Loads nodes.jsonl ({id, label, split, text?} per line), edges.csv (u,v
/// per line) and embeddings.bin ("EMB1", u32 n, u32 d, n*d float32 LE,
/// row-major), plus an optional meta.json ({"domain", "classes"}).
/// Node ids may be arbitrary scalars; they are remapped to dense indices in
/// file order.
DatasetBundle ingest(const std::string& dir);

struct SynthConfig {
  std::string kind = "heterophilic";   // heterophilic | homophilic
  int n = 400;
  int classes = 2;
  double p_intra = 0.005;
  double p_inter = 0.05;
  double feature_noise = 1.0;
  int feature_dim = 16;
  uint64_t seed = 0;
  double train_frac = 0.48;
  double val_frac = 0.32;
};

/// Writes a block-model dataset directory (features = unit-separated class
/// prototypes + Gaussian noise) ingestible by ingest().
void synth_dataset(const SynthConfig& cfg, const std::string& out_dir);

struct ProbeResult {
  double mlp2 = 0, mlp4 = 0, gcn2 = 0, gcn4 = 0;  // mean test acc over seeds
  std::vector<double> mlp2_runs, mlp4_runs, gcn2_runs, gcn4_runs;
  double h_edge = 0, h_node = 0;
  std::string verdict;  // malignant | benign | ambiguous
};

/// Trains 2-/4-layer MLP and GCN probes over `num_seeds` seeds and
/// categorizes the dataset: malignant when the best GCN trails the best MLP
/// by more than half an accuracy point, benign when it leads by the same
/// margin, ambiguous otherwise.
ProbeResult probe(const DatasetBundle& bundle, TrainConfig base, int num_seeds = 4);

struct HeuristicConfig {
  double gamma = 1.0;
  double eta = 0.8;
  double omega = 0.5;
  double phi = 0.5;
  int pca_dim = 128;
  bool standardized = true;
  LambdaHorizon horizon = LambdaHorizon::PaperLiteral;
};

struct RunConfig {
  TrainConfig train;
  HeuristicConfig heuristic;
  long budget = 0;
  int interval = 10;       // epochs between selection rounds
  int batch_k = 50;        // pairs per round
  bool strict_budget_stop = false;  // halt training once the budget is spent
};

struct SelectionRecord {
  int u = 0, v = 0;
  double score_wf = 0, score_wb = 0, fused = 0;
};

struct RoundReport {
  int epoch = 0;
  double lambda = 0;
  std::vector<SelectionRecord> selected;
  int provider_calls = 0;
  int cache_hits = 0;
};

struct RunReport {
  std::string dataset;
  std::string model = "lemp";
  uint64_t seed = 0;
  std::vector<EpochMetrics> epochs;
  std::vector<RoundReport> rounds;
  int best_epoch = 0;
  double test_accuracy = 0;
  double h_edge = 0, h_node = 0;
  std::string probe_verdict = "skipped";
  long budget_total = 0;
  long pairs_selected = 0;
  long provider_queries = 0;
  double cost_usd = 0;
  double wall_seconds = 0;
  double query_seconds = 0;
};

struct ProviderBundle {
  Provider& provider;
  MessageCache& cache;
  BudgetLedger& ledger;
  RateLimiter& rate;
  const PromptTemplate& tmpl;
};

/// The full active-learning loop: train, and every `interval` epochs while
/// budget remains select the top-k fused-MVRD candidate edges, query the
/// provider, and splice the messages into training. Budget 0 degenerates to
/// plain GCN training (bit-identical metrics for the same seed).
RunReport run_lemp(const DatasetBundle& bundle, const RunConfig& cfg,
                   const ProviderBundle& providers);

/// report.json plus epochs.csv / selections.csv / budget_accuracy.csv.
void report_export(const RunReport& report, const std::string& out_dir);

/// One selection round's scores without training side effects: trains a GCN
/// for `cfg.interval` epochs, computes both MVRD tracks over all edges, and
/// returns the ranked top-k with per-track scores. Used by the `select` CLI.
struct SelectionPreview {
  double lambda = 0;
  std::vector<SelectionRecord> ranked;
};
SelectionPreview preview_selection(const DatasetBundle& bundle, const RunConfig& cfg,
                                   int k);

}  // namespace lemp
