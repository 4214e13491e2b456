#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "lemp/graph.hpp"
#include "lemp/tape.hpp"

namespace lemp {

enum class ModelKind { Mlp, Gcn, Lemp };

ModelKind model_kind_from_string(const std::string& s);
const char* model_kind_to_string(ModelKind k);

struct TrainConfig {
  int max_epochs = 500;
  int patience = 50;
  double lr = 2e-2;
  double weight_decay = 5e-4;
  double dropout = 0.5;
  int hidden = 128;
  double beta = 0.5;
  uint64_t seed = 0;
  int layers = 2;
  bool float32 = false;

  void validate() const;
};

/// Per-layer weights W_l / biases b_l; LEMP models additionally carry a gate
/// matrix W_gate_l (3*d_l × d_l) and a message projection P_l (msg_dim × d_l)
/// per layer, plus the scalar fusion weight beta.
struct ModelParams {
  ModelKind kind = ModelKind::Mlp;
  int layers = 0;
  int msg_dim = 0;
  double beta = 0.5;
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
  std::vector<Tensor> gates;
  std::vector<Tensor> projections;

  /// Glorot-uniform weights, zero biases. W/b draws happen before any
  /// gate/projection draws so MLP/GCN/LEMP share W/b for the same rng state.
  static ModelParams init(ModelKind kind, int in_dim, int hidden, int classes,
                          int layers, int msg_dim, double beta,
                          std::mt19937_64& rng);

  std::vector<Tensor*> trainable();
  std::vector<const Tensor*> trainable() const;
};

void save_checkpoint(const ModelParams& p, const std::string& path, bool float32);
ModelParams load_checkpoint(const std::string& path);

/// Raw (un-projected) preliminary-message embeddings keyed by unordered
/// node pair, with the training epoch each pair was inserted at. Both edge
/// orientations resolve to the same record.
struct EnhancedEdgeSet {
  struct Entry {
    int row = -1;
    int epoch = 0;
  };

  int msg_dim = 0;
  Tensor messages;                            // row per pair
  std::map<std::pair<int, int>, Entry> entries;

  bool empty() const { return entries.empty(); }
  size_t size() const { return entries.size(); }
  bool contains(int u, int v) const;
  const Entry& at(int u, int v) const;
  void insert(int u, int v, const std::vector<double>& embedding, int epoch);
};

/// alpha = sigmoid([h_i || h_msg || h_j] W_gate), rows paired up.
Tensor gate(const Tensor& h_i, const Tensor& h_msg, const Tensor& h_j,
            const Tensor& w_gate);

/// m = beta*h_msg + (1-beta)*(alpha⊙h_i + (1-alpha)⊙h_j).
Tensor synthesize_message(const Tensor& h_i, const Tensor& h_msg,
                          const Tensor& h_j, const Tensor& alpha, double beta);

struct ForwardOptions {
  bool training = false;
  double dropout = 0.0;
  std::mt19937_64* dropout_rng = nullptr;
};

/// Parameter tensors registered as tape leaves, in ModelParams::trainable()
/// order. Lets callers (the trainer, gradient checks) own the leaves while
/// the forward builders consume them.
struct ModelNodes {
  std::vector<NodeId> weights, biases, projections, gates;

  static ModelNodes leaves(Tape& t, const ModelParams& p, bool requires_grad);
  static ModelNodes from_flat(const ModelParams& shape_of,
                              const std::vector<NodeId>& flat);
  std::vector<NodeId> flat() const;
};

/// Shared forward pass; `meta` supplies shapes/beta only — parameter values
/// come from the tape leaves in `nodes`. `adj` is used by GCN, the
/// graph/adj/enhanced triple by LEMP.
NodeId model_forward(Tape& t, ModelKind kind, const ModelParams& meta,
                     const ModelNodes& nodes, std::shared_ptr<const Csr> adj,
                     const Graph* g, const NormAdj* norm_adj,
                     const EnhancedEdgeSet* enhanced, NodeId x,
                     const ForwardOptions& opt);

NodeId mlp_forward(Tape& t, const ModelParams& p, NodeId x,
                   const ForwardOptions& opt);
NodeId gcn_forward(Tape& t, const ModelParams& p, std::shared_ptr<const Csr> adj,
                   NodeId x, const ForwardOptions& opt);
NodeId lemp_forward(Tape& t, const ModelParams& p, const Graph& g,
                    const NormAdj& adj, NodeId x, const EnhancedEdgeSet& enhanced,
                    const ForwardOptions& opt);

/// One LEMP layer at the value level, dropout off: operands are transformed
/// by W_l (plus bias) and P_l, enhanced directed edges get gated messages,
/// plain edges fall back to the classic z_i message, and the update applies
/// Â-weighted aggregation. final_layer skips the nonlinearity.
Tensor lemp_layer(const ModelParams& p, int layer, const NormAdj& adj,
                  const Graph& g, const Tensor& h_prev,
                  const EnhancedEdgeSet& enhanced, bool final_layer);

Tensor forward_values(const ModelParams& p, const Graph& g, const NormAdj& adj,
                      const Tensor& x, const EnhancedEdgeSet* enhanced);

struct EpochMetrics {
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

struct TrainResult {
  ModelParams best;                 // best-validation checkpoint
  std::vector<EpochMetrics> epochs;
  int best_epoch = 0;               // 1-based; 0 means the initial params
};

/// Single-run training engine: Adam (b1=.9, b2=.999, eps=1e-8) with
/// decoupled weight decay, dropout masks resampled each epoch from the
/// run's dropout stream, deterministic for a fixed seed.
class Trainer {
 public:
  Trainer(ModelKind kind, const Graph& g, const NormAdj& adj, const Tensor& x,
          const TrainConfig& cfg, int msg_dim = 0);

  EpochMetrics run_epoch();
  int epochs_done() const { return epoch_; }

  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }
  EnhancedEdgeSet& enhanced() { return enhanced_; }
  const EnhancedEdgeSet& enhanced() const { return enhanced_; }
  const Graph& graph() const { return g_; }

  void insert_message(int u, int v, const std::vector<double>& embedding);

 private:
  ModelKind kind_;
  const Graph& g_;
  const NormAdj& adj_;
  std::shared_ptr<const Csr> adj_csr_;
  const Tensor& x_;
  TrainConfig cfg_;
  ModelParams params_;
  EnhancedEdgeSet enhanced_;
  std::vector<Tensor> adam_m_, adam_v_;
  long adam_t_ = 0;
  int epoch_ = 0;
  std::mt19937_64 dropout_rng_;
  std::vector<int> train_idx_, val_idx_;
  std::vector<int> train_labels_, val_labels_;
};

TrainResult train(ModelKind kind, const Graph& g, const NormAdj& adj,
                  const Tensor& x, const EnhancedEdgeSet* enhanced,
                  const TrainConfig& cfg);

/// Argmax accuracy on a split; ties break toward the lowest class index.
double evaluate(const ModelParams& p, const Graph& g, const NormAdj& adj,
                const Tensor& x, const EnhancedEdgeSet* enhanced, Split split);

double accuracy_on_split(const Tensor& logits, const Graph& g, Split split);
int argmax_lowest(const double* row, int k);

}  // namespace lemp
