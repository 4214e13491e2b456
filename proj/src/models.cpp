#include "lemp/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "lemp/linalg.hpp"

namespace lemp {

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "mlp") return ModelKind::Mlp;
  if (s == "gcn") return ModelKind::Gcn;
  if (s == "lemp") return ModelKind::Lemp;
  throw std::invalid_argument("unknown model kind: '" + s + "'");
}

const char* model_kind_to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Mlp: return "mlp";
    case ModelKind::Gcn: return "gcn";
    default: return "lemp";
  }
}

void TrainConfig::validate() const {
  if (patience > max_epochs && max_epochs > 0)
    throw std::invalid_argument("TrainConfig: patience exceeds max_epochs");
  if (lr <= 0.0 || weight_decay < 0.0)
    throw std::invalid_argument("TrainConfig: rates must be positive");
  if (dropout < 0.0 || dropout >= 1.0)
    throw std::invalid_argument("TrainConfig: dropout must be in [0,1)");
  if (hidden <= 0 || layers < 1)
    throw std::invalid_argument("TrainConfig: hidden/layers must be positive");
  if (beta < 0.0 || beta > 1.0)
    throw std::invalid_argument("TrainConfig: beta must be in [0,1]");
}

namespace {

Tensor glorot(int rows, int cols, std::mt19937_64& rng) {
  Tensor t(rows, cols);
  const double bound = std::sqrt(6.0 / (rows + cols));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& v : t.v) v = u(rng);
  return t;
}

std::vector<int> layer_dims(int in_dim, int hidden, int classes, int layers) {
  std::vector<int> dims(layers + 1, hidden);
  dims.front() = in_dim;
  dims.back() = classes;
  return dims;
}

}  // namespace

ModelParams ModelParams::init(ModelKind kind, int in_dim, int hidden, int classes,
                              int layers, int msg_dim, double beta,
                              std::mt19937_64& rng) {
  if (layers < 1) throw std::invalid_argument("ModelParams: need at least one layer");
  ModelParams p;
  p.kind = kind;
  p.layers = layers;
  p.msg_dim = msg_dim;
  p.beta = beta;
  auto dims = layer_dims(in_dim, hidden, classes, layers);
  for (int l = 0; l < layers; ++l) {
    p.weights.push_back(glorot(dims[l], dims[l + 1], rng));
    p.biases.emplace_back(1, dims[l + 1], 0.0);
  }
  if (kind == ModelKind::Lemp) {
    // drawn after all W so the W/b prefix matches a GCN with the same seed
    for (int l = 0; l < layers; ++l) {
      p.projections.push_back(glorot(msg_dim, dims[l + 1], rng));
      p.gates.push_back(glorot(3 * dims[l + 1], dims[l + 1], rng));
    }
  }
  return p;
}

std::vector<Tensor*> ModelParams::trainable() {
  std::vector<Tensor*> out;
  for (auto& t : weights) out.push_back(&t);
  for (auto& t : biases) out.push_back(&t);
  for (auto& t : projections) out.push_back(&t);
  for (auto& t : gates) out.push_back(&t);
  return out;
}

std::vector<const Tensor*> ModelParams::trainable() const {
  std::vector<const Tensor*> out;
  for (auto& t : weights) out.push_back(&t);
  for (auto& t : biases) out.push_back(&t);
  for (auto& t : projections) out.push_back(&t);
  for (auto& t : gates) out.push_back(&t);
  return out;
}

// --- checkpoint io ---------------------------------------------------------

namespace {

void put_u32(std::ostream& os, uint32_t x) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(x >> (8 * i));
  os.write(reinterpret_cast<char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t x) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(x >> (8 * i));
  os.write(reinterpret_cast<char*>(b), 8);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  uint32_t x = 0;
  for (int i = 0; i < 4; ++i) x |= static_cast<uint32_t>(b[i]) << (8 * i);
  return x;
}

uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= static_cast<uint64_t>(b[i]) << (8 * i);
  return x;
}

void put_f64(std::ostream& os, double d) {
  uint64_t x;
  std::memcpy(&x, &d, 8);
  put_u64(os, x);
}

double get_f64(std::istream& is) {
  uint64_t x = get_u64(is);
  double d;
  std::memcpy(&d, &x, 8);
  return d;
}

void put_tensor(std::ostream& os, const Tensor& t, bool f32) {
  put_u64(os, static_cast<uint64_t>(t.rows));
  put_u64(os, static_cast<uint64_t>(t.cols));
  for (double d : t.v) {
    if (f32) {
      float f = static_cast<float>(d);
      uint32_t x;
      std::memcpy(&x, &f, 4);
      put_u32(os, x);
    } else {
      put_f64(os, d);
    }
  }
}

Tensor get_tensor(std::istream& is, bool f32) {
  const auto rows = static_cast<int>(get_u64(is));
  const auto cols = static_cast<int>(get_u64(is));
  Tensor t(rows, cols);
  for (auto& d : t.v) {
    if (f32) {
      uint32_t x = get_u32(is);
      float f;
      std::memcpy(&f, &x, 4);
      d = static_cast<double>(f);
    } else {
      d = get_f64(is);
    }
  }
  return t;
}

constexpr char kCheckpointMagic[4] = {'L', 'M', 'P', '1'};

}  // namespace

void save_checkpoint(const ModelParams& p, const std::string& path, bool float32) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  os.write(kCheckpointMagic, 4);
  put_u32(os, 1);  // version
  put_u32(os, static_cast<uint32_t>(p.kind));
  put_u32(os, float32 ? 4 : 8);
  put_u32(os, static_cast<uint32_t>(p.layers));
  put_u32(os, static_cast<uint32_t>(p.msg_dim));
  put_f64(os, p.beta);
  for (const Tensor* t : p.trainable()) put_tensor(os, *t, float32);
  if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  const uint32_t version = get_u32(is);
  if (version != 1)
    throw std::runtime_error("load_checkpoint: unsupported version " +
                             std::to_string(version));
  ModelParams p;
  p.kind = static_cast<ModelKind>(get_u32(is));
  const uint32_t width = get_u32(is);
  const bool f32 = width == 4;
  p.layers = static_cast<int>(get_u32(is));
  p.msg_dim = static_cast<int>(get_u32(is));
  p.beta = get_f64(is);
  for (int l = 0; l < p.layers; ++l) p.weights.push_back(get_tensor(is, f32));
  for (int l = 0; l < p.layers; ++l) p.biases.push_back(get_tensor(is, f32));
  if (p.kind == ModelKind::Lemp) {
    for (int l = 0; l < p.layers; ++l) p.projections.push_back(get_tensor(is, f32));
    for (int l = 0; l < p.layers; ++l) p.gates.push_back(get_tensor(is, f32));
  }
  if (!is) throw std::runtime_error("load_checkpoint: truncated file " + path);
  return p;
}

// --- enhanced edge set -------------------------------------------------------

bool EnhancedEdgeSet::contains(int u, int v) const {
  return entries.count({std::min(u, v), std::max(u, v)}) > 0;
}

const EnhancedEdgeSet::Entry& EnhancedEdgeSet::at(int u, int v) const {
  auto it = entries.find({std::min(u, v), std::max(u, v)});
  if (it == entries.end())
    throw std::out_of_range("EnhancedEdgeSet: pair not present");
  return it->second;
}

void EnhancedEdgeSet::insert(int u, int v, const std::vector<double>& embedding,
                             int epoch) {
  if (u == v) throw std::invalid_argument("EnhancedEdgeSet: self pair");
  const std::pair<int, int> key{std::min(u, v), std::max(u, v)};
  if (entries.count(key))
    throw std::invalid_argument("EnhancedEdgeSet: pair inserted twice");
  if (msg_dim == 0) {
    msg_dim = static_cast<int>(embedding.size());
    messages = Tensor(0, msg_dim);
  }
  if (static_cast<int>(embedding.size()) != msg_dim)
    throw std::invalid_argument("EnhancedEdgeSet: embedding dimension mismatch");
  Entry e;
  e.row = messages.rows;
  e.epoch = epoch;
  messages.v.insert(messages.v.end(), embedding.begin(), embedding.end());
  messages.rows += 1;
  entries.emplace(key, e);
}

// --- single-pair reference ops ----------------------------------------------

Tensor gate(const Tensor& h_i, const Tensor& h_msg, const Tensor& h_j,
            const Tensor& w_gate) {
  if (!h_i.same_shape(h_msg) || !h_i.same_shape(h_j))
    throw std::invalid_argument("gate: operand shapes disagree");
  const int d = h_i.cols;
  if (w_gate.rows != 3 * d || w_gate.cols != d)
    throw std::invalid_argument("gate: W_gate must be 3d x d");
  Tensor cat(h_i.rows, 3 * d);
  for (int r = 0; r < h_i.rows; ++r) {
    std::memcpy(cat.row(r), h_i.row(r), sizeof(double) * d);
    std::memcpy(cat.row(r) + d, h_msg.row(r), sizeof(double) * d);
    std::memcpy(cat.row(r) + 2 * d, h_j.row(r), sizeof(double) * d);
  }
  Tensor alpha = matmul_value(cat, w_gate);
  for (auto& v : alpha.v) v = sigmoid(v);
  return alpha;
}

Tensor synthesize_message(const Tensor& h_i, const Tensor& h_msg,
                          const Tensor& h_j, const Tensor& alpha, double beta) {
  if (!h_i.same_shape(h_msg) || !h_i.same_shape(h_j) || !h_i.same_shape(alpha))
    throw std::invalid_argument("synthesize_message: operand shapes disagree");
  if (beta < 0.0 || beta > 1.0)
    throw std::invalid_argument("synthesize_message: beta must be in [0,1]");
  Tensor m(h_i.rows, h_i.cols);
  for (size_t i = 0; i < m.size(); ++i) {
    const double a = alpha.v[i];
    m.v[i] = beta * h_msg.v[i] + (1.0 - beta) * (a * h_i.v[i] + (1.0 - a) * h_j.v[i]);
  }
  return m;
}

// --- forward builders ---------------------------------------------------------

ModelNodes ModelNodes::leaves(Tape& t, const ModelParams& p, bool requires_grad) {
  ModelNodes n;
  for (const auto& w : p.weights) n.weights.push_back(t.leaf(w, requires_grad));
  for (const auto& b : p.biases) n.biases.push_back(t.leaf(b, requires_grad));
  for (const auto& pr : p.projections) n.projections.push_back(t.leaf(pr, requires_grad));
  for (const auto& g : p.gates) n.gates.push_back(t.leaf(g, requires_grad));
  return n;
}

ModelNodes ModelNodes::from_flat(const ModelParams& shape_of,
                                 const std::vector<NodeId>& flat) {
  const size_t nl = shape_of.weights.size();
  if (flat.size() != nl * 2 + shape_of.projections.size() + shape_of.gates.size())
    throw std::invalid_argument("ModelNodes::from_flat: wrong leaf count");
  ModelNodes n;
  size_t k = 0;
  for (size_t i = 0; i < nl; ++i) n.weights.push_back(flat[k++]);
  for (size_t i = 0; i < nl; ++i) n.biases.push_back(flat[k++]);
  for (size_t i = 0; i < shape_of.projections.size(); ++i) n.projections.push_back(flat[k++]);
  for (size_t i = 0; i < shape_of.gates.size(); ++i) n.gates.push_back(flat[k++]);
  return n;
}

std::vector<NodeId> ModelNodes::flat() const {
  std::vector<NodeId> out;
  out.insert(out.end(), weights.begin(), weights.end());
  out.insert(out.end(), biases.begin(), biases.end());
  out.insert(out.end(), projections.begin(), projections.end());
  out.insert(out.end(), gates.begin(), gates.end());
  return out;
}

namespace {

// Â split into the classic part (diagonal + non-enhanced edges, original
// CSR order preserved) and the directed enhanced edge list.
struct LempPlan {
  std::shared_ptr<const Csr> full;
  std::shared_ptr<const Csr> plain;
  std::vector<int> src, dst, msg_row;
  std::vector<double> weight;
  bool enhanced_empty = true;
};

LempPlan build_lemp_plan(const Graph& g, const NormAdj& adj,
                         const EnhancedEdgeSet& enhanced) {
  LempPlan plan;
  plan.full = to_csr(adj);
  plan.enhanced_empty = enhanced.empty();
  if (plan.enhanced_empty) return plan;

  for (const auto& [key, entry] : enhanced.entries) {
    if (!g.has_edge(key.first, key.second))
      throw std::invalid_argument("lemp: enhanced pair (" +
                                  std::to_string(key.first) + "," +
                                  std::to_string(key.second) +
                                  ") is not an edge of the graph");
    // both orientations share the message row
    plan.src.push_back(key.first);
    plan.dst.push_back(key.second);
    plan.msg_row.push_back(entry.row);
    plan.weight.push_back(adj.entry(key.first, key.second));
    plan.src.push_back(key.second);
    plan.dst.push_back(key.first);
    plan.msg_row.push_back(entry.row);
    plan.weight.push_back(adj.entry(key.second, key.first));
  }

  auto plain = std::make_shared<Csr>();
  plain->rows = adj.n;
  plain->cols = adj.n;
  plain->row_ptr.assign(adj.n + 1, 0);
  for (int i = 0; i < adj.n; ++i) {
    for (int p = adj.row_ptr[i]; p < adj.row_ptr[i + 1]; ++p) {
      const int j = adj.col_idx[p];
      if (j != i && enhanced.contains(i, j)) continue;
      plain->col_idx.push_back(j);
      plain->val.push_back(adj.val[p]);
    }
    plain->row_ptr[i + 1] = static_cast<int>(plain->col_idx.size());
  }
  plan.plain = std::move(plain);
  return plan;
}

NodeId lemp_aggregate(Tape& t, const ModelParams& p, const ModelNodes& nodes,
                      int layer, const LempPlan& plan, NodeId z, NodeId messages) {
  if (plan.enhanced_empty) return t.spmm(plan.full, z);

  const int d = p.weights[layer].cols;
  std::vector<int> rows_i(d), rows_m(d), rows_j(d);
  for (int i = 0; i < d; ++i) {
    rows_i[i] = i;
    rows_m[i] = d + i;
    rows_j[i] = 2 * d + i;
  }
  // [z_i || z_msg || z_j] W_gate == z_i Wg[0:d] + z_msg Wg[d:2d] + z_j Wg[2d:3d];
  // computing the three products on node/pair matrices and gathering per
  // directed edge avoids materializing the concat for every edge
  NodeId zm = t.matmul(messages, nodes.projections[layer]);
  NodeId gi = t.matmul(z, t.row_gather(nodes.gates[layer], rows_i));
  NodeId gm = t.matmul(zm, t.row_gather(nodes.gates[layer], rows_m));
  NodeId gj = t.matmul(z, t.row_gather(nodes.gates[layer], rows_j));
  NodeId pre = t.add(t.add(t.row_gather(gi, plan.src), t.row_gather(gm, plan.msg_row)),
                     t.row_gather(gj, plan.dst));
  NodeId alpha = t.sigmoid(pre);

  NodeId zi = t.row_gather(z, plan.src);
  NodeId zj = t.row_gather(z, plan.dst);
  NodeId zme = t.row_gather(zm, plan.msg_row);
  NodeId mix = t.add(t.mul(alpha, zi), t.mul(t.affine(alpha, -1.0, 1.0), zj));
  NodeId msg = t.add(t.affine(zme, p.beta, 0.0), t.affine(mix, 1.0 - p.beta, 0.0));

  NodeId scattered =
      t.row_scatter_add(t.row_scale(msg, plan.weight), plan.dst, plan.plain->rows);
  return t.add(t.spmm(plan.plain, z), scattered);
}

}  // namespace

NodeId model_forward(Tape& t, ModelKind kind, const ModelParams& meta,
                     const ModelNodes& nodes, std::shared_ptr<const Csr> adj,
                     const Graph* g, const NormAdj* norm_adj,
                     const EnhancedEdgeSet* enhanced, NodeId x,
                     const ForwardOptions& opt) {
  LempPlan plan;
  NodeId messages;
  if (kind == ModelKind::Lemp) {
    if (!g || !norm_adj)
      throw std::invalid_argument("model_forward: lemp needs graph and adjacency");
    static const EnhancedEdgeSet kEmpty;
    const EnhancedEdgeSet& e = enhanced ? *enhanced : kEmpty;
    plan = build_lemp_plan(*g, *norm_adj, e);
    if (!plan.enhanced_empty) messages = t.leaf(e.messages, false);
  }
  if (kind == ModelKind::Gcn && !adj)
    throw std::invalid_argument("model_forward: gcn needs adjacency");

  NodeId h = x;
  for (int l = 0; l < meta.layers; ++l) {
    NodeId z = t.add_bias(t.matmul(h, nodes.weights[l]), nodes.biases[l]);
    switch (kind) {
      case ModelKind::Mlp: break;
      case ModelKind::Gcn: z = t.spmm(adj, z); break;
      case ModelKind::Lemp: z = lemp_aggregate(t, meta, nodes, l, plan, z, messages); break;
    }
    if (l + 1 < meta.layers) {
      h = t.relu(z);
      if (opt.training && opt.dropout > 0.0) {
        if (!opt.dropout_rng)
          throw std::invalid_argument("forward: dropout requires an rng");
        h = t.dropout(h, opt.dropout, *opt.dropout_rng);
      }
    } else {
      h = z;  // raw logits
    }
  }
  return h;
}

NodeId mlp_forward(Tape& t, const ModelParams& p, NodeId x,
                   const ForwardOptions& opt) {
  auto nodes = ModelNodes::leaves(t, p, false);
  return model_forward(t, ModelKind::Mlp, p, nodes, nullptr, nullptr, nullptr,
                       nullptr, x, opt);
}

NodeId gcn_forward(Tape& t, const ModelParams& p, std::shared_ptr<const Csr> adj,
                   NodeId x, const ForwardOptions& opt) {
  auto nodes = ModelNodes::leaves(t, p, false);
  return model_forward(t, ModelKind::Gcn, p, nodes, std::move(adj), nullptr,
                       nullptr, nullptr, x, opt);
}

NodeId lemp_forward(Tape& t, const ModelParams& p, const Graph& g,
                    const NormAdj& adj, NodeId x, const EnhancedEdgeSet& enhanced,
                    const ForwardOptions& opt) {
  auto nodes = ModelNodes::leaves(t, p, false);
  return model_forward(t, ModelKind::Lemp, p, nodes, nullptr, &g, &adj, &enhanced,
                       x, opt);
}

Tensor lemp_layer(const ModelParams& p, int layer, const NormAdj& adj,
                  const Graph& g, const Tensor& h_prev,
                  const EnhancedEdgeSet& enhanced, bool final_layer) {
  Tape t;
  auto nodes = ModelNodes::leaves(t, p, false);
  LempPlan plan = build_lemp_plan(g, adj, enhanced);
  NodeId messages;
  if (!plan.enhanced_empty) messages = t.leaf(enhanced.messages, false);
  NodeId h = t.leaf(h_prev, false);
  NodeId z = t.add_bias(t.matmul(h, nodes.weights[layer]), nodes.biases[layer]);
  NodeId agg = lemp_aggregate(t, p, nodes, layer, plan, z, messages);
  if (!final_layer) agg = t.relu(agg);
  return t.value(agg);
}

Tensor forward_values(const ModelParams& p, const Graph& g, const NormAdj& adj,
                      const Tensor& x, const EnhancedEdgeSet* enhanced) {
  Tape t;
  ForwardOptions opt;  // evaluation: dropout off
  NodeId xid = t.leaf(x, false);
  NodeId logits;
  static const EnhancedEdgeSet kEmpty;
  switch (p.kind) {
    case ModelKind::Mlp: logits = mlp_forward(t, p, xid, opt); break;
    case ModelKind::Gcn: logits = gcn_forward(t, p, to_csr(adj), xid, opt); break;
    case ModelKind::Lemp:
      logits = lemp_forward(t, p, g, adj, xid, enhanced ? *enhanced : kEmpty, opt);
      break;
  }
  return t.value(logits);
}

// --- training -----------------------------------------------------------------

int argmax_lowest(const double* row, int k) {
  int best = 0;
  for (int j = 1; j < k; ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

double accuracy_on_split(const Tensor& logits, const Graph& g, Split split) {
  int total = 0, correct = 0;
  for (int i = 0; i < g.n; ++i) {
    if (g.splits[i] != split) continue;
    if (g.labels[i] < 0)
      throw std::invalid_argument("accuracy_on_split: unlabeled node in split");
    ++total;
    if (argmax_lowest(logits.row(i), logits.cols) == g.labels[i]) ++correct;
  }
  if (total == 0) throw std::invalid_argument("accuracy_on_split: empty split");
  return static_cast<double>(correct) / total;
}

Trainer::Trainer(ModelKind kind, const Graph& g, const NormAdj& adj,
                 const Tensor& x, const TrainConfig& cfg, int msg_dim)
    : kind_(kind), g_(g), adj_(adj), adj_csr_(to_csr(adj)), x_(x), cfg_(cfg) {
  cfg_.validate();
  if (x.rows != g.n) throw std::invalid_argument("Trainer: features rows != n");
  for (int i = 0; i < g.n; ++i) {
    if (g.splits[i] == Split::Train) {
      if (g.labels[i] < 0) throw std::invalid_argument("Trainer: unlabeled train node");
      train_idx_.push_back(i);
      train_labels_.push_back(g.labels[i]);
    } else if (g.splits[i] == Split::Val) {
      if (g.labels[i] < 0) throw std::invalid_argument("Trainer: unlabeled val node");
      val_idx_.push_back(i);
      val_labels_.push_back(g.labels[i]);
    }
  }
  if (train_idx_.empty()) throw std::invalid_argument("Trainer: empty train split");
  if (val_idx_.empty()) throw std::invalid_argument("Trainer: empty val split");

  auto init_rng = make_rng(cfg_.seed, streams::kInit);
  params_ = ModelParams::init(kind, x.cols, cfg_.hidden, g.num_classes, cfg_.layers,
                              msg_dim, cfg_.beta, init_rng);
  enhanced_.msg_dim = msg_dim == 0 ? 0 : msg_dim;
  if (msg_dim > 0) enhanced_.messages = Tensor(0, msg_dim);
  dropout_rng_ = make_rng(cfg_.seed, streams::kDropout);

  for (Tensor* t : params_.trainable()) {
    adam_m_.emplace_back(t->rows, t->cols, 0.0);
    adam_v_.emplace_back(t->rows, t->cols, 0.0);
  }
}

void Trainer::insert_message(int u, int v, const std::vector<double>& embedding) {
  if (!g_.has_edge(u, v))
    throw std::invalid_argument("insert_message: pair is not an edge");
  enhanced_.insert(u, v, embedding, epoch_);
}

EpochMetrics Trainer::run_epoch() {
  ++epoch_;
  EpochMetrics metrics;

  auto run = [&](bool training, Tape& t, ModelNodes& nodes) {
    nodes = ModelNodes::leaves(t, params_, training);
    ForwardOptions opt;
    opt.training = training;
    opt.dropout = cfg_.dropout;
    opt.dropout_rng = &dropout_rng_;
    return model_forward(t, kind_, params_, nodes, adj_csr_, &g_, &adj_,
                         &enhanced_, t.leaf(x_, false), opt);
  };

  {
    Tape t(cfg_.float32);
    ModelNodes nodes;
    NodeId logits = run(true, t, nodes);
    NodeId loss =
        t.softmax_ce_mean(t.row_gather(logits, train_idx_), train_labels_);
    metrics.train_loss = t.value(loss).v[0];
    t.backward(loss);

    ++adam_t_;
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(adam_t_));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(adam_t_));
    auto flat = nodes.flat();
    auto tensors = params_.trainable();
    for (size_t i = 0; i < tensors.size(); ++i) {
      Tensor& p = *tensors[i];
      const bool touched = t.has_grad(flat[i]);
      const Tensor* grad = touched ? &t.grad(flat[i]) : nullptr;
      for (size_t j = 0; j < p.size(); ++j) {
        const double gj = touched ? grad->v[j] : 0.0;
        adam_m_[i].v[j] = b1 * adam_m_[i].v[j] + (1.0 - b1) * gj;
        adam_v_[i].v[j] = b2 * adam_v_[i].v[j] + (1.0 - b2) * gj * gj;
        const double mhat = adam_m_[i].v[j] / bc1;
        const double vhat = adam_v_[i].v[j] / bc2;
        p.v[j] -= cfg_.lr * (mhat / (std::sqrt(vhat) + eps) +
                             cfg_.weight_decay * p.v[j]);
        if (cfg_.float32) p.v[j] = static_cast<double>(static_cast<float>(p.v[j]));
      }
    }
  }

  {
    Tape t(cfg_.float32);
    ModelNodes nodes;
    NodeId logits = run(false, t, nodes);
    const Tensor& lv = t.value(logits);
    metrics.train_acc = accuracy_on_split(lv, g_, Split::Train);
    metrics.val_acc = accuracy_on_split(lv, g_, Split::Val);
    NodeId val_loss = t.softmax_ce_mean(t.row_gather(logits, val_idx_), val_labels_);
    metrics.val_loss = t.value(val_loss).v[0];
  }
  return metrics;
}

TrainResult train(ModelKind kind, const Graph& g, const NormAdj& adj,
                  const Tensor& x, const EnhancedEdgeSet* enhanced,
                  const TrainConfig& cfg) {
  Trainer tr(kind, g, adj, x, cfg, enhanced ? enhanced->msg_dim : 0);
  if (enhanced && !enhanced->empty()) tr.enhanced() = *enhanced;

  TrainResult res;
  res.best = tr.params();
  res.best_epoch = 0;
  double best_acc = -1.0;
  int since_best = 0;
  for (int e = 1; e <= cfg.max_epochs; ++e) {
    EpochMetrics m = tr.run_epoch();
    res.epochs.push_back(m);
    if (m.val_acc > best_acc) {
      best_acc = m.val_acc;
      res.best = tr.params();
      res.best_epoch = e;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return res;
}

double evaluate(const ModelParams& p, const Graph& g, const NormAdj& adj,
                const Tensor& x, const EnhancedEdgeSet* enhanced, Split split) {
  Tensor logits = forward_values(p, g, adj, x, enhanced);
  return accuracy_on_split(logits, g, split);
}

}  // namespace lemp
