#pragma once

#include <functional>
#include <memory>
#include <random>
#include <vector>

#include "lemp/graph.hpp"
#include "lemp/tensor.hpp"

namespace lemp {

/// Compressed-row sparse matrix used as a constant operand of spmm.
struct Csr {
  int rows = 0;
  int cols = 0;
  std::vector<int> row_ptr;
  std::vector<int> col_idx;
  std::vector<double> val;
};

std::shared_ptr<const Csr> to_csr(const NormAdj& a);

struct NodeId {
  int i = -1;
  bool valid() const { return i >= 0; }
};

/// Eager reverse-mode tape over the primitive set needed by the 2-layer
/// MLP/GCN/LEMP family. Each call computes the forward value immediately
/// and records enough state for the backward rule. backward() traverses in
/// exact reverse recording order and leaves gradients on every
/// requires-grad node; leaves that do not require gradients never get a
/// gradient buffer.
///
/// A tape is single-owner and built for one forward/backward cycle;
/// reset() makes it reusable.
class Tape {
 public:
  explicit Tape(bool emulate_float32 = false) : f32_(emulate_float32) {}

  NodeId leaf(Tensor value, bool requires_grad);

  NodeId matmul(NodeId a, NodeId b);
  /// Sparse (constant) times dense: out = S · x.
  NodeId spmm(std::shared_ptr<const Csr> s, NodeId x);
  /// Broadcast-add a 1×c bias row to every row of x.
  NodeId add_bias(NodeId x, NodeId bias);
  NodeId add(NodeId a, NodeId b);
  /// Elementwise a*x + b with scalar constants.
  NodeId affine(NodeId x, double a, double b);
  NodeId sigmoid(NodeId x);
  NodeId relu(NodeId x);
  /// Zeroes units with probability p and scales survivors by 1/(1-p).
  /// The mask is drawn from `rng` at record time.
  NodeId dropout(NodeId x, double p, std::mt19937_64& rng);
  NodeId mul(NodeId a, NodeId b);
  NodeId hconcat(NodeId a, NodeId b);
  /// out.row(r) = x.row(idx[r]).
  NodeId row_gather(NodeId x, std::vector<int> idx);
  /// out has `out_rows` rows; out.row(idx[r]) += x.row(r).
  NodeId row_scatter_add(NodeId x, std::vector<int> idx, int out_rows);
  /// out.row(r) = w[r] * x.row(r) with constant weights.
  NodeId row_scale(NodeId x, std::vector<double> w);
  /// Mean softmax cross-entropy over rows; labels[r] in [0, cols).
  NodeId softmax_ce_mean(NodeId logits, std::vector<int> labels);

  void backward(NodeId loss);

  const Tensor& value(NodeId id) const;
  const Tensor& grad(NodeId id) const;
  /// True when backward() deposited a gradient here (a requires-grad leaf
  /// that the loss never touched legitimately has none).
  bool has_grad(NodeId id) const;
  bool requires_grad(NodeId id) const;

  void reset();
  size_t num_nodes() const { return nodes_.size(); }

 private:
  enum class Op {
    Leaf, MatMul, Spmm, AddBias, Add, Affine, Sigmoid, Relu,
    Dropout, Mul, HConcat, RowGather, RowScatterAdd, RowScale, SoftmaxCeMean
  };

  struct Node {
    Op op = Op::Leaf;
    int a = -1, b = -1;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    double c0 = 0.0, c1 = 0.0;          // affine coefficients
    std::vector<double> scale;          // dropout mask / row weights
    std::vector<int> indices;           // gather/scatter rows, CE labels
    int scatter_rows = 0;
    std::shared_ptr<const Csr> sparse;
    std::vector<double> probs;          // softmax cache for CE backward
  };

  int push(Node n);
  Node& at(NodeId id);
  const Node& at(NodeId id) const;
  Tensor& grad_buf(int i);
  void round_f32(Tensor& t) const;
  void check_finite(const Tensor& t, const char* who) const;

  std::vector<Node> nodes_;
  bool f32_ = false;
  bool backward_done_ = false;
};

/// Builds a scalar loss from leaf tensors; used by finite_diff_check.
using TapeProgram = std::function<NodeId(Tape&, const std::vector<NodeId>&)>;

struct FiniteDiffResult {
  double max_rel_err = 0.0;
  int worst_param = -1;
  int worst_entry = -1;
};

/// Central-difference check of the tape gradients of `f` at `params`.
/// f must be deterministic across calls (fix any dropout seeds inside).
/// Returns max over all parameter entries of
/// |analytic - numeric| / max(1e-8, |numeric|).
FiniteDiffResult finite_diff_check(const TapeProgram& f,
                                   const std::vector<Tensor>& params,
                                   double step = 1e-5);

}  // namespace lemp
