#include "lemp/tape.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace lemp {

namespace {

// C (m×n) += A (m×k) · B (k×n)
void mm_acc(const double* A, int m, int k, const double* B, int n, double* C) {
  for (int i = 0; i < m; ++i) {
    const double* arow = A + static_cast<size_t>(i) * k;
    double* crow = C + static_cast<size_t>(i) * n;
    for (int l = 0; l < k; ++l) {
      const double a = arow[l];
      if (a == 0.0) continue;
      const double* brow = B + static_cast<size_t>(l) * n;
      for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
    }
  }
}

// out (k×n) += Aᵀ (k×m) · G (m×n), A given as m×k
void mm_at_g(const double* A, int m, int k, const double* G, int n, double* out) {
  for (int i = 0; i < m; ++i) {
    const double* arow = A + static_cast<size_t>(i) * k;
    const double* grow = G + static_cast<size_t>(i) * n;
    for (int l = 0; l < k; ++l) {
      const double a = arow[l];
      if (a == 0.0) continue;
      double* orow = out + static_cast<size_t>(l) * n;
      for (int j = 0; j < n; ++j) orow[j] += a * grow[j];
    }
  }
}

// out (m×k) += G (m×n) · Bᵀ (n×k), B given as k×n
void mm_g_bt(const double* G, int m, int n, const double* B, int k, double* out) {
  for (int i = 0; i < m; ++i) {
    const double* grow = G + static_cast<size_t>(i) * n;
    double* orow = out + static_cast<size_t>(i) * k;
    for (int l = 0; l < k; ++l) {
      const double* brow = B + static_cast<size_t>(l) * n;
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
      orow[l] += acc;
    }
  }
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::shared_ptr<const Csr> to_csr(const NormAdj& a) {
  auto c = std::make_shared<Csr>();
  c->rows = a.n;
  c->cols = a.n;
  c->row_ptr = a.row_ptr;
  c->col_idx = a.col_idx;
  c->val = a.val;
  return c;
}

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Tape::Node& Tape::at(NodeId id) {
  if (!id.valid() || id.i >= static_cast<int>(nodes_.size()))
    throw std::out_of_range("Tape: bad node id");
  return nodes_[id.i];
}

const Tape::Node& Tape::at(NodeId id) const {
  if (!id.valid() || id.i >= static_cast<int>(nodes_.size()))
    throw std::out_of_range("Tape: bad node id");
  return nodes_[id.i];
}

void Tape::round_f32(Tensor& t) const {
  if (!f32_) return;
  for (double& x : t.v) x = static_cast<double>(static_cast<float>(x));
}

void Tape::check_finite(const Tensor& t, const char* who) const {
#ifndef NDEBUG
  for (double x : t.v)
    if (!std::isfinite(x))
      throw std::domain_error(std::string("Tape: non-finite value in ") + who);
#else
  (void)t;
  (void)who;
#endif
}

NodeId Tape::leaf(Tensor value, bool requires_grad) {
  check_finite(value, "leaf");
  Node n;
  n.op = Op::Leaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return {push(std::move(n))};
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  const auto& A = at(a);
  const auto& B = at(b);
  if (A.value.cols != B.value.rows)
    throw std::invalid_argument("matmul: inner dimensions disagree");
  Node n;
  n.op = Op::MatMul;
  n.a = a.i;
  n.b = b.i;
  n.requires_grad = A.requires_grad || B.requires_grad;
  n.value = Tensor(A.value.rows, B.value.cols);
  mm_acc(A.value.v.data(), A.value.rows, A.value.cols, B.value.v.data(),
         B.value.cols, n.value.v.data());
  round_f32(n.value);
  check_finite(n.value, "matmul");
  return {push(std::move(n))};
}

NodeId Tape::spmm(std::shared_ptr<const Csr> s, NodeId x) {
  const auto& X = at(x);
  if (!s || s->cols != X.value.rows)
    throw std::invalid_argument("spmm: sparse columns != dense rows");
  Node n;
  n.op = Op::Spmm;
  n.a = x.i;
  n.sparse = std::move(s);
  n.requires_grad = X.requires_grad;
  const Csr& S = *n.sparse;
  const int c = X.value.cols;
  n.value = Tensor(S.rows, c);
  for (int i = 0; i < S.rows; ++i) {
    double* out = n.value.row(i);
    for (int p = S.row_ptr[i]; p < S.row_ptr[i + 1]; ++p) {
      const double w = S.val[p];
      const double* src = X.value.row(S.col_idx[p]);
      for (int j = 0; j < c; ++j) out[j] += w * src[j];
    }
  }
  round_f32(n.value);
  check_finite(n.value, "spmm");
  return {push(std::move(n))};
}

NodeId Tape::add_bias(NodeId x, NodeId bias) {
  const auto& X = at(x);
  const auto& B = at(bias);
  if (B.value.rows != 1 || B.value.cols != X.value.cols)
    throw std::invalid_argument("add_bias: bias must be 1×cols");
  Node n;
  n.op = Op::AddBias;
  n.a = x.i;
  n.b = bias.i;
  n.requires_grad = X.requires_grad || B.requires_grad;
  n.value = X.value;
  for (int i = 0; i < n.value.rows; ++i) {
    double* row = n.value.row(i);
    for (int j = 0; j < n.value.cols; ++j) row[j] += B.value.v[j];
  }
  round_f32(n.value);
  check_finite(n.value, "add_bias");
  return {push(std::move(n))};
}

NodeId Tape::add(NodeId a, NodeId b) {
  const auto& A = at(a);
  const auto& B = at(b);
  if (!A.value.same_shape(B.value)) throw std::invalid_argument("add: shape mismatch");
  Node n;
  n.op = Op::Add;
  n.a = a.i;
  n.b = b.i;
  n.requires_grad = A.requires_grad || B.requires_grad;
  n.value = A.value;
  for (size_t i = 0; i < n.value.size(); ++i) n.value.v[i] += B.value.v[i];
  round_f32(n.value);
  check_finite(n.value, "add");
  return {push(std::move(n))};
}

NodeId Tape::affine(NodeId x, double a, double b) {
  const auto& X = at(x);
  Node n;
  n.op = Op::Affine;
  n.a = x.i;
  n.c0 = a;
  n.c1 = b;
  n.requires_grad = X.requires_grad;
  n.value = X.value;
  for (double& v : n.value.v) v = a * v + b;
  round_f32(n.value);
  check_finite(n.value, "affine");
  return {push(std::move(n))};
}

NodeId Tape::sigmoid(NodeId x) {
  const auto& X = at(x);
  Node n;
  n.op = Op::Sigmoid;
  n.a = x.i;
  n.requires_grad = X.requires_grad;
  n.value = X.value;
  for (double& v : n.value.v) v = sigmoid_scalar(v);
  round_f32(n.value);
  check_finite(n.value, "sigmoid");
  return {push(std::move(n))};
}

NodeId Tape::relu(NodeId x) {
  const auto& X = at(x);
  Node n;
  n.op = Op::Relu;
  n.a = x.i;
  n.requires_grad = X.requires_grad;
  n.value = X.value;
  for (double& v : n.value.v) v = v > 0.0 ? v : 0.0;
  round_f32(n.value);
  check_finite(n.value, "relu");
  return {push(std::move(n))};
}

NodeId Tape::dropout(NodeId x, double p, std::mt19937_64& rng) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0,1)");
  const auto& X = at(x);
  Node n;
  n.op = Op::Dropout;
  n.a = x.i;
  n.requires_grad = X.requires_grad;
  n.value = X.value;
  n.scale.resize(X.value.size());
  const double keep = 1.0 - p;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (size_t i = 0; i < n.scale.size(); ++i) {
    n.scale[i] = u(rng) < p ? 0.0 : 1.0 / keep;
    n.value.v[i] *= n.scale[i];
  }
  round_f32(n.value);
  check_finite(n.value, "dropout");
  return {push(std::move(n))};
}

NodeId Tape::mul(NodeId a, NodeId b) {
  const auto& A = at(a);
  const auto& B = at(b);
  if (!A.value.same_shape(B.value)) throw std::invalid_argument("mul: shape mismatch");
  Node n;
  n.op = Op::Mul;
  n.a = a.i;
  n.b = b.i;
  n.requires_grad = A.requires_grad || B.requires_grad;
  n.value = A.value;
  for (size_t i = 0; i < n.value.size(); ++i) n.value.v[i] *= B.value.v[i];
  round_f32(n.value);
  check_finite(n.value, "mul");
  return {push(std::move(n))};
}

NodeId Tape::hconcat(NodeId a, NodeId b) {
  const auto& A = at(a);
  const auto& B = at(b);
  if (A.value.rows != B.value.rows) throw std::invalid_argument("hconcat: row mismatch");
  Node n;
  n.op = Op::HConcat;
  n.a = a.i;
  n.b = b.i;
  n.requires_grad = A.requires_grad || B.requires_grad;
  n.value = Tensor(A.value.rows, A.value.cols + B.value.cols);
  for (int i = 0; i < A.value.rows; ++i) {
    std::memcpy(n.value.row(i), A.value.row(i), sizeof(double) * A.value.cols);
    std::memcpy(n.value.row(i) + A.value.cols, B.value.row(i),
                sizeof(double) * B.value.cols);
  }
  round_f32(n.value);
  return {push(std::move(n))};
}

NodeId Tape::row_gather(NodeId x, std::vector<int> idx) {
  const auto& X = at(x);
  for (int r : idx)
    if (r < 0 || r >= X.value.rows) throw std::out_of_range("row_gather: index out of range");
  Node n;
  n.op = Op::RowGather;
  n.a = x.i;
  n.requires_grad = X.requires_grad;
  n.value = Tensor(static_cast<int>(idx.size()), X.value.cols);
  for (size_t r = 0; r < idx.size(); ++r)
    std::memcpy(n.value.row(static_cast<int>(r)), X.value.row(idx[r]),
                sizeof(double) * X.value.cols);
  n.indices = std::move(idx);
  return {push(std::move(n))};
}

NodeId Tape::row_scatter_add(NodeId x, std::vector<int> idx, int out_rows) {
  const auto& X = at(x);
  if (static_cast<int>(idx.size()) != X.value.rows)
    throw std::invalid_argument("row_scatter_add: index count != rows");
  for (int r : idx)
    if (r < 0 || r >= out_rows) throw std::out_of_range("row_scatter_add: target out of range");
  Node n;
  n.op = Op::RowScatterAdd;
  n.a = x.i;
  n.scatter_rows = out_rows;
  n.requires_grad = X.requires_grad;
  n.value = Tensor(out_rows, X.value.cols);
  for (size_t r = 0; r < idx.size(); ++r) {
    double* out = n.value.row(idx[r]);
    const double* src = X.value.row(static_cast<int>(r));
    for (int j = 0; j < X.value.cols; ++j) out[j] += src[j];
  }
  n.indices = std::move(idx);
  round_f32(n.value);
  check_finite(n.value, "row_scatter_add");
  return {push(std::move(n))};
}

NodeId Tape::row_scale(NodeId x, std::vector<double> w) {
  const auto& X = at(x);
  if (static_cast<int>(w.size()) != X.value.rows)
    throw std::invalid_argument("row_scale: weight count != rows");
  Node n;
  n.op = Op::RowScale;
  n.a = x.i;
  n.requires_grad = X.requires_grad;
  n.value = X.value;
  for (int i = 0; i < n.value.rows; ++i) {
    double* row = n.value.row(i);
    for (int j = 0; j < n.value.cols; ++j) row[j] *= w[i];
  }
  n.scale = std::move(w);
  round_f32(n.value);
  check_finite(n.value, "row_scale");
  return {push(std::move(n))};
}

NodeId Tape::softmax_ce_mean(NodeId logits, std::vector<int> labels) {
  const auto& L = at(logits);
  if (static_cast<int>(labels.size()) != L.value.rows)
    throw std::invalid_argument("softmax_ce_mean: one label per row required");
  if (L.value.rows == 0) throw std::invalid_argument("softmax_ce_mean: empty batch");
  for (int y : labels)
    if (y < 0 || y >= L.value.cols) throw std::out_of_range("softmax_ce_mean: label out of range");
  Node n;
  n.op = Op::SoftmaxCeMean;
  n.a = logits.i;
  n.requires_grad = L.requires_grad;
  n.probs.resize(L.value.size());
  const int k = L.value.cols;
  double loss = 0.0;
  for (int i = 0; i < L.value.rows; ++i) {
    const double* row = L.value.row(i);
    double mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    loss += lse - row[labels[i]];
    double* p = n.probs.data() + static_cast<size_t>(i) * k;
    for (int j = 0; j < k; ++j) p[j] = std::exp(row[j] - lse);
  }
  n.value = Tensor(1, 1, loss / L.value.rows);
  n.indices = std::move(labels);
  round_f32(n.value);
  check_finite(n.value, "softmax_ce_mean");
  return {push(std::move(n))};
}

Tensor& Tape::grad_buf(int i) {
  Node& n = nodes_[i];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.rows, n.value.cols);
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(NodeId loss) {
  Node& top = at(loss);
  if (top.value.rows != 1 || top.value.cols != 1)
    throw std::invalid_argument("backward: loss must be scalar");
  if (backward_done_)
    throw std::logic_error("backward: tape already consumed; reset() first");
  if (!top.requires_grad) return;
  backward_done_ = true;
  grad_buf(loss.i).v[0] = 1.0;

  for (int i = loss.i; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.has_grad || n.op == Op::Leaf) continue;
    const Tensor& g = n.grad;
    const bool need_a = n.a >= 0 && nodes_[n.a].requires_grad;
    const bool need_b = n.b >= 0 && nodes_[n.b].requires_grad;
    switch (n.op) {
      case Op::MatMul: {
        const Node& A = nodes_[n.a];
        const Node& B = nodes_[n.b];
        if (need_a)
          mm_g_bt(g.v.data(), g.rows, g.cols, B.value.v.data(), A.value.cols,
                  grad_buf(n.a).v.data());
        if (need_b)
          mm_at_g(A.value.v.data(), A.value.rows, A.value.cols, g.v.data(), g.cols,
                  grad_buf(n.b).v.data());
        break;
      }
      case Op::Spmm: {
        if (!need_a) break;
        Tensor& gx = grad_buf(n.a);
        const Csr& S = *n.sparse;
        for (int r = 0; r < S.rows; ++r) {
          const double* grow = g.row(r);
          for (int p = S.row_ptr[r]; p < S.row_ptr[r + 1]; ++p) {
            double* dst = gx.row(S.col_idx[p]);
            const double w = S.val[p];
            for (int j = 0; j < g.cols; ++j) dst[j] += w * grow[j];
          }
        }
        break;
      }
      case Op::AddBias: {
        if (need_a) {
          Tensor& ga = grad_buf(n.a);
          for (size_t j = 0; j < g.size(); ++j) ga.v[j] += g.v[j];
        }
        if (need_b) {
          Tensor& gb = grad_buf(n.b);
          for (int r = 0; r < g.rows; ++r) {
            const double* grow = g.row(r);
            for (int j = 0; j < g.cols; ++j) gb.v[j] += grow[j];
          }
        }
        break;
      }
      case Op::Add: {
        if (need_a) {
          Tensor& ga = grad_buf(n.a);
          for (size_t j = 0; j < g.size(); ++j) ga.v[j] += g.v[j];
        }
        if (need_b) {
          Tensor& gb = grad_buf(n.b);
          for (size_t j = 0; j < g.size(); ++j) gb.v[j] += g.v[j];
        }
        break;
      }
      case Op::Affine: {
        if (!need_a) break;
        Tensor& ga = grad_buf(n.a);
        for (size_t j = 0; j < g.size(); ++j) ga.v[j] += n.c0 * g.v[j];
        break;
      }
      case Op::Sigmoid: {
        if (!need_a) break;
        Tensor& ga = grad_buf(n.a);
        for (size_t j = 0; j < g.size(); ++j) {
          const double s = n.value.v[j];
          ga.v[j] += g.v[j] * s * (1.0 - s);
        }
        break;
      }
      case Op::Relu: {
        if (!need_a) break;
        Tensor& ga = grad_buf(n.a);
        for (size_t j = 0; j < g.size(); ++j)
          if (n.value.v[j] > 0.0) ga.v[j] += g.v[j];
        break;
      }
      case Op::Dropout: {
        if (!need_a) break;
        Tensor& ga = grad_buf(n.a);
        for (size_t j = 0; j < g.size(); ++j) ga.v[j] += g.v[j] * n.scale[j];
        break;
      }
      case Op::Mul: {
        const Node& A = nodes_[n.a];
        const Node& B = nodes_[n.b];
        if (need_a) {
          Tensor& ga = grad_buf(n.a);
          for (size_t j = 0; j < g.size(); ++j) ga.v[j] += g.v[j] * B.value.v[j];
        }
        if (need_b) {
          Tensor& gb = grad_buf(n.b);
          for (size_t j = 0; j < g.size(); ++j) gb.v[j] += g.v[j] * A.value.v[j];
        }
        break;
      }
      case Op::HConcat: {
        const Node& A = nodes_[n.a];
        const int ca = A.value.cols;
        const int cb = g.cols - ca;
        if (need_a) {
          Tensor& ga = grad_buf(n.a);
          for (int r = 0; r < g.rows; ++r)
            for (int j = 0; j < ca; ++j) ga.at(r, j) += g.at(r, j);
        }
        if (need_b) {
          Tensor& gb = grad_buf(n.b);
          for (int r = 0; r < g.rows; ++r)
            for (int j = 0; j < cb; ++j) gb.at(r, j) += g.at(r, ca + j);
        }
        break;
      }
      case Op::RowGather: {
        if (!need_a) break;
        Tensor& ga = grad_buf(n.a);
        for (size_t r = 0; r < n.indices.size(); ++r) {
          double* dst = ga.row(n.indices[r]);
          const double* src = g.row(static_cast<int>(r));
          for (int j = 0; j < g.cols; ++j) dst[j] += src[j];
        }
        break;
      }
      case Op::RowScatterAdd: {
        if (!need_a) break;
        Tensor& ga = grad_buf(n.a);
        for (size_t r = 0; r < n.indices.size(); ++r) {
          double* dst = ga.row(static_cast<int>(r));
          const double* src = g.row(n.indices[r]);
          for (int j = 0; j < g.cols; ++j) dst[j] += src[j];
        }
        break;
      }
      case Op::RowScale: {
        if (!need_a) break;
        Tensor& ga = grad_buf(n.a);
        for (int r = 0; r < g.rows; ++r) {
          double* dst = ga.row(r);
          const double* src = g.row(r);
          for (int j = 0; j < g.cols; ++j) dst[j] += n.scale[r] * src[j];
        }
        break;
      }
      case Op::SoftmaxCeMean: {
        if (!need_a) break;
        Tensor& ga = grad_buf(n.a);
        const double upstream = g.v[0] / ga.rows;
        for (int r = 0; r < ga.rows; ++r) {
          double* dst = ga.row(r);
          const double* p = n.probs.data() + static_cast<size_t>(r) * ga.cols;
          for (int j = 0; j < ga.cols; ++j) dst[j] += upstream * p[j];
          dst[n.indices[r]] -= upstream;
        }
        break;
      }
      case Op::Leaf:
        break;
    }
  }
}

const Tensor& Tape::value(NodeId id) const { return at(id).value; }

const Tensor& Tape::grad(NodeId id) const {
  const Node& n = at(id);
  if (!n.requires_grad)
    throw std::logic_error("Tape::grad: node does not require gradients");
  if (!n.has_grad)
    throw std::logic_error("Tape::grad: backward() has not reached this node");
  return n.grad;
}

bool Tape::has_grad(NodeId id) const { return at(id).has_grad; }

bool Tape::requires_grad(NodeId id) const { return at(id).requires_grad; }

void Tape::reset() {
  nodes_.clear();
  backward_done_ = false;
}

FiniteDiffResult finite_diff_check(const TapeProgram& f,
                                   const std::vector<Tensor>& params,
                                   double step) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<NodeId> leaves;
    leaves.reserve(params.size());
    for (const auto& p : params) leaves.push_back(tape.leaf(p, true));
    NodeId loss = f(tape, leaves);
    tape.backward(loss);
    for (auto id : leaves) analytic.push_back(tape.grad(id));
  }

  auto eval = [&](const std::vector<Tensor>& pts) {
    Tape tape;
    std::vector<NodeId> leaves;
    for (const auto& p : pts) leaves.push_back(tape.leaf(p, false));
    // forward-only still needs a gradient path to build the loss node
    NodeId loss = f(tape, leaves);
    return tape.value(loss).v[0];
  };

  FiniteDiffResult res;
  std::vector<Tensor> work = params;
  for (size_t p = 0; p < params.size(); ++p) {
    for (size_t i = 0; i < params[p].size(); ++i) {
      const double orig = work[p].v[i];
      work[p].v[i] = orig + step;
      const double up = eval(work);
      work[p].v[i] = orig - step;
      const double down = eval(work);
      work[p].v[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double rel =
          std::abs(analytic[p].v[i] - numeric) / std::max(1e-8, std::abs(numeric));
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = static_cast<int>(p);
        res.worst_entry = static_cast<int>(i);
      }
    }
  }
  return res;
}

}  // namespace lemp
