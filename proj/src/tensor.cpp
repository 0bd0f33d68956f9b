// SPDX-License-Identifier: Apache-2.0
#include "passmatch/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace passmatch {

namespace {

std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("tensor: negative dimension in " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

void check_rank(const Tensor& t, int rank, const char* op) {
  if (t.rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got shape " + shape_string(t.shape()));
  }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                " vs " + shape_string(b.shape()));
  }
}

thread_local std::vector<Tape*> g_tape_stack;
thread_local int g_pause_depth = 0;

// Lazily sized gradient buffer; nullptr when the tensor does not track grads.
std::vector<Scalar>* grad_buf(const std::shared_ptr<TensorImpl>& t) {
  if (!t->requires_grad) return nullptr;
  if (t->grad.empty()) t->grad.assign(t->data.size(), Scalar(0));
  return &t->grad;
}

bool track(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::recording()) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

void record(Tensor& out, std::vector<std::shared_ptr<TensorImpl>> inputs,
            std::function<void()> backward_fn) {
  out.impl()->requires_grad = true;
  Tape::active()->push(std::move(inputs), out.impl(), std::move(backward_fn));
}

// C[m x n] += A[m x k] * B[k x n]. i-k-j order keeps the inner loop contiguous.
void matmul_acc(const Scalar* a, const Scalar* b, Scalar* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const Scalar* arow = a + static_cast<std::size_t>(i) * k;
    Scalar* crow = c + static_cast<std::size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const Scalar av = arow[kk];
      if (av == Scalar(0)) continue;
      const Scalar* brow = b + static_cast<std::size_t>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

std::vector<Scalar> transposed(const std::vector<Scalar>& a, int rows, int cols) {
  std::vector<Scalar> t(a.size());
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      t[static_cast<std::size_t>(j) * rows + i] = a[static_cast<std::size_t>(i) * cols + j];
  return t;
}

thread_local Scalar g_min_abs_relu_input = std::numeric_limits<Scalar>::infinity();

}  // namespace

// ==================== Tensor ====================

std::string shape_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  Tensor t;
  t.impl_->data.assign(shape_numel(shape), Scalar(0));
  t.impl_->shape = std::move(shape);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(std::vector<int> shape, Scalar value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

Tensor Tensor::from_vector(std::vector<int> shape, std::vector<Scalar> values,
                           bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw std::invalid_argument("from_vector: " + std::to_string(values.size()) +
                                " values for shape " + shape_string(shape));
  }
  Tensor t;
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(values);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from_values(std::initializer_list<Scalar> values, bool requires_grad) {
  return from_vector({static_cast<int>(values.size())}, std::vector<Scalar>(values), requires_grad);
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<Scalar>> rows,
                         bool requires_grad) {
  const int m = static_cast<int>(rows.size());
  const int n = m ? static_cast<int>(rows.begin()->size()) : 0;
  std::vector<Scalar> flat;
  flat.reserve(static_cast<std::size_t>(m) * n);
  for (const auto& r : rows) {
    if (static_cast<int>(r.size()) != n)
      throw std::invalid_argument("from_rows: ragged rows");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return from_vector({m, n}, std::move(flat), requires_grad);
}

Tensor Tensor::randn(std::vector<int> shape, std::mt19937_64& rng, Scalar stddev,
                     bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::normal_distribution<Scalar> dist(Scalar(0), stddev);
  for (Scalar& v : t.impl_->data) v = dist(rng);
  return t;
}

Tensor Tensor::identity(int n, bool requires_grad) {
  Tensor t = zeros({n, n}, requires_grad);
  for (int i = 0; i < n; ++i) t.impl_->data[static_cast<std::size_t>(i) * n + i] = Scalar(1);
  return t;
}

int Tensor::dim(int i) const {
  if (i < 0 || i >= rank())
    throw std::invalid_argument("dim: index " + std::to_string(i) + " for shape " +
                                shape_string(shape()));
  return impl_->shape[static_cast<std::size_t>(i)];
}

Scalar Tensor::item() const {
  if (numel() != 1)
    throw std::invalid_argument("item: tensor of shape " + shape_string(shape()) +
                                " is not a scalar");
  return impl_->data[0];
}

Scalar Tensor::at(int i) const {
  check_rank(*this, 1, "at");
  return impl_->data.at(static_cast<std::size_t>(i));
}

Scalar Tensor::at(int r, int c) const {
  check_rank(*this, 2, "at");
  return impl_->data.at(static_cast<std::size_t>(r) * cols() + c);
}

std::span<const Scalar> Tensor::grad() const {
  if (impl_->grad.empty())
    throw std::runtime_error("grad: not populated (run backward first)");
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.assign(impl_->data.size(), Scalar(0)); }

// ==================== Tape ====================

Tape::Tape() { g_tape_stack.push_back(this); }

Tape::~Tape() {
  // Tapes must unwind in LIFO order; this holds for scoped usage.
  if (!g_tape_stack.empty() && g_tape_stack.back() == this) g_tape_stack.pop_back();
}

Tape* Tape::active() { return g_tape_stack.empty() ? nullptr : g_tape_stack.back(); }

bool Tape::recording() { return !g_tape_stack.empty() && g_pause_depth == 0; }

void Tape::push(std::vector<std::shared_ptr<TensorImpl>> inputs,
                std::shared_ptr<TensorImpl> output, std::function<void()> backward_fn) {
  entries_.push_back({std::move(inputs), std::move(output), std::move(backward_fn)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss has shape " + shape_string(loss.shape()) +
                                ", expected a scalar");
  if (consumed_)
    throw std::runtime_error("backward: tape already consumed; run a new forward pass");
  consumed_ = true;
  loss.impl()->grad.assign(1, Scalar(1));
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // not on the path to the loss
    it->backward_fn();
  }
}

void Tape::reset() {
  entries_.clear();
  consumed_ = false;
}

Tape::Pause::Pause() { ++g_pause_depth; }
Tape::Pause::~Pause() { --g_pause_depth; }

void backward(const Tensor& loss) {
  Tape* t = Tape::active();
  if (!t) throw std::runtime_error("backward: no active tape");
  t->backward(loss);
}

// ==================== RelevanceTargets ====================

RelevanceTargets RelevanceTargets::diagonal(int n) {
  if (n <= 0) throw std::invalid_argument("RelevanceTargets: n must be positive");
  RelevanceTargets t;
  t.n_rows = t.n_cols = n;
  t.target_col.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) t.target_col[static_cast<std::size_t>(i)] = i;
  return t;
}

RelevanceTargets RelevanceTargets::from_one_hot(const Tensor& one_hot) {
  check_rank(one_hot, 2, "RelevanceTargets");
  RelevanceTargets t;
  t.n_rows = one_hot.rows();
  t.n_cols = one_hot.cols();
  for (int r = 0; r < t.n_rows; ++r) {
    int hit = -1;
    for (int c = 0; c < t.n_cols; ++c) {
      const Scalar v = one_hot.at(r, c);
      if (v == Scalar(1)) {
        if (hit >= 0)
          throw std::invalid_argument("RelevanceTargets: row " + std::to_string(r) +
                                      " has multiple targets");
        hit = c;
      } else if (v != Scalar(0)) {
        throw std::invalid_argument("RelevanceTargets: row " + std::to_string(r) +
                                    " holds a value other than 0/1");
      }
    }
    if (hit < 0)
      throw std::invalid_argument("RelevanceTargets: row " + std::to_string(r) + " has no target");
    t.target_col.push_back(hit);
  }
  return t;
}

// ==================== Elementwise ====================

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i)
    out.impl()->data[i] = a.impl()->data[i] + b.impl()->data[i];
  if (track({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    record(out, {ai, bi}, [ai, bi, oi] {
      if (auto* g = grad_buf(ai))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += oi->grad[i];
      if (auto* g = grad_buf(bi))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += oi->grad[i];
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i)
    out.impl()->data[i] = a.impl()->data[i] - b.impl()->data[i];
  if (track({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    record(out, {ai, bi}, [ai, bi, oi] {
      if (auto* g = grad_buf(ai))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += oi->grad[i];
      if (auto* g = grad_buf(bi))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= oi->grad[i];
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i)
    out.impl()->data[i] = a.impl()->data[i] * b.impl()->data[i];
  if (track({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    record(out, {ai, bi}, [ai, bi, oi] {
      if (auto* g = grad_buf(ai))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += oi->grad[i] * bi->data[i];
      if (auto* g = grad_buf(bi))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += oi->grad[i] * ai->data[i];
    });
  }
  return out;
}

Tensor scale(const Tensor& a, Scalar s) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out.impl()->data[i] = a.impl()->data[i] * s;
  if (track({&a})) {
    auto ai = a.impl(), oi = out.impl();
    record(out, {ai}, [ai, oi, s] {
      if (auto* g = grad_buf(ai))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += oi->grad[i] * s;
    });
  }
  return out;
}

Tensor add_scalar(const Tensor& a, Scalar s) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out.impl()->data[i] = a.impl()->data[i] + s;
  if (track({&a})) {
    auto ai = a.impl(), oi = out.impl();
    record(out, {ai}, [ai, oi] {
      if (auto* g = grad_buf(ai))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += oi->grad[i];
    });
  }
  return out;
}

// ==================== Linear algebra ====================

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank(a, 2, "matmul");
  check_rank(b, 2, "matmul");
  const int m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw std::invalid_argument("matmul: inner dimensions mismatch " + shape_string(a.shape()) +
                                " x " + shape_string(b.shape()));
  Tensor out = Tensor::zeros({m, n});
  matmul_acc(a.data().data(), b.data().data(), out.mutable_data().data(), m, k, n);
  if (track({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    record(out, {ai, bi}, [ai, bi, oi, m, k, n] {
      if (auto* g = grad_buf(ai)) {
        const std::vector<Scalar> bt = transposed(bi->data, k, n);  // [n x k]
        matmul_acc(oi->grad.data(), bt.data(), g->data(), m, n, k);
      }
      if (auto* g = grad_buf(bi)) {
        const std::vector<Scalar> at = transposed(ai->data, m, k);  // [k x m]
        matmul_acc(at.data(), oi->grad.data(), g->data(), k, m, n);
      }
    });
  }
  return out;
}

Tensor matvec(const Tensor& a, const Tensor& x) {
  check_rank(a, 2, "matvec");
  check_rank(x, 1, "matvec");
  const int m = a.rows(), n = a.cols();
  if (x.dim(0) != n)
    throw std::invalid_argument("matvec: dimensions mismatch " + shape_string(a.shape()) + " x " +
                                shape_string(x.shape()));
  Tensor out = Tensor::zeros({m});
  for (int i = 0; i < m; ++i) {
    Scalar acc = 0;
    const Scalar* arow = a.data().data() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) acc += arow[j] * x.impl()->data[static_cast<std::size_t>(j)];
    out.impl()->data[static_cast<std::size_t>(i)] = acc;
  }
  if (track({&a, &x})) {
    auto ai = a.impl(), xi = x.impl(), oi = out.impl();
    record(out, {ai, xi}, [ai, xi, oi, m, n] {
      if (auto* g = grad_buf(ai)) {
        for (int i = 0; i < m; ++i) {
          const Scalar go = oi->grad[static_cast<std::size_t>(i)];
          Scalar* grow = g->data() + static_cast<std::size_t>(i) * n;
          for (int j = 0; j < n; ++j) grow[j] += go * xi->data[static_cast<std::size_t>(j)];
        }
      }
      if (auto* g = grad_buf(xi)) {
        for (int i = 0; i < m; ++i) {
          const Scalar go = oi->grad[static_cast<std::size_t>(i)];
          const Scalar* arow = ai->data.data() + static_cast<std::size_t>(i) * n;
          for (int j = 0; j < n; ++j) (*g)[static_cast<std::size_t>(j)] += go * arow[j];
        }
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  check_rank(a, 2, "transpose");
  const int m = a.rows(), n = a.cols();
  Tensor out = Tensor::from_vector({n, m}, transposed(a.impl()->data, m, n));
  if (track({&a})) {
    auto ai = a.impl(), oi = out.impl();
    record(out, {ai}, [ai, oi, m, n] {
      if (auto* g = grad_buf(ai)) {
        const std::vector<Scalar> gt = transposed(oi->grad, n, m);
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += gt[i];
      }
    });
  }
  return out;
}

Tensor dot(const Tensor& a, const Tensor& b) {
  check_rank(a, 1, "dot");
  check_rank(b, 1, "dot");
  check_same_shape(a, b, "dot");
  Scalar acc = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += a.impl()->data[i] * b.impl()->data[i];
  Tensor out = Tensor::from_vector({1}, {acc});
  if (track({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    record(out, {ai, bi}, [ai, bi, oi] {
      const Scalar go = oi->grad[0];
      if (auto* g = grad_buf(ai))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += go * bi->data[i];
      if (auto* g = grad_buf(bi))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += go * ai->data[i];
    });
  }
  return out;
}

// ==================== Nonlinearities ====================

Tensor relu(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const Scalar v = a.impl()->data[i];
    g_min_abs_relu_input = std::min(g_min_abs_relu_input, std::abs(v));
    out.impl()->data[i] = v > Scalar(0) ? v : Scalar(0);
  }
  if (track({&a})) {
    auto ai = a.impl(), oi = out.impl();
    record(out, {ai}, [ai, oi] {
      if (auto* g = grad_buf(ai))
        for (std::size_t i = 0; i < g->size(); ++i)
          if (ai->data[i] > Scalar(0)) (*g)[i] += oi->grad[i];
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i)
    out.impl()->data[i] = Scalar(1) / (Scalar(1) + std::exp(-a.impl()->data[i]));
  if (track({&a})) {
    auto ai = a.impl(), oi = out.impl();
    record(out, {ai}, [ai, oi] {
      if (auto* g = grad_buf(ai))
        for (std::size_t i = 0; i < g->size(); ++i) {
          const Scalar s = oi->data[i];
          (*g)[i] += oi->grad[i] * s * (Scalar(1) - s);
        }
    });
  }
  return out;
}

Tensor tanh(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out.impl()->data[i] = std::tanh(a.impl()->data[i]);
  if (track({&a})) {
    auto ai = a.impl(), oi = out.impl();
    record(out, {ai}, [ai, oi] {
      if (auto* g = grad_buf(ai))
        for (std::size_t i = 0; i < g->size(); ++i) {
          const Scalar t = oi->data[i];
          (*g)[i] += oi->grad[i] * (Scalar(1) - t * t);
        }
    });
  }
  return out;
}

// ==================== Softmax / loss ====================

namespace {
// softmax into out[offset .. offset+n); subtracts the row max for stability.
void softmax_span(const Scalar* in, Scalar* out, std::size_t n) {
  Scalar mx = in[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, in[i]);
  Scalar sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(in[i] - mx);
    sum += out[i];
  }
  for (std::size_t i = 0; i < n; ++i) out[i] /= sum;
}

void softmax_backward_span(const Scalar* y, const Scalar* gy, Scalar* gx, std::size_t n) {
  Scalar dotv = 0;
  for (std::size_t i = 0; i < n; ++i) dotv += gy[i] * y[i];
  for (std::size_t i = 0; i < n; ++i) gx[i] += y[i] * (gy[i] - dotv);
}
}  // namespace

Tensor softmax_rows(const Tensor& a) {
  check_rank(a, 2, "softmax_rows");
  if (a.cols() == 0) throw std::invalid_argument("softmax_rows: zero columns");
  const int m = a.rows(), n = a.cols();
  Tensor out = Tensor::zeros(a.shape());
  for (int r = 0; r < m; ++r)
    softmax_span(a.data().data() + static_cast<std::size_t>(r) * n,
                 out.mutable_data().data() + static_cast<std::size_t>(r) * n,
                 static_cast<std::size_t>(n));
  if (track({&a})) {
    auto ai = a.impl(), oi = out.impl();
    record(out, {ai}, [ai, oi, m, n] {
      if (auto* g = grad_buf(ai))
        for (int r = 0; r < m; ++r) {
          const std::size_t off = static_cast<std::size_t>(r) * n;
          softmax_backward_span(oi->data.data() + off, oi->grad.data() + off, g->data() + off,
                                static_cast<std::size_t>(n));
        }
    });
  }
  return out;
}

Tensor softmax_vec(const Tensor& a) {
  check_rank(a, 1, "softmax_vec");
  if (a.numel() == 0) throw std::invalid_argument("softmax_vec: empty vector");
  Tensor out = Tensor::zeros(a.shape());
  softmax_span(a.data().data(), out.mutable_data().data(), a.numel());
  if (track({&a})) {
    auto ai = a.impl(), oi = out.impl();
    record(out, {ai}, [ai, oi] {
      if (auto* g = grad_buf(ai))
        softmax_backward_span(oi->data.data(), oi->grad.data(), g->data(), oi->data.size());
    });
  }
  return out;
}

Tensor cross_entropy_rows(const Tensor& logits, const RelevanceTargets& targets) {
  check_rank(logits, 2, "cross_entropy_rows");
  const int m = logits.rows(), n = logits.cols();
  if (targets.n_rows != m || targets.n_cols != n)
    throw std::invalid_argument("cross_entropy_rows: targets " + std::to_string(targets.n_rows) +
                                "x" + std::to_string(targets.n_cols) + " vs logits " +
                                shape_string(logits.shape()));
  for (int r = 0; r < m; ++r) {
    const int t = targets.target_col[static_cast<std::size_t>(r)];
    if (t < 0 || t >= n)
      throw std::invalid_argument("cross_entropy_rows: target column out of range in row " +
                                  std::to_string(r));
  }
  // Forward: mean over rows of (logsumexp(row) - row[target]), max-shifted.
  std::vector<Scalar> probs(static_cast<std::size_t>(m) * n);
  Scalar total = 0;
  for (int r = 0; r < m; ++r) {
    const Scalar* row = logits.data().data() + static_cast<std::size_t>(r) * n;
    Scalar mx = row[0];
    for (int c = 1; c < n; ++c) mx = std::max(mx, row[c]);
    Scalar sum = 0;
    for (int c = 0; c < n; ++c) {
      const Scalar e = std::exp(row[c] - mx);
      probs[static_cast<std::size_t>(r) * n + c] = e;
      sum += e;
    }
    for (int c = 0; c < n; ++c) probs[static_cast<std::size_t>(r) * n + c] /= sum;
    const int t = targets.target_col[static_cast<std::size_t>(r)];
    total += std::log(sum) - (row[t] - mx);
  }
  Tensor out = Tensor::from_vector({1}, {total / static_cast<Scalar>(m)});
  if (track({&logits})) {
    auto li = logits.impl(), oi = out.impl();
    auto cols = targets.target_col;
    record(out, {li}, [li, oi, probs = std::move(probs), cols = std::move(cols), m, n] {
      if (auto* g = grad_buf(li)) {
        const Scalar go = oi->grad[0] / static_cast<Scalar>(m);
        for (int r = 0; r < m; ++r)
          for (int c = 0; c < n; ++c) {
            const std::size_t idx = static_cast<std::size_t>(r) * n + c;
            Scalar d = probs[idx];
            if (c == cols[static_cast<std::size_t>(r)]) d -= Scalar(1);
            (*g)[idx] += go * d;
          }
      }
    });
  }
  return out;
}

// ==================== Selection / reduction ====================

Tensor select_row(const Tensor& a, int row) {
  check_rank(a, 2, "select_row");
  if (row < 0 || row >= a.rows())
    throw std::invalid_argument("select_row: row " + std::to_string(row) + " of " +
                                shape_string(a.shape()));
  const int n = a.cols();
  Tensor out = Tensor::zeros({n});
  std::copy_n(a.data().data() + static_cast<std::size_t>(row) * n, n,
              out.mutable_data().data());
  if (track({&a})) {
    auto ai = a.impl(), oi = out.impl();
    record(out, {ai}, [ai, oi, row, n] {
      if (auto* g = grad_buf(ai))
        for (int j = 0; j < n; ++j)
          (*g)[static_cast<std::size_t>(row) * n + j] += oi->grad[static_cast<std::size_t>(j)];
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& row_ids) {
  check_rank(a, 2, "gather_rows");
  const int n = a.cols(), m = a.rows();
  for (int id : row_ids)
    if (id < 0 || id >= m)
      throw std::invalid_argument("gather_rows: row " + std::to_string(id) + " of " +
                                  shape_string(a.shape()));
  Tensor out = Tensor::zeros({static_cast<int>(row_ids.size()), n});
  for (std::size_t t = 0; t < row_ids.size(); ++t)
    std::copy_n(a.data().data() + static_cast<std::size_t>(row_ids[t]) * n, n,
                out.mutable_data().data() + t * n);
  if (track({&a})) {
    auto ai = a.impl(), oi = out.impl();
    record(out, {ai}, [ai, oi, row_ids, n] {
      if (auto* g = grad_buf(ai))
        for (std::size_t t = 0; t < row_ids.size(); ++t)
          for (int j = 0; j < n; ++j)
            (*g)[static_cast<std::size_t>(row_ids[t]) * n + j] +=
                oi->grad[t * static_cast<std::size_t>(n) + j];
    });
  }
  return out;
}

Tensor mean_axis0(const Tensor& a) {
  check_rank(a, 2, "mean_axis0");
  const int m = a.rows(), n = a.cols();
  if (m == 0) throw std::invalid_argument("mean_axis0: zero rows");
  Tensor out = Tensor::zeros({n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.impl()->data[static_cast<std::size_t>(j)] += a.at(i, j);
  for (int j = 0; j < n; ++j) out.impl()->data[static_cast<std::size_t>(j)] /= m;
  if (track({&a})) {
    auto ai = a.impl(), oi = out.impl();
    record(out, {ai}, [ai, oi, m, n] {
      if (auto* g = grad_buf(ai))
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            (*g)[static_cast<std::size_t>(i) * n + j] +=
                oi->grad[static_cast<std::size_t>(j)] / static_cast<Scalar>(m);
    });
  }
  return out;
}

Tensor mean_all(const Tensor& a) {
  if (a.numel() == 0) throw std::invalid_argument("mean_all: empty tensor");
  Scalar acc = 0;
  for (Scalar v : a.data()) acc += v;
  Tensor out = Tensor::from_vector({1}, {acc / static_cast<Scalar>(a.numel())});
  if (track({&a})) {
    auto ai = a.impl(), oi = out.impl();
    record(out, {ai}, [ai, oi] {
      if (auto* g = grad_buf(ai)) {
        const Scalar go = oi->grad[0] / static_cast<Scalar>(g->size());
        for (Scalar& v : *g) v += go;
      }
    });
  }
  return out;
}

Tensor sum_all(const Tensor& a) {
  Scalar acc = 0;
  for (Scalar v : a.data()) acc += v;
  Tensor out = Tensor::from_vector({1}, {acc});
  if (track({&a})) {
    auto ai = a.impl(), oi = out.impl();
    record(out, {ai}, [ai, oi] {
      if (auto* g = grad_buf(ai)) {
        const Scalar go = oi->grad[0];
        for (Scalar& v : *g) v += go;
      }
    });
  }
  return out;
}

// ==================== Layer norm ====================

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Scalar eps) {
  check_rank(x, 2, "layer_norm");
  check_rank(gain, 1, "layer_norm");
  check_rank(bias, 1, "layer_norm");
  const int m = x.rows(), n = x.cols();
  if (gain.dim(0) != n || bias.dim(0) != n)
    throw std::invalid_argument("layer_norm: gain/bias " + shape_string(gain.shape()) + "/" +
                                shape_string(bias.shape()) + " vs input " +
                                shape_string(x.shape()));
  if (n == 0) throw std::invalid_argument("layer_norm: zero columns");
  Tensor out = Tensor::zeros(x.shape());
  std::vector<Scalar> xhat(static_cast<std::size_t>(m) * n);
  std::vector<Scalar> inv_sigma(static_cast<std::size_t>(m));
  for (int r = 0; r < m; ++r) {
    const Scalar* row = x.data().data() + static_cast<std::size_t>(r) * n;
    Scalar mu = 0;
    for (int j = 0; j < n; ++j) mu += row[j];
    mu /= n;
    Scalar var = 0;
    for (int j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= n;
    const Scalar inv = Scalar(1) / std::sqrt(var + eps);
    inv_sigma[static_cast<std::size_t>(r)] = inv;
    for (int j = 0; j < n; ++j) {
      const Scalar h = (row[j] - mu) * inv;
      xhat[static_cast<std::size_t>(r) * n + j] = h;
      out.impl()->data[static_cast<std::size_t>(r) * n + j] =
          h * gain.impl()->data[static_cast<std::size_t>(j)] +
          bias.impl()->data[static_cast<std::size_t>(j)];
    }
  }
  if (track({&x, &gain, &bias})) {
    auto xi = x.impl(), gi = gain.impl(), bi = bias.impl(), oi = out.impl();
    record(out, {xi, gi, bi},
           [xi, gi, bi, oi, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma), m, n] {
             for (int r = 0; r < m; ++r) {
               const std::size_t off = static_cast<std::size_t>(r) * n;
               const Scalar* gy = oi->grad.data() + off;
               const Scalar* xh = xhat.data() + off;
               if (auto* g = grad_buf(xi)) {
                 // w = gy * gain; dx = inv * (w - mean(w) - xhat * mean(w*xhat))
                 Scalar mean_w = 0, mean_wx = 0;
                 for (int j = 0; j < n; ++j) {
                   const Scalar w = gy[j] * gi->data[static_cast<std::size_t>(j)];
                   mean_w += w;
                   mean_wx += w * xh[j];
                 }
                 mean_w /= n;
                 mean_wx /= n;
                 const Scalar inv = inv_sigma[static_cast<std::size_t>(r)];
                 for (int j = 0; j < n; ++j) {
                   const Scalar w = gy[j] * gi->data[static_cast<std::size_t>(j)];
                   (*g)[off + static_cast<std::size_t>(j)] +=
                       inv * (w - mean_w - xh[j] * mean_wx);
                 }
               }
               if (auto* g = grad_buf(gi))
                 for (int j = 0; j < n; ++j) (*g)[static_cast<std::size_t>(j)] += gy[j] * xh[j];
               if (auto* g = grad_buf(bi))
                 for (int j = 0; j < n; ++j) (*g)[static_cast<std::size_t>(j)] += gy[j];
             }
           });
  }
  return out;
}

// ==================== Shape surgery ====================

namespace {
std::vector<std::shared_ptr<TensorImpl>> impls_of(const std::vector<Tensor>& ts) {
  std::vector<std::shared_ptr<TensorImpl>> out;
  out.reserve(ts.size());
  for (const auto& t : ts) out.push_back(t.impl());
  return out;
}

bool any_requires_grad(const std::vector<Tensor>& ts) {
  if (!Tape::recording()) return false;
  for (const auto& t : ts)
    if (t.requires_grad()) return true;
  return false;
}
}  // namespace

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  const int n = parts[0].cols();
  int m = 0;
  for (const auto& p : parts) {
    check_rank(p, 2, "concat_rows");
    if (p.cols() != n)
      throw std::invalid_argument("concat_rows: column mismatch " + shape_string(p.shape()) +
                                  " vs " + shape_string(parts[0].shape()));
    m += p.rows();
  }
  Tensor out = Tensor::zeros({m, n});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy_n(p.data().data(), p.numel(), out.mutable_data().data() + off);
    off += p.numel();
  }
  if (any_requires_grad(parts)) {
    auto oi = out.impl();
    auto ins = impls_of(parts);
    record(out, ins, [ins, oi] {
      std::size_t off = 0;
      for (const auto& p : ins) {
        if (auto* g = grad_buf(p))
          for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += oi->grad[off + i];
        off += p->numel();
      }
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const int m = parts[0].rows();
  int n = 0;
  for (const auto& p : parts) {
    check_rank(p, 2, "concat_cols");
    if (p.rows() != m)
      throw std::invalid_argument("concat_cols: row mismatch " + shape_string(p.shape()) + " vs " +
                                  shape_string(parts[0].shape()));
    n += p.cols();
  }
  Tensor out = Tensor::zeros({m, n});
  int coff = 0;
  for (const auto& p : parts) {
    const int pc = p.cols();
    for (int i = 0; i < m; ++i)
      std::copy_n(p.data().data() + static_cast<std::size_t>(i) * pc, pc,
                  out.mutable_data().data() + static_cast<std::size_t>(i) * n + coff);
    coff += pc;
  }
  if (any_requires_grad(parts)) {
    auto oi = out.impl();
    auto ins = impls_of(parts);
    record(out, ins, [ins, oi, m, n] {
      int coff = 0;
      for (const auto& p : ins) {
        const int pc = p->shape[1];
        if (auto* g = grad_buf(p))
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < pc; ++j)
              (*g)[static_cast<std::size_t>(i) * pc + j] +=
                  oi->grad[static_cast<std::size_t>(i) * n + coff + j];
        coff += pc;
      }
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& a, int start, int len) {
  check_rank(a, 2, "slice_cols");
  const int m = a.rows(), n = a.cols();
  if (start < 0 || len <= 0 || start + len > n)
    throw std::invalid_argument("slice_cols: [" + std::to_string(start) + ", " +
                                std::to_string(start + len) + ") of " + shape_string(a.shape()));
  Tensor out = Tensor::zeros({m, len});
  for (int i = 0; i < m; ++i)
    std::copy_n(a.data().data() + static_cast<std::size_t>(i) * n + start, len,
                out.mutable_data().data() + static_cast<std::size_t>(i) * len);
  if (track({&a})) {
    auto ai = a.impl(), oi = out.impl();
    record(out, {ai}, [ai, oi, m, n, start, len] {
      if (auto* g = grad_buf(ai))
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < len; ++j)
            (*g)[static_cast<std::size_t>(i) * n + start + j] +=
                oi->grad[static_cast<std::size_t>(i) * len + j];
    });
  }
  return out;
}

Tensor stack_rows(const std::vector<Tensor>& vecs) {
  if (vecs.empty()) throw std::invalid_argument("stack_rows: no vectors");
  const int n = vecs[0].dim(0);
  for (const auto& v : vecs) {
    check_rank(v, 1, "stack_rows");
    if (v.dim(0) != n)
      throw std::invalid_argument("stack_rows: length mismatch " + shape_string(v.shape()) +
                                  " vs " + shape_string(vecs[0].shape()));
  }
  Tensor out = Tensor::zeros({static_cast<int>(vecs.size()), n});
  for (std::size_t i = 0; i < vecs.size(); ++i)
    std::copy_n(vecs[i].data().data(), n, out.mutable_data().data() + i * n);
  if (any_requires_grad(vecs)) {
    auto oi = out.impl();
    auto ins = impls_of(vecs);
    record(out, ins, [ins, oi, n] {
      for (std::size_t i = 0; i < ins.size(); ++i)
        if (auto* g = grad_buf(ins[i]))
          for (int j = 0; j < n; ++j)
            (*g)[static_cast<std::size_t>(j)] += oi->grad[i * static_cast<std::size_t>(n) + j];
    });
  }
  return out;
}

Tensor concat_vec(const Tensor& a, const Tensor& b) {
  check_rank(a, 1, "concat_vec");
  check_rank(b, 1, "concat_vec");
  const int na = a.dim(0), nb = b.dim(0);
  Tensor out = Tensor::zeros({na + nb});
  std::copy_n(a.data().data(), na, out.mutable_data().data());
  std::copy_n(b.data().data(), nb, out.mutable_data().data() + na);
  if (track({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    record(out, {ai, bi}, [ai, bi, oi, na, nb] {
      if (auto* g = grad_buf(ai))
        for (int i = 0; i < na; ++i) (*g)[static_cast<std::size_t>(i)] += oi->grad[i];
      if (auto* g = grad_buf(bi))
        for (int i = 0; i < nb; ++i) (*g)[static_cast<std::size_t>(i)] += oi->grad[na + i];
    });
  }
  return out;
}

Tensor from_scalars(int n_rows, int n_cols, const std::vector<Tensor>& scalars) {
  if (static_cast<std::size_t>(n_rows) * n_cols != scalars.size())
    throw std::invalid_argument("from_scalars: " + std::to_string(scalars.size()) +
                                " scalars for " + std::to_string(n_rows) + "x" +
                                std::to_string(n_cols));
  for (const auto& s : scalars)
    if (s.numel() != 1)
      throw std::invalid_argument("from_scalars: element of shape " + shape_string(s.shape()));
  Tensor out = Tensor::zeros({n_rows, n_cols});
  for (std::size_t i = 0; i < scalars.size(); ++i)
    out.mutable_data()[i] = scalars[i].data()[0];
  if (any_requires_grad(scalars)) {
    auto oi = out.impl();
    auto ins = impls_of(scalars);
    record(out, ins, [ins, oi] {
      for (std::size_t i = 0; i < ins.size(); ++i)
        if (auto* g = grad_buf(ins[i])) (*g)[0] += oi->grad[i];
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  if (shape_numel(shape) != a.numel())
    throw std::invalid_argument("reshape: " + shape_string(a.shape()) + " to " +
                                shape_string(shape));
  Tensor out = Tensor::from_vector(std::move(shape),
                                   std::vector<Scalar>(a.data().begin(), a.data().end()));
  if (track({&a})) {
    auto ai = a.impl(), oi = out.impl();
    record(out, {ai}, [ai, oi] {
      if (auto* g = grad_buf(ai))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += oi->grad[i];
    });
  }
  return out;
}

Tensor add_row_broadcast(const Tensor& a, const Tensor& row) {
  check_rank(a, 2, "add_row_broadcast");
  check_rank(row, 1, "add_row_broadcast");
  const int m = a.rows(), n = a.cols();
  if (row.dim(0) != n)
    throw std::invalid_argument("add_row_broadcast: " + shape_string(a.shape()) + " + " +
                                shape_string(row.shape()));
  Tensor out = Tensor::zeros(a.shape());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.impl()->data[static_cast<std::size_t>(i) * n + j] =
          a.at(i, j) + row.impl()->data[static_cast<std::size_t>(j)];
  if (track({&a, &row})) {
    auto ai = a.impl(), ri = row.impl(), oi = out.impl();
    record(out, {ai, ri}, [ai, ri, oi, m, n] {
      if (auto* g = grad_buf(ai))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += oi->grad[i];
      if (auto* g = grad_buf(ri))
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            (*g)[static_cast<std::size_t>(j)] += oi->grad[static_cast<std::size_t>(i) * n + j];
    });
  }
  return out;
}

Tensor cosine(const Tensor& a, const Tensor& b) {
  check_rank(a, 1, "cosine");
  check_rank(b, 1, "cosine");
  check_same_shape(a, b, "cosine");
  Scalar ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    ab += a.impl()->data[i] * b.impl()->data[i];
    aa += a.impl()->data[i] * a.impl()->data[i];
    bb += b.impl()->data[i] * b.impl()->data[i];
  }
  const Scalar na = std::sqrt(aa), nb = std::sqrt(bb);
  const bool degenerate = na < Scalar(1e-12) || nb < Scalar(1e-12);
  const Scalar c = degenerate ? Scalar(0) : ab / (na * nb);
  Tensor out = Tensor::from_vector({1}, {c});
  if (!degenerate && track({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    record(out, {ai, bi}, [ai, bi, oi, c, na, nb] {
      const Scalar go = oi->grad[0];
      if (auto* g = grad_buf(ai))
        for (std::size_t i = 0; i < g->size(); ++i)
          (*g)[i] += go * (bi->data[i] / (na * nb) - c * ai->data[i] / (na * na));
      if (auto* g = grad_buf(bi))
        for (std::size_t i = 0; i < g->size(); ++i)
          (*g)[i] += go * (ai->data[i] / (na * nb) - c * bi->data[i] / (nb * nb));
    });
  }
  return out;
}

namespace diagnostics {
Scalar min_abs_relu_input() { return g_min_abs_relu_input; }
void reset_min_abs_relu_input() {
  g_min_abs_relu_input = std::numeric_limits<Scalar>::infinity();
}
}  // namespace diagnostics

}  // namespace passmatch
