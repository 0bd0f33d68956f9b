// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace passmatch {

#ifdef PASSMATCH_SCALAR_FLOAT
using Scalar = float;
#else
using Scalar = double;
#endif

struct TensorImpl {
  std::vector<int> shape;
  std::vector<Scalar> data;
  std::vector<Scalar> grad;  // empty means "not populated"
  bool requires_grad = false;

  std::size_t numel() const { return data.size(); }
};

// Shared-handle tensor: copies alias the same storage. Data is treated as
// immutable once the tensor has entered an op; in-place mutation is reserved
// for leaf parameters between steps (optimizer updates, init).
class Tensor {
 public:
  Tensor() : impl_(std::make_shared<TensorImpl>()) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, Scalar value, bool requires_grad = false);
  static Tensor from_vector(std::vector<int> shape, std::vector<Scalar> values,
                            bool requires_grad = false);
  static Tensor from_values(std::initializer_list<Scalar> values, bool requires_grad = false);
  static Tensor from_rows(std::initializer_list<std::initializer_list<Scalar>> rows,
                          bool requires_grad = false);
  static Tensor randn(std::vector<int> shape, std::mt19937_64& rng, Scalar stddev = 1,
                      bool requires_grad = false);
  static Tensor identity(int n, bool requires_grad = false);

  const std::vector<int>& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const;
  int rows() const { return dim(0); }
  int cols() const { return dim(1); }
  std::size_t numel() const { return impl_->numel(); }

  std::span<const Scalar> data() const { return impl_->data; }
  std::span<Scalar> mutable_data() { return impl_->data; }
  Scalar item() const;
  Scalar at(int i) const;
  Scalar at(int r, int c) const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const Scalar> grad() const;
  void zero_grad();

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

std::string shape_string(const std::vector<int>& shape);

// Define-by-run tape. Ops append entries in creation order, which is a valid
// topological order because inputs always exist before outputs; backward walks
// the tape in reverse. A tape is confined to one thread.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Innermost active tape on this thread, or nullptr.
  static Tape* active();
  // True when ops should record: a tape is active and recording is not paused.
  static bool recording();

  // Seeds grad(loss) = 1 and accumulates gradients into every requires_grad
  // tensor reachable from the loss. One shot: a second call without reset()
  // is an error.
  void backward(const Tensor& loss);
  void reset();
  std::size_t size() const { return entries_.size(); }

  void push(std::vector<std::shared_ptr<TensorImpl>> inputs, std::shared_ptr<TensorImpl> output,
            std::function<void()> backward_fn);

  // RAII: suspends recording on the current thread (inference, finite
  // differences, frozen submodules).
  class Pause {
   public:
    Pause();
    ~Pause();
    Pause(const Pause&) = delete;
    Pause& operator=(const Pause&) = delete;
  };

 private:
  struct Entry {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    std::function<void()> backward_fn;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

// backward() on the innermost active tape.
void backward(const Tensor& loss);

// One-hot relevance targets: exactly one positive column per row.
struct RelevanceTargets {
  int n_rows = 0;
  int n_cols = 0;
  std::vector<int> target_col;

  static RelevanceTargets diagonal(int n);
  // Validates that every row holds exactly one 1 and zeros elsewhere.
  static RelevanceTargets from_one_hot(const Tensor& one_hot);
};

// ==================== Primitive operations ====================

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar s);
Tensor add_scalar(const Tensor& a, Scalar s);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matvec(const Tensor& a, const Tensor& x);
Tensor transpose(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);

Tensor softmax_rows(const Tensor& a);
Tensor softmax_vec(const Tensor& a);

// Mean over rows of -log softmax(logits)[r, target_col(r)].
Tensor cross_entropy_rows(const Tensor& logits, const RelevanceTargets& targets);

Tensor select_row(const Tensor& a, int row);
Tensor gather_rows(const Tensor& a, const std::vector<int>& row_ids);
Tensor mean_axis0(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor sum_all(const Tensor& a);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Scalar eps = 1e-5);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, int start, int len);
Tensor stack_rows(const std::vector<Tensor>& vecs);
Tensor concat_vec(const Tensor& a, const Tensor& b);
Tensor from_scalars(int n_rows, int n_cols, const std::vector<Tensor>& scalars);
Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor add_row_broadcast(const Tensor& a, const Tensor& row);

// Cosine similarity of two vectors; returns 0 with no gradient if either norm
// underflows.
Tensor cosine(const Tensor& a, const Tensor& b);

namespace diagnostics {
// Smallest |x| seen by relu() since the last reset, on this thread. Numeric
// gradient tests use it to reject instances that straddle the relu kink.
Scalar min_abs_relu_input();
void reset_min_abs_relu_input();
}  // namespace diagnostics

}  // namespace passmatch
