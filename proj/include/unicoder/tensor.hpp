// Copyright 2026 the unicoder-cpp authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Core>

#include <functional>
#include <iosfwd>
#include <memory>
#include <random>
#include <vector>

namespace unicoder {

using Scalar = double;
using Index = Eigen::Index;
// Row-major everywhere; serialization and shape semantics assume it.
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Sentinel target id skipped by cross_entropy.
inline constexpr int kIgnoreId = -1;

namespace detail {
struct TensorNode {
  std::vector<Index> shape;  // rank 0..2, row-major dims
  Mat value;                 // rank 0 -> 1x1, rank 1 -> nx1, rank 2 -> dims
  Mat grad;                  // empty until first accumulation
  bool requires_grad = false;
};
}  // namespace detail

/// Dense 64-bit tensor of rank 0, 1 or 2. Value-semantic handle onto a
/// shared node so that tape closures and parameter sets alias the same
/// storage. Gradients accumulate additively into `grad()` across backward
/// passes until `zero_grad()`.
class Tensor {
 public:
  Tensor() = default;

  static Tensor scalar(Scalar v, bool requires_grad = false);
  static Tensor zeros(std::vector<Index> shape, bool requires_grad = false);
  static Tensor ones(std::vector<Index> shape, bool requires_grad = false);
  static Tensor from_matrix(Mat m, bool requires_grad = false);
  static Tensor from_vector(const std::vector<Scalar>& v, bool requires_grad = false);
  static Tensor randn(std::vector<Index> shape, Scalar stddev, std::mt19937_64& rng,
                      bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<Index>& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index numel() const { return node_->value.size(); }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }

  Mat& value() { return node_->value; }
  const Mat& value() const { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }

  bool has_grad() const { return node_->grad.size() > 0; }
  Mat& grad();              // allocates zeros on first use
  const Mat& grad() const;  // throws if absent
  void zero_grad();

  /// Deep copy (fresh node, same values, no grad).
  Tensor clone() const;

  Scalar item() const;  // numel() must be 1

  detail::TensorNode* node() const { return node_.get(); }
  std::shared_ptr<detail::TensorNode> shared_node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> n) : node_(std::move(n)) {}
  static Tensor make(std::vector<Index> shape, bool requires_grad);
  std::shared_ptr<detail::TensorNode> node_;
};

/// Record of one forward pass: backward closures in application order.
/// backward() replays them in exact reverse order.
class Tape {
 public:
  void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }
  std::size_t size() const { return ops_.size(); }
  void clear() { ops_.clear(); }

 private:
  std::vector<std::function<void()>> ops_;
  friend void backward(Tape& tape, const Tensor& loss);
};

/// Makes `tape` the recording target for ops on this thread. Scopes nest;
/// the innermost wins. Without an active scope ops run forward-only.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// ---------------------------------------------------------------------------
// Primitives. Each computes forward, checks the result is finite, and (when a
// tape is active and any input requires grad) records its backward closure.
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, Scalar c);

/// a[m×k] · b[k×n]. Rank-1 operands act as k×1 / 1×k as dimensions demand.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// out.row(i) = table.row(ids[i]); backward scatter-adds (repeats accumulate).
Tensor gather_rows(const Tensor& table, const std::vector<int>& ids);
Tensor slice_rows(const Tensor& a, Index begin, Index count);
Tensor slice_cols(const Tensor& a, Index begin, Index count);
/// Row i of a rank-2 tensor as a rank-1 tensor.
Tensor row_vector(const Tensor& a, Index i);
Tensor concat_cols(const std::vector<Tensor>& parts);

/// Exp-normalize along `axis` (0 = down columns, 1 = across rows) with
/// max-subtraction. Rank-1 input: axis 0.
Tensor softmax(const Tensor& x, int axis);

/// Tanh-approximation GELU: 0.5·x·(1 + tanh(√(2/π)(x + 0.044715 x³))).
Tensor gelu(const Tensor& x);
Tensor tanh(const Tensor& x);
/// x^(-1/2) elementwise; domain x > 0.
Tensor rsqrt(const Tensor& x);
Tensor sum_all(const Tensor& x);         // -> rank 0
Tensor mean_rows(const Tensor& x);       // [m×n] -> [1×n]

Tensor add_rowvec(const Tensor& a, const Tensor& v);  // v broadcast over rows
Tensor add_colvec(const Tensor& a, const Tensor& v);  // v broadcast over cols
Tensor mul_rowvec(const Tensor& a, const Tensor& v);

/// Per-row normalization to mean 0 / variance 1, then gain ⊙ x̂ + bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  Scalar eps = 1e-5);

/// Mean negative log-softmax over rows whose target != ignore_id.
/// logits: [N×V] (rank-1 treated as a single row). Throws if every
/// position is ignored ("empty loss").
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     int ignore_id = kIgnoreId);

/// Binary cross-entropy on a single logit; label in {0,1}.
Tensor bce_with_logits(const Tensor& logit, Scalar label);

/// Inverted dropout; active sampling from `rng`. p in [0,1).
Tensor dropout(const Tensor& x, Scalar p, std::mt19937_64& rng);

/// Mean of scalar tensors (composition of add/scale; not a primitive).
Tensor mean_of(const std::vector<Tensor>& scalars);

/// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Gradients
/// accumulate additively into every requires_grad tensor reachable from loss.
void backward(Tape& tape, const Tensor& loss);

/// Max over coordinates of x of
///   |analytic − central_difference| / (|analytic| + |numeric| + 1e-12).
/// f must build a scalar loss from the current value of x.
double grad_check(const std::function<Tensor()>& f, Tensor x, double eps = 1e-5);

/// Same check restricted to `max_coords` rng-sampled coordinates of x.
double grad_check_sampled(const std::function<Tensor()>& f, Tensor x, double eps,
                          std::size_t max_coords, std::mt19937_64& rng);

// Little-endian tensor wire format: u32 rank, u64 dims, raw f64 data.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is, bool requires_grad = false);

}  // namespace unicoder
