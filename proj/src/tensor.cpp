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

#include "unicoder/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "tensor wire format assumes a little-endian host");

namespace unicoder {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::string shape_str(const std::vector<Index>& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::string shape_str(const Tensor& t) { return shape_str(t.shape()); }

[[noreturn]] void fail_dim(const std::string& msg) { throw std::invalid_argument(msg); }

void check_defined(const Tensor& t, const char* op) {
  if (!t.defined()) fail_dim(std::string(op) + ": undefined tensor");
}

void check_finite(const Tensor& t, const char* op) {
  if (!t.value().allFinite())
    throw std::runtime_error(std::string(op) + ": non-finite values in output");
}

Mat& acc_grad(detail::TensorNode& n) {
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

bool has_out_grad(const detail::TensorNode& n) { return n.grad.size() > 0; }

using NodePtr = std::shared_ptr<detail::TensorNode>;

void set_flags_and_record(Tensor& out, bool needs_grad, std::function<void()> fn) {
  out.set_requires_grad(needs_grad);
  if (needs_grad)
    if (Tape* tape = active_tape()) tape->record(std::move(fn));
}

// Matrix dims implied by a shape under the rank mapping.
std::pair<Index, Index> mat_dims(const std::vector<Index>& shape) {
  if (shape.empty()) return {1, 1};
  if (shape.size() == 1) return {shape[0], 1};
  return {shape[0], shape[1]};
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::make(std::vector<Index> shape, bool requires_grad) {
  if (shape.size() > 2) fail_dim("tensor rank > 2 unsupported: " + shape_str(shape));
  for (Index d : shape)
    if (d < 0) fail_dim("negative dimension in shape " + shape_str(shape));
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  auto [r, c] = mat_dims(node->shape);
  node->value = Mat::Zero(r, c);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(Scalar v, bool requires_grad) {
  Tensor t = make({}, requires_grad);
  t.value()(0, 0) = v;
  return t;
}

Tensor Tensor::zeros(std::vector<Index> shape, bool requires_grad) {
  return make(std::move(shape), requires_grad);
}

Tensor Tensor::ones(std::vector<Index> shape, bool requires_grad) {
  Tensor t = make(std::move(shape), requires_grad);
  t.value().setOnes();
  return t;
}

Tensor Tensor::from_matrix(Mat m, bool requires_grad) {
  Tensor t = make({m.rows(), m.cols()}, requires_grad);
  t.value() = std::move(m);
  return t;
}

Tensor Tensor::from_vector(const std::vector<Scalar>& v, bool requires_grad) {
  Tensor t = make({static_cast<Index>(v.size())}, requires_grad);
  for (std::size_t i = 0; i < v.size(); ++i) t.value()(static_cast<Index>(i), 0) = v[i];
  return t;
}

Tensor Tensor::randn(std::vector<Index> shape, Scalar stddev, std::mt19937_64& rng,
                     bool requires_grad) {
  Tensor t = make(std::move(shape), requires_grad);
  std::normal_distribution<Scalar> dist(0.0, stddev);
  Scalar* p = t.value().data();
  for (Index i = 0; i < t.value().size(); ++i) p[i] = dist(rng);
  return t;
}

Mat& Tensor::grad() { return acc_grad(*node_); }

const Mat& Tensor::grad() const {
  if (!has_grad()) throw std::runtime_error("tensor has no gradient");
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.resize(0, 0); }

Tensor Tensor::clone() const {
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = node_->shape;
  node->value = node_->value;
  node->requires_grad = node_->requires_grad;
  return Tensor(std::move(node));
}

Scalar Tensor::item() const {
  if (numel() != 1) fail_dim("item(): tensor is not scalar, shape " + shape_str(*this));
  return node_->value(0, 0);
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }
Tape* active_tape() { return g_active_tape; }

void backward(Tape& tape, const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be a scalar tensor");
  acc_grad(*loss.node()).array() += 1.0;
  for (auto it = tape.ops_.rbegin(); it != tape.ops_.rend(); ++it) (*it)();
}

// ---------------------------------------------------------------------------
// Elementwise binary / unary
// ---------------------------------------------------------------------------

namespace {
void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  check_defined(a, op);
  check_defined(b, op);
  if (a.shape() != b.shape())
    fail_dim(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  out.value() = a.value() + b.value();
  check_finite(out, "add");
  NodePtr an = a.shared_node(), bn = b.shared_node(), on = out.shared_node();
  set_flags_and_record(out, a.requires_grad() || b.requires_grad(), [an, bn, on] {
    if (!has_out_grad(*on)) return;
    if (an->requires_grad) acc_grad(*an) += on->grad;
    if (bn->requires_grad) acc_grad(*bn) += on->grad;
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  out.value() = a.value() - b.value();
  check_finite(out, "sub");
  NodePtr an = a.shared_node(), bn = b.shared_node(), on = out.shared_node();
  set_flags_and_record(out, a.requires_grad() || b.requires_grad(), [an, bn, on] {
    if (!has_out_grad(*on)) return;
    if (an->requires_grad) acc_grad(*an) += on->grad;
    if (bn->requires_grad) acc_grad(*bn) -= on->grad;
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  out.value() = a.value().cwiseProduct(b.value());
  check_finite(out, "mul");
  NodePtr an = a.shared_node(), bn = b.shared_node(), on = out.shared_node();
  set_flags_and_record(out, a.requires_grad() || b.requires_grad(), [an, bn, on] {
    if (!has_out_grad(*on)) return;
    if (an->requires_grad) acc_grad(*an) += on->grad.cwiseProduct(bn->value);
    if (bn->requires_grad) acc_grad(*bn) += on->grad.cwiseProduct(an->value);
  });
  return out;
}

Tensor scale(const Tensor& a, Scalar c) {
  check_defined(a, "scale");
  if (!std::isfinite(c)) fail_dim("scale: non-finite factor");
  Tensor out = Tensor::zeros(a.shape());
  out.value() = a.value() * c;
  check_finite(out, "scale");
  NodePtr an = a.shared_node(), on = out.shared_node();
  set_flags_and_record(out, a.requires_grad(), [an, on, c] {
    if (!has_out_grad(*on)) return;
    acc_grad(*an) += on->grad * c;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_defined(a, "matmul");
  check_defined(b, "matmul");
  if (a.rank() == 0 || b.rank() == 0)
    fail_dim("matmul: rank-0 operand " + shape_str(a) + " vs " + shape_str(b));
  const bool a_vec = a.rank() == 1;  // promoted to 1×k on the left
  const bool b_vec = b.rank() == 1;  // promoted to k×1 on the right
  const Index m = a_vec ? 1 : a.rows();
  const Index k = a_vec ? a.rows() : a.cols();
  const Index kb = b.rows();
  const Index n = b_vec ? 1 : b.cols();
  if (k != kb)
    fail_dim("matmul: inner dimensions disagree: " + shape_str(a) + " vs " + shape_str(b));

  Mat prod;
  if (a_vec)
    prod = a.value().transpose() * b.value();  // 1×n
  else
    prod = a.value() * b.value();  // m×n

  std::vector<Index> out_shape;
  if (!a_vec && !b_vec)
    out_shape = {m, n};
  else if (a_vec && b_vec)
    out_shape = {};
  else if (a_vec)
    out_shape = {n};
  else
    out_shape = {m};

  Tensor out = Tensor::zeros(out_shape);
  if (out.rank() == 1 && a_vec)
    out.value() = prod.transpose();  // store as column
  else
    out.value() = prod;
  check_finite(out, "matmul");

  NodePtr an = a.shared_node(), bn = b.shared_node(), on = out.shared_node();
  set_flags_and_record(out, a.requires_grad() || b.requires_grad(),
                       [an, bn, on, a_vec, b_vec, m, n] {
    if (!has_out_grad(*on)) return;
    // Logical G is m×n; recover it from the stored layout.
    Mat g(m, n);
    if (a_vec && !b_vec)
      g = on->grad.transpose();  // stored n×1
    else
      g = on->grad;  // m×n, m×1 or 1×1 already match
    if (an->requires_grad) {
      Mat ga = g * bn->value.transpose();  // m×k (stored b is the logical k×n)
      if (a_vec)
        acc_grad(*an) += ga.transpose();  // store as k×1
      else
        acc_grad(*an) += ga;
    }
    if (bn->requires_grad) {
      Mat gb = a_vec ? Mat(an->value * g) : Mat(an->value.transpose() * g);  // k×n
      acc_grad(*bn) += gb;
    }
  });
  return out;
}

Tensor transpose(const Tensor& a) {
  check_defined(a, "transpose");
  if (a.rank() != 2) fail_dim("transpose: rank-2 tensor required, got " + shape_str(a));
  Tensor out = Tensor::zeros({a.cols(), a.rows()});
  out.value() = a.value().transpose();
  NodePtr an = a.shared_node(), on = out.shared_node();
  set_flags_and_record(out, a.requires_grad(), [an, on] {
    if (!has_out_grad(*on)) return;
    acc_grad(*an) += on->grad.transpose();
  });
  return out;
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
  check_defined(table, "gather_rows");
  if (table.rank() != 2) fail_dim("gather_rows: table must be rank 2, got " + shape_str(table));
  const Index v = table.rows();
  for (int id : ids)
    if (id < 0 || id >= v) {
      std::ostringstream os;
      os << "gather_rows: id " << id << " out of range [0," << v << ")";
      fail_dim(os.str());
    }
  const Index len = static_cast<Index>(ids.size());
  Tensor out = Tensor::zeros({len, table.cols()});
  for (Index i = 0; i < len; ++i) out.value().row(i) = table.value().row(ids[i]);
  NodePtr tn = table.shared_node(), on = out.shared_node();
  set_flags_and_record(out, table.requires_grad(), [tn, on, ids] {
    if (!has_out_grad(*on)) return;
    Mat& g = acc_grad(*tn);
    for (Index i = 0; i < static_cast<Index>(ids.size()); ++i)
      g.row(ids[i]) += on->grad.row(i);
  });
  return out;
}

Tensor slice_rows(const Tensor& a, Index begin, Index count) {
  check_defined(a, "slice_rows");
  if (a.rank() < 1) fail_dim("slice_rows: rank-0 tensor");
  if (begin < 0 || count < 0 || begin + count > a.rows()) {
    std::ostringstream os;
    os << "slice_rows: range [" << begin << "," << begin + count << ") exceeds "
       << shape_str(a);
    fail_dim(os.str());
  }
  std::vector<Index> shape = a.shape();
  shape[0] = count;
  Tensor out = Tensor::zeros(shape);
  out.value() = a.value().middleRows(begin, count);
  NodePtr an = a.shared_node(), on = out.shared_node();
  set_flags_and_record(out, a.requires_grad(), [an, on, begin, count] {
    if (!has_out_grad(*on)) return;
    acc_grad(*an).middleRows(begin, count) += on->grad;
  });
  return out;
}

Tensor slice_cols(const Tensor& a, Index begin, Index count) {
  check_defined(a, "slice_cols");
  if (a.rank() != 2) fail_dim("slice_cols: rank-2 tensor required, got " + shape_str(a));
  if (begin < 0 || count < 0 || begin + count > a.cols()) {
    std::ostringstream os;
    os << "slice_cols: range [" << begin << "," << begin + count << ") exceeds "
       << shape_str(a);
    fail_dim(os.str());
  }
  Tensor out = Tensor::zeros({a.rows(), count});
  out.value() = a.value().middleCols(begin, count);
  NodePtr an = a.shared_node(), on = out.shared_node();
  set_flags_and_record(out, a.requires_grad(), [an, on, begin, count] {
    if (!has_out_grad(*on)) return;
    acc_grad(*an).middleCols(begin, count) += on->grad;
  });
  return out;
}

Tensor row_vector(const Tensor& a, Index i) {
  check_defined(a, "row_vector");
  if (a.rank() != 2) fail_dim("row_vector: rank-2 tensor required, got " + shape_str(a));
  if (i < 0 || i >= a.rows())
    fail_dim("row_vector: row " + std::to_string(i) + " out of range for " + shape_str(a));
  Tensor out = Tensor::zeros({a.cols()});
  out.value() = a.value().row(i).transpose();
  NodePtr an = a.shared_node(), on = out.shared_node();
  set_flags_and_record(out, a.requires_grad(), [an, on, i] {
    if (!has_out_grad(*on)) return;
    acc_grad(*an).row(i) += on->grad.transpose();
  });
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail_dim("concat_cols: no parts");
  Index rows = parts[0].rows(), cols = 0;
  bool needs_grad = false;
  for (const Tensor& p : parts) {
    check_defined(p, "concat_cols");
    if (p.rank() != 2 || p.rows() != rows)
      fail_dim("concat_cols: incompatible part " + shape_str(p));
    cols += p.cols();
    needs_grad = needs_grad || p.requires_grad();
  }
  Tensor out = Tensor::zeros({rows, cols});
  Index at = 0;
  for (const Tensor& p : parts) {
    out.value().middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<NodePtr> nodes;
  for (const Tensor& p : parts) nodes.push_back(p.shared_node());
  NodePtr on = out.shared_node();
  set_flags_and_record(out, needs_grad, [nodes, on] {
    if (!has_out_grad(*on)) return;
    Index at = 0;
    for (const NodePtr& pn : nodes) {
      if (pn->requires_grad) acc_grad(*pn) += on->grad.middleCols(at, pn->value.cols());
      at += pn->value.cols();
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Nonlinearities and reductions
// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& x, int axis) {
  check_defined(x, "softmax");
  if (x.rank() == 0) fail_dim("softmax: rank-0 tensor");
  if (x.rank() == 1 && axis != 0) fail_dim("softmax: axis must be 0 for rank-1 input");
  if (x.rank() == 2 && axis != 0 && axis != 1) fail_dim("softmax: axis must be 0 or 1");
  const bool over_rows = (x.rank() == 1) || axis == 0;  // normalize down each column
  const Index slice_len = over_rows ? x.rows() : x.cols();
  if (slice_len == 0) fail_dim("softmax: empty axis on " + shape_str(x));

  Tensor out = Tensor::zeros(x.shape());
  const Mat& v = x.value();
  Mat& o = out.value();
  if (over_rows) {
    for (Index c = 0; c < v.cols(); ++c) {
      Eigen::ArrayXd col = v.col(c).array();
      col -= col.maxCoeff();
      col = col.exp();
      o.col(c) = col / col.sum();
    }
  } else {
    for (Index r = 0; r < v.rows(); ++r) {
      Eigen::ArrayXd row = v.row(r).transpose().array();
      row -= row.maxCoeff();
      row = row.exp();
      o.row(r) = (row / row.sum()).transpose();
    }
  }
  check_finite(out, "softmax");
  NodePtr xn = x.shared_node(), on = out.shared_node();
  set_flags_and_record(out, x.requires_grad(), [xn, on, over_rows] {
    if (!has_out_grad(*on)) return;
    Mat& gx = acc_grad(*xn);
    const Mat& s = on->value;
    const Mat& g = on->grad;
    if (over_rows) {
      for (Index c = 0; c < s.cols(); ++c) {
        Scalar dot = (g.col(c).array() * s.col(c).array()).sum();
        gx.col(c).array() += s.col(c).array() * (g.col(c).array() - dot);
      }
    } else {
      for (Index r = 0; r < s.rows(); ++r) {
        Scalar dot = (g.row(r).array() * s.row(r).array()).sum();
        gx.row(r).array() += s.row(r).array() * (g.row(r).array() - dot);
      }
    }
  });
  return out;
}

namespace {
constexpr Scalar kGeluC0 = 0.7978845608028654;  // sqrt(2/pi)
constexpr Scalar kGeluC1 = 0.044715;
}  // namespace

Tensor gelu(const Tensor& x) {
  check_defined(x, "gelu");
  Tensor out = Tensor::zeros(x.shape());
  const auto xv = x.value().array();
  out.value().array() = 0.5 * xv * (1.0 + (kGeluC0 * (xv + kGeluC1 * xv.cube())).tanh());
  check_finite(out, "gelu");
  NodePtr xn = x.shared_node(), on = out.shared_node();
  set_flags_and_record(out, x.requires_grad(), [xn, on] {
    if (!has_out_grad(*on)) return;
    const auto xv = xn->value.array();
    const auto t = (kGeluC0 * (xv + kGeluC1 * xv.cube())).tanh();
    const auto dudx = kGeluC0 * (1.0 + 3.0 * kGeluC1 * xv.square());
    acc_grad(*xn).array() +=
        on->grad.array() * (0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t.square()) * dudx);
  });
  return out;
}

Tensor tanh(const Tensor& x) {
  check_defined(x, "tanh");
  Tensor out = Tensor::zeros(x.shape());
  out.value().array() = x.value().array().tanh();
  check_finite(out, "tanh");
  NodePtr xn = x.shared_node(), on = out.shared_node();
  set_flags_and_record(out, x.requires_grad(), [xn, on] {
    if (!has_out_grad(*on)) return;
    acc_grad(*xn).array() += on->grad.array() * (1.0 - on->value.array().square());
  });
  return out;
}

Tensor rsqrt(const Tensor& x) {
  check_defined(x, "rsqrt");
  if ((x.value().array() <= 0.0).any()) fail_dim("rsqrt: domain requires positive input");
  Tensor out = Tensor::zeros(x.shape());
  out.value().array() = x.value().array().rsqrt();
  check_finite(out, "rsqrt");
  NodePtr xn = x.shared_node(), on = out.shared_node();
  set_flags_and_record(out, x.requires_grad(), [xn, on] {
    if (!has_out_grad(*on)) return;
    acc_grad(*xn).array() += on->grad.array() * (-0.5 * on->value.array().cube());
  });
  return out;
}

Tensor sum_all(const Tensor& x) {
  check_defined(x, "sum_all");
  Tensor out = Tensor::scalar(x.value().sum());
  check_finite(out, "sum_all");
  NodePtr xn = x.shared_node(), on = out.shared_node();
  set_flags_and_record(out, x.requires_grad(), [xn, on] {
    if (!has_out_grad(*on)) return;
    acc_grad(*xn).array() += on->grad(0, 0);
  });
  return out;
}

Tensor mean_rows(const Tensor& x) {
  check_defined(x, "mean_rows");
  if (x.rank() != 2) fail_dim("mean_rows: rank-2 tensor required, got " + shape_str(x));
  if (x.rows() == 0) fail_dim("mean_rows: no rows");
  Tensor out = Tensor::zeros({Index{1}, x.cols()});
  out.value() = x.value().colwise().mean();
  check_finite(out, "mean_rows");
  NodePtr xn = x.shared_node(), on = out.shared_node();
  const Scalar inv = 1.0 / static_cast<Scalar>(x.rows());
  set_flags_and_record(out, x.requires_grad(), [xn, on, inv] {
    if (!has_out_grad(*on)) return;
    acc_grad(*xn).rowwise() += (on->grad.row(0) * inv);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Broadcast helpers
// ---------------------------------------------------------------------------

namespace {
void check_vec_len(const Tensor& v, Index want, const char* op) {
  check_defined(v, op);
  if (v.rank() == 0 || v.numel() != want || (v.rank() == 2 && v.rows() != 1 && v.cols() != 1))
    fail_dim(std::string(op) + ": vector of length " + std::to_string(want) +
             " required, got " + shape_str(v));
}

// Vectors may be stored n×1 or 1×n; their data is contiguous either way.
Eigen::Map<const Eigen::ArrayXd> vec_view(const detail::TensorNode& n) {
  return Eigen::Map<const Eigen::ArrayXd>(n.value.data(), n.value.size());
}
Eigen::Map<Eigen::ArrayXd> vec_grad_view(detail::TensorNode& n) {
  Mat& g = acc_grad(n);
  return Eigen::Map<Eigen::ArrayXd>(g.data(), g.size());
}
}  // namespace

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  check_defined(a, "add_rowvec");
  if (a.rank() != 2) fail_dim("add_rowvec: rank-2 tensor required, got " + shape_str(a));
  check_vec_len(v, a.cols(), "add_rowvec");
  Tensor out = Tensor::zeros(a.shape());
  out.value() = a.value();
  out.value().array().rowwise() += vec_view(*v.node()).transpose();
  check_finite(out, "add_rowvec");
  NodePtr an = a.shared_node(), vn = v.shared_node(), on = out.shared_node();
  set_flags_and_record(out, a.requires_grad() || v.requires_grad(), [an, vn, on] {
    if (!has_out_grad(*on)) return;
    if (an->requires_grad) acc_grad(*an) += on->grad;
    if (vn->requires_grad)
      vec_grad_view(*vn) += on->grad.array().colwise().sum().transpose();
  });
  return out;
}

Tensor add_colvec(const Tensor& a, const Tensor& v) {
  check_defined(a, "add_colvec");
  if (a.rank() != 2) fail_dim("add_colvec: rank-2 tensor required, got " + shape_str(a));
  check_vec_len(v, a.rows(), "add_colvec");
  Tensor out = Tensor::zeros(a.shape());
  out.value() = a.value();
  out.value().array().colwise() += vec_view(*v.node());
  check_finite(out, "add_colvec");
  NodePtr an = a.shared_node(), vn = v.shared_node(), on = out.shared_node();
  set_flags_and_record(out, a.requires_grad() || v.requires_grad(), [an, vn, on] {
    if (!has_out_grad(*on)) return;
    if (an->requires_grad) acc_grad(*an) += on->grad;
    if (vn->requires_grad) vec_grad_view(*vn) += on->grad.array().rowwise().sum();
  });
  return out;
}

Tensor mul_rowvec(const Tensor& a, const Tensor& v) {
  check_defined(a, "mul_rowvec");
  if (a.rank() != 2) fail_dim("mul_rowvec: rank-2 tensor required, got " + shape_str(a));
  check_vec_len(v, a.cols(), "mul_rowvec");
  Tensor out = Tensor::zeros(a.shape());
  out.value().array() = a.value().array().rowwise() * vec_view(*v.node()).transpose();
  check_finite(out, "mul_rowvec");
  NodePtr an = a.shared_node(), vn = v.shared_node(), on = out.shared_node();
  set_flags_and_record(out, a.requires_grad() || v.requires_grad(), [an, vn, on] {
    if (!has_out_grad(*on)) return;
    if (an->requires_grad)
      acc_grad(*an).array() += on->grad.array().rowwise() * vec_view(*vn).transpose();
    if (vn->requires_grad)
      vec_grad_view(*vn) +=
          (on->grad.array() * an->value.array()).colwise().sum().transpose();
  });
  return out;
}

// ---------------------------------------------------------------------------
// Layer norm
// ---------------------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Scalar eps) {
  check_defined(x, "layer_norm");
  if (x.rank() != 2) fail_dim("layer_norm: rank-2 tensor required, got " + shape_str(x));
  const Index h = x.cols();
  if (h == 0) fail_dim("layer_norm: zero feature dimension");
  if (eps <= 0) fail_dim("layer_norm: eps must be positive");
  check_vec_len(gain, h, "layer_norm");
  check_vec_len(bias, h, "layer_norm");

  Tensor out = Tensor::zeros(x.shape());
  Mat xhat(x.rows(), h);
  Eigen::ArrayXd inv_sigma(x.rows());
  const auto g = vec_view(*gain.node());
  const auto b = vec_view(*bias.node());
  for (Index r = 0; r < x.rows(); ++r) {
    Eigen::ArrayXd row = x.value().row(r).transpose().array();
    const Scalar mu = row.mean();
    const Scalar var = (row - mu).square().mean();
    const Scalar inv = 1.0 / std::sqrt(var + eps);
    inv_sigma(r) = inv;
    xhat.row(r) = ((row - mu) * inv).transpose();
    out.value().row(r) = (xhat.row(r).transpose().array() * g + b).transpose();
  }
  check_finite(out, "layer_norm");

  NodePtr xn = x.shared_node(), gn = gain.shared_node(), bn = bias.shared_node(),
          on = out.shared_node();
  set_flags_and_record(
      out, x.requires_grad() || gain.requires_grad() || bias.requires_grad(),
      [xn, gn, bn, on, xhat, inv_sigma] {
        if (!has_out_grad(*on)) return;
        const Mat& go = on->grad;
        if (gn->requires_grad)
          vec_grad_view(*gn) += (go.array() * xhat.array()).colwise().sum().transpose();
        if (bn->requires_grad) vec_grad_view(*bn) += go.array().colwise().sum().transpose();
        if (xn->requires_grad) {
          Mat& gx = acc_grad(*xn);
          const auto g = vec_view(*gn);
          for (Index r = 0; r < go.rows(); ++r) {
            Eigen::ArrayXd dxhat = go.row(r).transpose().array() * g;
            const Scalar m1 = dxhat.mean();
            const Scalar m2 = (dxhat * xhat.row(r).transpose().array()).mean();
            gx.row(r).array() += (inv_sigma(r) *
                                  (dxhat - m1 - xhat.row(r).transpose().array() * m2))
                                     .transpose();
          }
        }
      });
  return out;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int ignore_id) {
  check_defined(logits, "cross_entropy");
  if (logits.rank() == 0) fail_dim("cross_entropy: logits must be rank 1 or 2");
  const Index n = logits.rank() == 1 ? 1 : logits.rows();
  const Index v = logits.rank() == 1 ? logits.rows() : logits.cols();
  if (static_cast<Index>(targets.size()) != n)
    fail_dim("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
             std::to_string(n) + " rows");
  if (v == 0) fail_dim("cross_entropy: zero classes");

  // Row-major view of the logits regardless of rank.
  Eigen::Map<const Mat> lv(logits.value().data(), n, v);

  Index selected = 0;
  Scalar total = 0.0;
  Mat probs(n, v);
  for (Index r = 0; r < n; ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    Eigen::ArrayXd row = lv.row(r).transpose().array();
    row -= row.maxCoeff();
    Eigen::ArrayXd ex = row.exp();
    const Scalar z = ex.sum();
    probs.row(r) = (ex / z).transpose();
    if (t == ignore_id) continue;
    if (t < 0 || t >= v)
      fail_dim("cross_entropy: target " + std::to_string(t) + " out of range [0," +
               std::to_string(v) + ")");
    total += std::log(z) - row(t);
    ++selected;
  }
  if (selected == 0) throw std::invalid_argument("cross_entropy: empty loss");

  Tensor out = Tensor::scalar(total / static_cast<Scalar>(selected));
  check_finite(out, "cross_entropy");
  NodePtr ln = logits.shared_node(), on = out.shared_node();
  const Scalar inv = 1.0 / static_cast<Scalar>(selected);
  set_flags_and_record(out, logits.requires_grad(),
                       [ln, on, probs, targets, ignore_id, inv, n, v] {
    if (!has_out_grad(*on)) return;
    const Scalar go = on->grad(0, 0);
    Mat& gl = acc_grad(*ln);
    Eigen::Map<Mat> gv(gl.data(), n, v);
    for (Index r = 0; r < n; ++r) {
      const int t = targets[static_cast<std::size_t>(r)];
      if (t == ignore_id) continue;
      gv.row(r) += probs.row(r) * (go * inv);
      gv(r, t) -= go * inv;
    }
  });
  return out;
}

Tensor bce_with_logits(const Tensor& logit, Scalar label) {
  check_defined(logit, "bce_with_logits");
  if (logit.numel() != 1) fail_dim("bce_with_logits: scalar logit required");
  if (label != 0.0 && label != 1.0) fail_dim("bce_with_logits: label must be 0 or 1");
  const Scalar z = logit.value()(0, 0);
  const Scalar loss = std::max(z, 0.0) - z * label + std::log1p(std::exp(-std::abs(z)));
  Tensor out = Tensor::scalar(loss);
  check_finite(out, "bce_with_logits");
  NodePtr zn = logit.shared_node(), on = out.shared_node();
  set_flags_and_record(out, logit.requires_grad(), [zn, on, z, label] {
    if (!has_out_grad(*on)) return;
    const Scalar sig = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    acc_grad(*zn)(0, 0) += on->grad(0, 0) * (sig - label);
  });
  return out;
}

Tensor dropout(const Tensor& x, Scalar p, std::mt19937_64& rng) {
  check_defined(x, "dropout");
  if (p < 0.0 || p >= 1.0) fail_dim("dropout: p must be in [0,1)");
  if (p == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  Mat mask(x.rows(), x.cols());
  const Scalar s = 1.0 / (1.0 - p);
  for (Index r = 0; r < mask.rows(); ++r)
    for (Index c = 0; c < mask.cols(); ++c) mask(r, c) = keep(rng) ? s : 0.0;
  Tensor out = Tensor::zeros(x.shape());
  out.value() = x.value().cwiseProduct(mask);
  NodePtr xn = x.shared_node(), on = out.shared_node();
  set_flags_and_record(out, x.requires_grad(), [xn, on, mask] {
    if (!has_out_grad(*on)) return;
    acc_grad(*xn) += on->grad.cwiseProduct(mask);
  });
  return out;
}

Tensor mean_of(const std::vector<Tensor>& scalars) {
  if (scalars.empty()) throw std::invalid_argument("mean_of: empty list");
  Tensor acc = scalars[0];
  for (std::size_t i = 1; i < scalars.size(); ++i) acc = add(acc, scalars[i]);
  return scale(acc, 1.0 / static_cast<Scalar>(scalars.size()));
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

namespace {
double grad_check_impl(const std::function<Tensor()>& f, Tensor x, double eps,
                       const std::vector<Index>& coords) {
  const bool old_flag = x.requires_grad();
  x.set_requires_grad(true);
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = f();
  }
  if (!loss.defined() || loss.numel() != 1)
    throw std::invalid_argument("grad_check: f must produce a scalar");
  x.zero_grad();
  backward(tape, loss);
  Mat analytic = x.has_grad() ? x.grad() : Mat(Mat::Zero(x.rows(), x.cols()));

  double max_err = 0.0;
  Scalar* data = x.value().data();
  for (Index i : coords) {
    const Scalar kept = data[i];
    data[i] = kept + eps;
    const Scalar fp = f().item();
    data[i] = kept - eps;
    const Scalar fm = f().item();
    data[i] = kept;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double a = analytic.data()[i];
    const double err = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
    max_err = std::max(max_err, err);
  }
  x.set_requires_grad(old_flag);
  return max_err;
}
}  // namespace

double grad_check(const std::function<Tensor()>& f, Tensor x, double eps) {
  std::vector<Index> coords(static_cast<std::size_t>(x.numel()));
  for (Index i = 0; i < x.numel(); ++i) coords[static_cast<std::size_t>(i)] = i;
  return grad_check_impl(f, x, eps, coords);
}

double grad_check_sampled(const std::function<Tensor()>& f, Tensor x, double eps,
                          std::size_t max_coords, std::mt19937_64& rng) {
  std::vector<Index> coords(static_cast<std::size_t>(x.numel()));
  for (Index i = 0; i < x.numel(); ++i) coords[static_cast<std::size_t>(i)] = i;
  if (coords.size() > max_coords) {
    for (std::size_t i = 0; i < max_coords; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, coords.size() - 1);
      std::swap(coords[i], coords[pick(rng)]);
    }
    coords.resize(max_coords);
  }
  return grad_check_impl(f, x, eps, coords);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

void write_tensor(std::ostream& os, const Tensor& t) {
  if (!t.defined()) throw std::invalid_argument("write_tensor: undefined tensor");
  const std::uint32_t rank = static_cast<std::uint32_t>(t.rank());
  os.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
  for (Index d : t.shape()) {
    const std::uint64_t dim = static_cast<std::uint64_t>(d);
    os.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
  }
  os.write(reinterpret_cast<const char*>(t.value().data()),
           static_cast<std::streamsize>(sizeof(Scalar)) * t.value().size());
  if (!os) throw std::runtime_error("write_tensor: stream failure");
}

Tensor read_tensor(std::istream& is, bool requires_grad) {
  std::uint32_t rank = 0;
  is.read(reinterpret_cast<char*>(&rank), sizeof(rank));
  if (!is || rank > 2) throw std::runtime_error("read_tensor: bad rank field");
  std::vector<Index> shape;
  for (std::uint32_t i = 0; i < rank; ++i) {
    std::uint64_t dim = 0;
    is.read(reinterpret_cast<char*>(&dim), sizeof(dim));
    if (!is) throw std::runtime_error("read_tensor: truncated dims");
    shape.push_back(static_cast<Index>(dim));
  }
  Tensor t = Tensor::zeros(shape, requires_grad);
  is.read(reinterpret_cast<char*>(t.value().data()),
          static_cast<std::streamsize>(sizeof(Scalar)) * t.value().size());
  if (!is) throw std::runtime_error("read_tensor: truncated data");
  return t;
}

}  // namespace unicoder
