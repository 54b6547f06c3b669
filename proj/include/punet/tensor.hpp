// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "punet/rng.hpp"

namespace punet {

using i64 = std::int64_t;
using Shape = std::vector<i64>;

i64 shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// When enabled, every primitive asserts its output carries no NaN and no
// +inf after the forward pass (-inf is legitimate in log-space ops).
void set_debug_finite_checks(bool enabled);
bool debug_finite_checks();

namespace detail {
struct Node;
using NodePtr = std::shared_ptr<Node>;

// Graph node. `data` is shared so a leaf can view another tensor's storage
// (same values, private gradient); see Tensor::leaf_view.
struct Node {
  Shape shape;
  std::shared_ptr<std::vector<double>> data;
  std::vector<double> grad;  // allocated on first use
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";

  i64 numel() const { return static_cast<i64>(data->size()); }
  double* values() { return data->data(); }
  const double* values() const { return data->data(); }
  std::vector<double>& grad_buf();
};
}  // namespace detail

// Dense double-precision tensor participating in a define-by-run autodiff
// graph. Copying the handle aliases the node; no tracked tensor is mutated
// in place once it has been consumed by an op.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> values,
                          bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0,
                      bool requires_grad = false);
  // Glorot-uniform for a (fan_out x fan_in) weight matrix.
  static Tensor xavier(i64 fan_out, i64 fan_in, Rng& rng,
                       bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  i64 dim(int axis) const;
  i64 numel() const;
  bool requires_grad() const;
  const char* op() const;

  double* data();
  const double* data() const;
  double scalar() const;  // numel()==1
  double at(i64 row, i64 col) const;

  // Gradient of the last backward() pass; empty until then.
  const std::vector<double>& grad() const;
  void zero_grad();

  // New leaf sharing this tensor's storage but owning a private gradient.
  // Frozen parameters can be shared read-only across threads this way.
  Tensor leaf_view(bool requires_grad) const;
  // Deep copy, detached from the graph.
  Tensor clone_detached(bool requires_grad = false) const;

  detail::NodePtr node() const { return node_; }
  static Tensor wrap(detail::NodePtr n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  detail::NodePtr node_;
};

// ---- primitive ops (each registers a backward rule) ----

Tensor matmul(const Tensor& a, const Tensor& b);     // (m,k)x(k,n)
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // (m,k)x(n,k)^T
Tensor transpose(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_rowvec(const Tensor& x, const Tensor& bias);  // (t,n)+(n)
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);

Tensor sigmoid(const Tensor& x);
Tensor swish(const Tensor& x);
Tensor relu(const Tensor& x);
// (t,2n) -> (t,n): first half gated by sigmoid of second half.
Tensor glu_cols(const Tensor& x);

Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma,
                       const Tensor& beta, double eps = 1e-5);

// Same data, new extents (numel preserved); gradient passes through.
Tensor reshape(const Tensor& x, Shape shape);

Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& x, i64 first, i64 count);
Tensor slice_rows(const Tensor& x, i64 first, i64 count);
// (t,k) -> (t,k*r): each source column expanded into r adjacent copies.
Tensor repeat_cols(const Tensor& x, i64 repeat);
// Row lookup by index, duplicates allowed (embedding gather).
Tensor gather_rows(const Tensor& x, const std::vector<i64>& rows);
// Column lookup by index on a (t,c) tensor -> (t,|cols|).
Tensor gather_cols(const Tensor& x, const std::vector<i64>& cols);
// Shift every row right by k, filling with `fill` (log-space: -inf).
Tensor shift_cols(const Tensor& x, i64 k, double fill);

Tensor logaddexp(const Tensor& a, const Tensor& b);

Tensor mean_all(const Tensor& x);
Tensor sum_all(const Tensor& x);

// General 1-D convolution over time. x is (t, c_in); w is
// (c_out, c_in * k) with kernel position fastest; output is
// (ceil(t / stride), c_out), centred same-padding, k odd.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, i64 kernel,
              i64 stride);
// Depthwise variant: w is (c, k), stride 1.
Tensor depthwise_conv1d(const Tensor& x, const Tensor& w, const Tensor& b);

// Relative-attention skew: (t, 2t-1) -> (t, t),
// out[i][j] = x[i][j - i + t - 1] (column p encodes offset p - (t-1)).
Tensor rel_shift(const Tensor& x);

// Mean negative log-likelihood of `targets` under per-row log-probs, with
// uniform label smoothing epsilon over all classes.
Tensor nll_smoothed(const Tensor& log_probs, const std::vector<i64>& targets,
                    double epsilon);

// Multiplies by a pre-drawn 0/scale mask; identity when rate == 0.
Tensor dropout(const Tensor& x, double rate, Rng& rng);

// Reverse-mode sweep from a scalar root. Gradients accumulate into each
// reachable node's grad buffer (leaves keep theirs; interior buffers are
// released as the sweep retires them).
void backward(const Tensor& root);

// ---- parameters ----

class ParamStore {
 public:
  // Declares a new named parameter; the name must be unused.
  Tensor& declare(const std::string& name, Tensor value);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const;
  void set_data(const std::string& name, const std::vector<double>& values);

  std::size_t size() const { return params_.size(); }
  std::uint64_t version() const { return version_; }
  void bump_version() { ++version_; }
  void set_version(std::uint64_t v) { version_ = v; }

  void zero_grads();
  // Leaf views over the same storage (private grads); used to run
  // independent graphs against shared weights.
  ParamStore graph_view(bool requires_grad) const;

  std::map<std::string, Tensor>& entries() { return params_; }
  const std::map<std::string, Tensor>& entries() const { return params_; }

 private:
  std::map<std::string, Tensor> params_;
  std::uint64_t version_ = 0;
};

// ---- verification oracle ----

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  i64 worst_index = -1;
};

// Central-difference gradient check of a deterministic scalar function of
// the store's parameters. Samples up to `samples_per_param` coordinates of
// each parameter. Non-determinism (two forward evaluations disagreeing) is
// rejected.
FiniteDiffReport finite_difference_check(
    const std::function<Tensor(ParamStore&)>& f, ParamStore& params,
    double h = 1e-5, i64 samples_per_param = 4, std::uint64_t sample_seed = 1,
    double floor = 1e-6);

}  // namespace punet
