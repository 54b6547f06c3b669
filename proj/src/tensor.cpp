// SPDX-License-Identifier: Apache-2.0
#include "punet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_set>
#include <utility>

#ifdef PUNET_USE_BLAS
#include <cblas.h>
#endif

namespace punet {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool g_debug_finite = false;

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error("tensor: " + msg);
}

void require(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

// Row-major dgemm: C = alpha * op(A) * op(B) + beta * C.
void dgemm(bool ta, bool tb, i64 m, i64 n, i64 k, double alpha,
           const double* a, i64 lda, const double* b, i64 ldb, double beta,
           double* c, i64 ldc) {
#ifdef PUNET_USE_BLAS
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
              tb ? CblasTrans : CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c,
              static_cast<int>(ldc));
#else
  for (i64 i = 0; i < m; ++i) {
    for (i64 j = 0; j < n; ++j) {
      double acc = 0.0;
      for (i64 p = 0; p < k; ++p) {
        const double av = ta ? a[p * lda + i] : a[i * lda + p];
        const double bv = tb ? b[j * ldb + p] : b[p * ldb + j];
        acc += av * bv;
      }
      double prior = (beta == 0.0) ? 0.0 : beta * c[i * ldc + j];
      c[i * ldc + j] = prior + alpha * acc;
    }
  }
#endif
}

detail::NodePtr make_node(const Shape& shape) {
  auto n = std::make_shared<detail::Node>();
  n->shape = shape;
  n->data = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(shape_numel(shape)), 0.0);
  return n;
}

Tensor finish(detail::NodePtr out, const char* op,
              std::vector<detail::NodePtr> parents,
              std::function<void(detail::Node&)> backward_rule) {
  out->op = op;
  out->is_leaf = false;
  bool rg = false;
  for (const auto& p : parents) rg = rg || (p && p->requires_grad);
  out->requires_grad = rg;
  if (rg) {
    out->parents = std::move(parents);
    out->backward_fn = std::move(backward_rule);
  }
  if (g_debug_finite) {
    for (double v : *out->data) {
      if (std::isnan(v)) fail(std::string(op) + ": NaN in output");
      if (std::isinf(v) && v > 0) fail(std::string(op) + ": +inf in output");
    }
  }
  return Tensor::wrap(std::move(out));
}

void check_rank2(const Tensor& t, const char* op) {
  require(t.defined() && t.shape().size() == 2,
          std::string(op) + ": expected rank-2 tensor, got " +
              (t.defined() ? shape_str(t.shape()) : "<undefined>"));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.defined() && b.defined() && a.shape() == b.shape(),
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
              " vs " + shape_str(b.shape()));
}

double log_add(double x, double y) {
  if (x == kNegInf) return y;
  if (y == kNegInf) return x;
  const double m = std::max(x, y);
  return m + std::log1p(std::exp(-std::abs(x - y)));
}

}  // namespace

i64 shape_numel(const Shape& shape) {
  i64 n = 1;
  for (i64 d : shape) {
    require(d >= 0, "negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

void set_debug_finite_checks(bool enabled) { g_debug_finite = enabled; }
bool debug_finite_checks() { return g_debug_finite; }

std::vector<double>& detail::Node::grad_buf() {
  if (grad.empty()) grad.assign(data->size(), 0.0);
  return grad;
}

// ---- construction ----

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = make_node(shape);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = make_node(shape);
  std::fill(n->data->begin(), n->data->end(), value);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values,
                         bool requires_grad) {
  require(shape_numel(shape) == static_cast<i64>(values.size()),
          "from_data: " + shape_str(shape) + " does not hold " +
              std::to_string(values.size()) + " values");
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->data = std::make_shared<std::vector<double>>(std::move(values));
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  auto n = make_node(shape);
  for (double& v : *n->data) v = rng.gaussian(0.0, stddev);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::xavier(i64 fan_out, i64 fan_in, Rng& rng, bool requires_grad) {
  require(fan_out > 0 && fan_in > 0, "xavier: fans must be positive");
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  auto n = make_node({fan_out, fan_in});
  for (double& v : *n->data) v = rng.uniform(-limit, limit);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

// ---- accessors ----

const Shape& Tensor::shape() const {
  require(defined(), "shape of undefined tensor");
  return node_->shape;
}

i64 Tensor::dim(int axis) const {
  const Shape& s = shape();
  require(axis >= 0 && axis < static_cast<int>(s.size()),
          "dim: axis out of range");
  return s[axis];
}

i64 Tensor::numel() const {
  require(defined(), "numel of undefined tensor");
  return node_->numel();
}

bool Tensor::requires_grad() const { return defined() && node_->requires_grad; }

const char* Tensor::op() const { return defined() ? node_->op : "<undefined>"; }

double* Tensor::data() {
  require(defined(), "data of undefined tensor");
  return node_->values();
}

const double* Tensor::data() const {
  require(defined(), "data of undefined tensor");
  return node_->values();
}

double Tensor::scalar() const {
  require(defined() && numel() == 1,
          "scalar: tensor is not a single element");
  return (*node_->data)[0];
}

double Tensor::at(i64 row, i64 col) const {
  check_rank2(*this, "at");
  require(row >= 0 && row < dim(0) && col >= 0 && col < dim(1),
          "at: index out of range");
  return (*node_->data)[static_cast<std::size_t>(row * dim(1) + col)];
}

const std::vector<double>& Tensor::grad() const {
  require(defined(), "grad of undefined tensor");
  return node_->grad;
}

void Tensor::zero_grad() {
  require(defined(), "zero_grad of undefined tensor");
  node_->grad.clear();
}

Tensor Tensor::leaf_view(bool requires_grad) const {
  require(defined(), "leaf_view of undefined tensor");
  auto n = std::make_shared<detail::Node>();
  n->shape = node_->shape;
  n->data = node_->data;  // shared storage, private gradient
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::clone_detached(bool requires_grad) const {
  require(defined(), "clone of undefined tensor");
  auto n = std::make_shared<detail::Node>();
  n->shape = node_->shape;
  n->data = std::make_shared<std::vector<double>>(*node_->data);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

// ---- matrix ops ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank2(a, "matmul");
  check_rank2(b, "matmul");
  const i64 m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, "matmul: inner dims " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
  auto A = a.node(), B = b.node();
  auto out = make_node({m, n});
  dgemm(false, false, m, n, k, 1.0, A->values(), k, B->values(), n, 0.0,
        out->values(), n);
  return finish(out, "matmul", {A, B}, [A, B, m, n, k](detail::Node& self) {
    const double* g = self.grad.data();
    if (A->requires_grad)
      dgemm(false, true, m, k, n, 1.0, g, n, B->values(), n, 1.0,
            A->grad_buf().data(), k);
    if (B->requires_grad)
      dgemm(true, false, k, n, m, 1.0, A->values(), k, g, n, 1.0,
            B->grad_buf().data(), n);
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_rank2(a, "matmul_nt");
  check_rank2(b, "matmul_nt");
  const i64 m = a.dim(0), k = a.dim(1), n = b.dim(0);
  require(b.dim(1) == k, "matmul_nt: inner dims " + shape_str(a.shape()) +
                             " x " + shape_str(b.shape()) + "^T");
  auto A = a.node(), B = b.node();
  auto out = make_node({m, n});
  dgemm(false, true, m, n, k, 1.0, A->values(), k, B->values(), k, 0.0,
        out->values(), n);
  return finish(out, "matmul_nt", {A, B}, [A, B, m, n, k](detail::Node& self) {
    const double* g = self.grad.data();
    if (A->requires_grad)
      dgemm(false, false, m, k, n, 1.0, g, n, B->values(), k, 1.0,
            A->grad_buf().data(), k);
    if (B->requires_grad)
      dgemm(true, false, n, k, m, 1.0, g, n, A->values(), k, 1.0,
            B->grad_buf().data(), k);
  });
}

Tensor transpose(const Tensor& x) {
  check_rank2(x, "transpose");
  const i64 r = x.dim(0), c = x.dim(1);
  auto X = x.node();
  auto out = make_node({c, r});
  for (i64 i = 0; i < r; ++i)
    for (i64 j = 0; j < c; ++j)
      (*out->data)[j * r + i] = X->values()[i * c + j];
  return finish(out, "transpose", {X}, [X, r, c](detail::Node& self) {
    if (!X->requires_grad) return;
    double* gx = X->grad_buf().data();
    const double* g = self.grad.data();
    for (i64 i = 0; i < r; ++i)
      for (i64 j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
  });
}

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  auto A = a.node(), B = b.node();
  auto out = make_node(A->shape);
  const i64 n = A->numel();
  for (i64 i = 0; i < n; ++i)
    (*out->data)[i] = A->values()[i] + B->values()[i];
  return finish(out, "add", {A, B}, [A, B, n](detail::Node& self) {
    const double* g = self.grad.data();
    if (A->requires_grad) {
      double* ga = A->grad_buf().data();
      for (i64 i = 0; i < n; ++i) ga[i] += g[i];
    }
    if (B->requires_grad) {
      double* gb = B->grad_buf().data();
      for (i64 i = 0; i < n; ++i) gb[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  auto A = a.node(), B = b.node();
  auto out = make_node(A->shape);
  const i64 n = A->numel();
  for (i64 i = 0; i < n; ++i)
    (*out->data)[i] = A->values()[i] - B->values()[i];
  return finish(out, "sub", {A, B}, [A, B, n](detail::Node& self) {
    const double* g = self.grad.data();
    if (A->requires_grad) {
      double* ga = A->grad_buf().data();
      for (i64 i = 0; i < n; ++i) ga[i] += g[i];
    }
    if (B->requires_grad) {
      double* gb = B->grad_buf().data();
      for (i64 i = 0; i < n; ++i) gb[i] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  auto A = a.node(), B = b.node();
  auto out = make_node(A->shape);
  const i64 n = A->numel();
  for (i64 i = 0; i < n; ++i)
    (*out->data)[i] = A->values()[i] * B->values()[i];
  return finish(out, "mul", {A, B}, [A, B, n](detail::Node& self) {
    const double* g = self.grad.data();
    if (A->requires_grad) {
      double* ga = A->grad_buf().data();
      for (i64 i = 0; i < n; ++i) ga[i] += g[i] * B->values()[i];
    }
    if (B->requires_grad) {
      double* gb = B->grad_buf().data();
      for (i64 i = 0; i < n; ++i) gb[i] += g[i] * A->values()[i];
    }
  });
}

Tensor add_rowvec(const Tensor& x, const Tensor& bias) {
  check_rank2(x, "add_rowvec");
  require(bias.defined() && bias.shape().size() == 1 &&
              bias.dim(0) == x.dim(1),
          "add_rowvec: bias " +
              (bias.defined() ? shape_str(bias.shape()) : "<undefined>") +
              " does not match " + shape_str(x.shape()));
  const i64 t = x.dim(0), n = x.dim(1);
  auto X = x.node(), B = bias.node();
  auto out = make_node({t, n});
  for (i64 i = 0; i < t; ++i)
    for (i64 j = 0; j < n; ++j)
      (*out->data)[i * n + j] = X->values()[i * n + j] + B->values()[j];
  return finish(out, "add_rowvec", {X, B}, [X, B, t, n](detail::Node& self) {
    const double* g = self.grad.data();
    if (X->requires_grad) {
      double* gx = X->grad_buf().data();
      for (i64 i = 0; i < t * n; ++i) gx[i] += g[i];
    }
    if (B->requires_grad) {
      double* gb = B->grad_buf().data();
      for (i64 i = 0; i < t; ++i)
        for (i64 j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  });
}

Tensor scale(const Tensor& x, double c) {
  require(x.defined(), "scale: undefined tensor");
  auto X = x.node();
  auto out = make_node(X->shape);
  const i64 n = X->numel();
  for (i64 i = 0; i < n; ++i) (*out->data)[i] = X->values()[i] * c;
  return finish(out, "scale", {X}, [X, c, n](detail::Node& self) {
    if (!X->requires_grad) return;
    double* gx = X->grad_buf().data();
    const double* g = self.grad.data();
    for (i64 i = 0; i < n; ++i) gx[i] += g[i] * c;
  });
}

Tensor add_scalar(const Tensor& x, double c) {
  require(x.defined(), "add_scalar: undefined tensor");
  auto X = x.node();
  auto out = make_node(X->shape);
  const i64 n = X->numel();
  for (i64 i = 0; i < n; ++i) (*out->data)[i] = X->values()[i] + c;
  return finish(out, "add_scalar", {X}, [X, n](detail::Node& self) {
    if (!X->requires_grad) return;
    double* gx = X->grad_buf().data();
    const double* g = self.grad.data();
    for (i64 i = 0; i < n; ++i) gx[i] += g[i];
  });
}

Tensor sigmoid(const Tensor& x) {
  require(x.defined(), "sigmoid: undefined tensor");
  auto X = x.node();
  auto out = make_node(X->shape);
  const i64 n = X->numel();
  for (i64 i = 0; i < n; ++i)
    (*out->data)[i] = 1.0 / (1.0 + std::exp(-X->values()[i]));
  return finish(out, "sigmoid", {X}, [X, n](detail::Node& self) {
    if (!X->requires_grad) return;
    double* gx = X->grad_buf().data();
    const double* g = self.grad.data();
    const double* y = self.values();
    for (i64 i = 0; i < n; ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Tensor swish(const Tensor& x) {
  require(x.defined(), "swish: undefined tensor");
  auto X = x.node();
  const i64 n = X->numel();
  auto sig = std::make_shared<std::vector<double>>(n);
  auto out = make_node(X->shape);
  for (i64 i = 0; i < n; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-X->values()[i]));
    (*sig)[i] = s;
    (*out->data)[i] = X->values()[i] * s;
  }
  return finish(out, "swish", {X}, [X, sig, n](detail::Node& self) {
    if (!X->requires_grad) return;
    double* gx = X->grad_buf().data();
    const double* g = self.grad.data();
    for (i64 i = 0; i < n; ++i) {
      const double s = (*sig)[i];
      gx[i] += g[i] * (s + X->values()[i] * s * (1.0 - s));
    }
  });
}

Tensor relu(const Tensor& x) {
  require(x.defined(), "relu: undefined tensor");
  auto X = x.node();
  auto out = make_node(X->shape);
  const i64 n = X->numel();
  for (i64 i = 0; i < n; ++i)
    (*out->data)[i] = X->values()[i] > 0.0 ? X->values()[i] : 0.0;
  return finish(out, "relu", {X}, [X, n](detail::Node& self) {
    if (!X->requires_grad) return;
    double* gx = X->grad_buf().data();
    const double* g = self.grad.data();
    for (i64 i = 0; i < n; ++i)
      if (X->values()[i] > 0.0) gx[i] += g[i];
  });
}

Tensor glu_cols(const Tensor& x) {
  check_rank2(x, "glu_cols");
  require(x.dim(1) % 2 == 0, "glu_cols: odd column count");
  const i64 t = x.dim(0), half = x.dim(1) / 2, w = x.dim(1);
  auto X = x.node();
  auto sig = std::make_shared<std::vector<double>>(t * half);
  auto out = make_node({t, half});
  for (i64 i = 0; i < t; ++i) {
    for (i64 j = 0; j < half; ++j) {
      const double s =
          1.0 / (1.0 + std::exp(-X->values()[i * w + half + j]));
      (*sig)[i * half + j] = s;
      (*out->data)[i * half + j] = X->values()[i * w + j] * s;
    }
  }
  return finish(out, "glu_cols", {X}, [X, sig, t, half, w](detail::Node& self) {
    if (!X->requires_grad) return;
    double* gx = X->grad_buf().data();
    const double* g = self.grad.data();
    for (i64 i = 0; i < t; ++i) {
      for (i64 j = 0; j < half; ++j) {
        const double s = (*sig)[i * half + j];
        const double a = X->values()[i * w + j];
        gx[i * w + j] += g[i * half + j] * s;
        gx[i * w + half + j] += g[i * half + j] * a * s * (1.0 - s);
      }
    }
  });
}

// ---- row-wise normalizations ----

Tensor softmax_rows(const Tensor& x) {
  check_rank2(x, "softmax_rows");
  const i64 t = x.dim(0), n = x.dim(1);
  auto X = x.node();
  auto out = make_node({t, n});
  for (i64 i = 0; i < t; ++i) {
    const double* row = X->values() + i * n;
    double m = row[0];
    for (i64 j = 1; j < n; ++j) m = std::max(m, row[j]);
    double s = 0.0;
    for (i64 j = 0; j < n; ++j) {
      const double e = std::exp(row[j] - m);
      (*out->data)[i * n + j] = e;
      s += e;
    }
    for (i64 j = 0; j < n; ++j) (*out->data)[i * n + j] /= s;
  }
  return finish(out, "softmax_rows", {X}, [X, t, n](detail::Node& self) {
    if (!X->requires_grad) return;
    double* gx = X->grad_buf().data();
    const double* g = self.grad.data();
    const double* y = self.values();
    for (i64 i = 0; i < t; ++i) {
      double dot = 0.0;
      for (i64 j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
      for (i64 j = 0; j < n; ++j)
        gx[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
    }
  });
}

Tensor log_softmax_rows(const Tensor& x) {
  check_rank2(x, "log_softmax_rows");
  const i64 t = x.dim(0), n = x.dim(1);
  auto X = x.node();
  auto out = make_node({t, n});
  for (i64 i = 0; i < t; ++i) {
    const double* row = X->values() + i * n;
    double m = row[0];
    for (i64 j = 1; j < n; ++j) m = std::max(m, row[j]);
    double s = 0.0;
    for (i64 j = 0; j < n; ++j) s += std::exp(row[j] - m);
    const double lse = m + std::log(s);
    for (i64 j = 0; j < n; ++j) (*out->data)[i * n + j] = row[j] - lse;
  }
  return finish(out, "log_softmax_rows", {X}, [X, t, n](detail::Node& self) {
    if (!X->requires_grad) return;
    double* gx = X->grad_buf().data();
    const double* g = self.grad.data();
    const double* y = self.values();
    for (i64 i = 0; i < t; ++i) {
      double gsum = 0.0;
      for (i64 j = 0; j < n; ++j) gsum += g[i * n + j];
      for (i64 j = 0; j < n; ++j)
        gx[i * n + j] += g[i * n + j] - std::exp(y[i * n + j]) * gsum;
    }
  });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma,
                       const Tensor& beta, double eps) {
  check_rank2(x, "layer_norm_rows");
  const i64 t = x.dim(0), n = x.dim(1);
  require(gamma.defined() && gamma.shape() == Shape{n} && beta.defined() &&
              beta.shape() == Shape{n},
          "layer_norm_rows: gamma/beta must be rank-1 of width " +
              std::to_string(n));
  auto X = x.node(), G = gamma.node(), B = beta.node();
  auto xhat = std::make_shared<std::vector<double>>(t * n);
  auto inv = std::make_shared<std::vector<double>>(t);
  auto out = make_node({t, n});
  for (i64 i = 0; i < t; ++i) {
    const double* row = X->values() + i * n;
    double mean = 0.0;
    for (i64 j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (i64 j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    const double iv = 1.0 / std::sqrt(var + eps);
    (*inv)[i] = iv;
    for (i64 j = 0; j < n; ++j) {
      const double xh = (row[j] - mean) * iv;
      (*xhat)[i * n + j] = xh;
      (*out->data)[i * n + j] = G->values()[j] * xh + B->values()[j];
    }
  }
  return finish(out, "layer_norm_rows", {X, G, B},
                [X, G, B, xhat, inv, t, n](detail::Node& self) {
    const double* g = self.grad.data();
    if (G->requires_grad) {
      double* gg = G->grad_buf().data();
      for (i64 i = 0; i < t; ++i)
        for (i64 j = 0; j < n; ++j)
          gg[j] += g[i * n + j] * (*xhat)[i * n + j];
    }
    if (B->requires_grad) {
      double* gb = B->grad_buf().data();
      for (i64 i = 0; i < t; ++i)
        for (i64 j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
    if (X->requires_grad) {
      double* gx = X->grad_buf().data();
      for (i64 i = 0; i < t; ++i) {
        double mean_dxh = 0.0, mean_dxh_xh = 0.0;
        for (i64 j = 0; j < n; ++j) {
          const double dxh = g[i * n + j] * G->values()[j];
          mean_dxh += dxh;
          mean_dxh_xh += dxh * (*xhat)[i * n + j];
        }
        mean_dxh /= static_cast<double>(n);
        mean_dxh_xh /= static_cast<double>(n);
        for (i64 j = 0; j < n; ++j) {
          const double dxh = g[i * n + j] * G->values()[j];
          gx[i * n + j] += (*inv)[i] * (dxh - mean_dxh -
                                        (*xhat)[i * n + j] * mean_dxh_xh);
        }
      }
    }
  });
}

// ---- reshaping / indexing ----

Tensor reshape(const Tensor& x, Shape shape) {
  require(x.defined(), "reshape: undefined tensor");
  require(shape_numel(shape) == x.numel(),
          "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape) +
              " changes element count");
  auto X = x.node();
  auto out = make_node(shape);
  *out->data = *X->data;
  const i64 n = X->numel();
  return finish(out, "reshape", {X}, [X, n](detail::Node& self) {
    if (!X->requires_grad) return;
    double* gx = X->grad_buf().data();
    const double* g = self.grad.data();
    for (i64 i = 0; i < n; ++i) gx[i] += g[i];
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  check_rank2(parts[0], "concat_cols");
  const i64 t = parts[0].dim(0);
  i64 total = 0;
  std::vector<detail::NodePtr> nodes;
  std::vector<i64> widths;
  for (const auto& p : parts) {
    check_rank2(p, "concat_cols");
    require(p.dim(0) == t, "concat_cols: row count mismatch");
    nodes.push_back(p.node());
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  auto out = make_node({t, total});
  i64 off = 0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const i64 w = widths[k];
    for (i64 i = 0; i < t; ++i)
      std::memcpy(out->data->data() + i * total + off,
                  nodes[k]->values() + i * w, sizeof(double) * w);
    off += w;
  }
  return finish(out, "concat_cols", nodes,
                [nodes, widths, t, total](detail::Node& self) {
    const double* g = self.grad.data();
    i64 off = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      const i64 w = widths[k];
      if (nodes[k]->requires_grad) {
        double* gp = nodes[k]->grad_buf().data();
        for (i64 i = 0; i < t; ++i)
          for (i64 j = 0; j < w; ++j) gp[i * w + j] += g[i * total + off + j];
      }
      off += w;
    }
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  check_rank2(parts[0], "concat_rows");
  const i64 n = parts[0].dim(1);
  i64 total = 0;
  std::vector<detail::NodePtr> nodes;
  std::vector<i64> heights;
  for (const auto& p : parts) {
    check_rank2(p, "concat_rows");
    require(p.dim(1) == n, "concat_rows: column count mismatch");
    nodes.push_back(p.node());
    heights.push_back(p.dim(0));
    total += p.dim(0);
  }
  auto out = make_node({total, n});
  i64 off = 0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    std::memcpy(out->data->data() + off * n, nodes[k]->values(),
                sizeof(double) * heights[k] * n);
    off += heights[k];
  }
  return finish(out, "concat_rows", nodes,
                [nodes, heights, n](detail::Node& self) {
    const double* g = self.grad.data();
    i64 off = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (nodes[k]->requires_grad) {
        double* gp = nodes[k]->grad_buf().data();
        for (i64 i = 0; i < heights[k] * n; ++i) gp[i] += g[off * n + i];
      }
      off += heights[k];
    }
  });
}

Tensor slice_cols(const Tensor& x, i64 first, i64 count) {
  check_rank2(x, "slice_cols");
  const i64 t = x.dim(0), n = x.dim(1);
  require(first >= 0 && count >= 0 && first + count <= n,
          "slice_cols: [" + std::to_string(first) + "," +
              std::to_string(first + count) + ") outside width " +
              std::to_string(n));
  auto X = x.node();
  auto out = make_node({t, count});
  for (i64 i = 0; i < t; ++i)
    std::memcpy(out->data->data() + i * count, X->values() + i * n + first,
                sizeof(double) * count);
  return finish(out, "slice_cols", {X},
                [X, first, count, t, n](detail::Node& self) {
    if (!X->requires_grad) return;
    double* gx = X->grad_buf().data();
    const double* g = self.grad.data();
    for (i64 i = 0; i < t; ++i)
      for (i64 j = 0; j < count; ++j)
        gx[i * n + first + j] += g[i * count + j];
  });
}

Tensor slice_rows(const Tensor& x, i64 first, i64 count) {
  check_rank2(x, "slice_rows");
  const i64 t = x.dim(0), n = x.dim(1);
  require(first >= 0 && count >= 0 && first + count <= t,
          "slice_rows: [" + std::to_string(first) + "," +
              std::to_string(first + count) + ") outside height " +
              std::to_string(t));
  auto X = x.node();
  auto out = make_node({count, n});
  std::memcpy(out->data->data(), X->values() + first * n,
              sizeof(double) * count * n);
  return finish(out, "slice_rows", {X},
                [X, first, count, n](detail::Node& self) {
    if (!X->requires_grad) return;
    double* gx = X->grad_buf().data();
    const double* g = self.grad.data();
    for (i64 i = 0; i < count * n; ++i) gx[first * n + i] += g[i];
  });
}

Tensor repeat_cols(const Tensor& x, i64 repeat) {
  check_rank2(x, "repeat_cols");
  require(repeat > 0, "repeat_cols: repeat must be positive");
  const i64 t = x.dim(0), k = x.dim(1);
  auto X = x.node();
  auto out = make_node({t, k * repeat});
  for (i64 i = 0; i < t; ++i)
    for (i64 j = 0; j < k; ++j)
      for (i64 q = 0; q < repeat; ++q)
        (*out->data)[(i * k + j) * repeat + q] = X->values()[i * k + j];
  return finish(out, "repeat_cols", {X}, [X, t, k, repeat](detail::Node& self) {
    if (!X->requires_grad) return;
    double* gx = X->grad_buf().data();
    const double* g = self.grad.data();
    for (i64 i = 0; i < t; ++i)
      for (i64 j = 0; j < k; ++j) {
        double acc = 0.0;
        for (i64 q = 0; q < repeat; ++q) acc += g[(i * k + j) * repeat + q];
        gx[i * k + j] += acc;
      }
  });
}

Tensor gather_rows(const Tensor& x, const std::vector<i64>& rows) {
  check_rank2(x, "gather_rows");
  const i64 t = x.dim(0), n = x.dim(1);
  for (i64 r : rows)
    require(r >= 0 && r < t, "gather_rows: index " + std::to_string(r) +
                                 " outside height " + std::to_string(t));
  auto X = x.node();
  const i64 m = static_cast<i64>(rows.size());
  auto out = make_node({m, n});
  for (i64 i = 0; i < m; ++i)
    std::memcpy(out->data->data() + i * n, X->values() + rows[i] * n,
                sizeof(double) * n);
  return finish(out, "gather_rows", {X}, [X, rows, n](detail::Node& self) {
    if (!X->requires_grad) return;
    double* gx = X->grad_buf().data();
    const double* g = self.grad.data();
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (i64 j = 0; j < n; ++j)
        gx[rows[i] * n + j] += g[static_cast<i64>(i) * n + j];
  });
}

Tensor gather_cols(const Tensor& x, const std::vector<i64>& cols) {
  check_rank2(x, "gather_cols");
  const i64 t = x.dim(0), n = x.dim(1);
  for (i64 c : cols)
    require(c >= 0 && c < n, "gather_cols: index " + std::to_string(c) +
                                 " outside width " + std::to_string(n));
  auto X = x.node();
  const i64 m = static_cast<i64>(cols.size());
  auto out = make_node({t, m});
  for (i64 i = 0; i < t; ++i)
    for (i64 j = 0; j < m; ++j)
      (*out->data)[i * m + j] = X->values()[i * n + cols[j]];
  return finish(out, "gather_cols", {X}, [X, cols, t, n](detail::Node& self) {
    if (!X->requires_grad) return;
    double* gx = X->grad_buf().data();
    const double* g = self.grad.data();
    const i64 m = static_cast<i64>(cols.size());
    for (i64 i = 0; i < t; ++i)
      for (i64 j = 0; j < m; ++j)
        gx[i * n + cols[j]] += g[i * m + j];
  });
}

Tensor shift_cols(const Tensor& x, i64 k, double fill) {
  check_rank2(x, "shift_cols");
  const i64 t = x.dim(0), n = x.dim(1);
  require(k >= 0 && k <= n, "shift_cols: shift " + std::to_string(k) +
                                " outside [0," + std::to_string(n) + "]");
  auto X = x.node();
  auto out = make_node({t, n});
  for (i64 i = 0; i < t; ++i)
    for (i64 j = 0; j < n; ++j)
      (*out->data)[i * n + j] =
          (j < k) ? fill : X->values()[i * n + j - k];
  return finish(out, "shift_cols", {X}, [X, k, t, n](detail::Node& self) {
    if (!X->requires_grad) return;
    double* gx = X->grad_buf().data();
    const double* g = self.grad.data();
    for (i64 i = 0; i < t; ++i)
      for (i64 j = k; j < n; ++j) gx[i * n + j - k] += g[i * n + j];
  });
}

Tensor logaddexp(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "logaddexp");
  auto A = a.node(), B = b.node();
  auto out = make_node(A->shape);
  const i64 n = A->numel();
  for (i64 i = 0; i < n; ++i)
    (*out->data)[i] = log_add(A->values()[i], B->values()[i]);
  return finish(out, "logaddexp", {A, B}, [A, B, n](detail::Node& self) {
    const double* g = self.grad.data();
    const double* y = self.values();
    for (i64 i = 0; i < n; ++i) {
      if (y[i] == kNegInf) continue;  // both inputs impossible: no gradient
      if (A->requires_grad)
        A->grad_buf()[i] += g[i] * std::exp(A->values()[i] - y[i]);
      if (B->requires_grad)
        B->grad_buf()[i] += g[i] * std::exp(B->values()[i] - y[i]);
    }
  });
}

// ---- reductions ----

Tensor sum_all(const Tensor& x) {
  require(x.defined(), "sum_all: undefined tensor");
  auto X = x.node();
  const i64 n = X->numel();
  double s = 0.0;
  for (i64 i = 0; i < n; ++i) s += X->values()[i];
  auto out = make_node({1});
  (*out->data)[0] = s;
  return finish(out, "sum_all", {X}, [X, n](detail::Node& self) {
    if (!X->requires_grad) return;
    double* gx = X->grad_buf().data();
    const double g = self.grad[0];
    for (i64 i = 0; i < n; ++i) gx[i] += g;
  });
}

Tensor mean_all(const Tensor& x) {
  require(x.defined(), "mean_all: undefined tensor");
  auto X = x.node();
  const i64 n = X->numel();
  require(n > 0, "mean_all: empty tensor");
  double s = 0.0;
  for (i64 i = 0; i < n; ++i) s += X->values()[i];
  auto out = make_node({1});
  (*out->data)[0] = s / static_cast<double>(n);
  return finish(out, "mean_all", {X}, [X, n](detail::Node& self) {
    if (!X->requires_grad) return;
    double* gx = X->grad_buf().data();
    const double g = self.grad[0] / static_cast<double>(n);
    for (i64 i = 0; i < n; ++i) gx[i] += g;
  });
}

// ---- convolutions ----

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, i64 kernel,
              i64 stride) {
  check_rank2(x, "conv1d");
  check_rank2(w, "conv1d");
  require(kernel > 0 && kernel % 2 == 1, "conv1d: kernel must be odd");
  require(stride > 0, "conv1d: stride must be positive");
  const i64 t = x.dim(0), cin = x.dim(1), cout = w.dim(0);
  require(w.dim(1) == cin * kernel,
          "conv1d: weight " + shape_str(w.shape()) + " does not match " +
              std::to_string(cin) + " channels x kernel " +
              std::to_string(kernel));
  require(b.defined() && b.shape() == Shape{cout},
          "conv1d: bias must be rank-1 of width " + std::to_string(cout));
  const i64 t_out = (t + stride - 1) / stride;
  const i64 pad = (kernel - 1) / 2;
  const i64 cols = cin * kernel;
  auto X = x.node(), W = w.node(), B = b.node();
  auto col = std::make_shared<std::vector<double>>(t_out * cols, 0.0);
  for (i64 to = 0; to < t_out; ++to) {
    for (i64 kk = 0; kk < kernel; ++kk) {
      const i64 ti = to * stride + kk - pad;
      if (ti < 0 || ti >= t) continue;
      for (i64 ci = 0; ci < cin; ++ci)
        (*col)[to * cols + ci * kernel + kk] = X->values()[ti * cin + ci];
    }
  }
  auto out = make_node({t_out, cout});
  dgemm(false, true, t_out, cout, cols, 1.0, col->data(), cols, W->values(),
        cols, 0.0, out->values(), cout);
  for (i64 to = 0; to < t_out; ++to)
    for (i64 o = 0; o < cout; ++o) (*out->data)[to * cout + o] += B->values()[o];
  return finish(out, "conv1d", {X, W, B},
                [X, W, B, col, t, cin, cout, t_out, pad, cols, kernel,
                 stride](detail::Node& self) {
    const double* g = self.grad.data();
    if (B->requires_grad) {
      double* gb = B->grad_buf().data();
      for (i64 to = 0; to < t_out; ++to)
        for (i64 o = 0; o < cout; ++o) gb[o] += g[to * cout + o];
    }
    if (W->requires_grad)
      dgemm(true, false, cout, cols, t_out, 1.0, g, cout, col->data(), cols,
            1.0, W->grad_buf().data(), cols);
    if (X->requires_grad) {
      std::vector<double> gcol(t_out * cols, 0.0);
      dgemm(false, false, t_out, cols, cout, 1.0, g, cout, W->values(), cols,
            0.0, gcol.data(), cols);
      double* gx = X->grad_buf().data();
      for (i64 to = 0; to < t_out; ++to)
        for (i64 kk = 0; kk < kernel; ++kk) {
          const i64 ti = to * stride + kk - pad;
          if (ti < 0 || ti >= t) continue;
          for (i64 ci = 0; ci < cin; ++ci)
            gx[ti * cin + ci] += gcol[to * cols + ci * kernel + kk];
        }
    }
  });
}

Tensor depthwise_conv1d(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_rank2(x, "depthwise_conv1d");
  check_rank2(w, "depthwise_conv1d");
  const i64 t = x.dim(0), c = x.dim(1), kernel = w.dim(1);
  require(w.dim(0) == c, "depthwise_conv1d: weight rows " + shape_str(w.shape()) +
                             " must match channels " + std::to_string(c));
  require(kernel % 2 == 1, "depthwise_conv1d: kernel must be odd");
  require(b.defined() && b.shape() == Shape{c},
          "depthwise_conv1d: bias must be rank-1 of width " + std::to_string(c));
  const i64 pad = (kernel - 1) / 2;
  auto X = x.node(), W = w.node(), B = b.node();
  auto out = make_node({t, c});
  for (i64 i = 0; i < t; ++i)
    for (i64 j = 0; j < c; ++j) {
      double acc = B->values()[j];
      for (i64 kk = 0; kk < kernel; ++kk) {
        const i64 ti = i + kk - pad;
        if (ti < 0 || ti >= t) continue;
        acc += X->values()[ti * c + j] * W->values()[j * kernel + kk];
      }
      (*out->data)[i * c + j] = acc;
    }
  return finish(out, "depthwise_conv1d", {X, W, B},
                [X, W, B, t, c, kernel, pad](detail::Node& self) {
    const double* g = self.grad.data();
    if (B->requires_grad) {
      double* gb = B->grad_buf().data();
      for (i64 i = 0; i < t; ++i)
        for (i64 j = 0; j < c; ++j) gb[j] += g[i * c + j];
    }
    if (W->requires_grad) {
      double* gw = W->grad_buf().data();
      for (i64 i = 0; i < t; ++i)
        for (i64 j = 0; j < c; ++j)
          for (i64 kk = 0; kk < kernel; ++kk) {
            const i64 ti = i + kk - pad;
            if (ti < 0 || ti >= t) continue;
            gw[j * kernel + kk] += g[i * c + j] * X->values()[ti * c + j];
          }
    }
    if (X->requires_grad) {
      double* gx = X->grad_buf().data();
      for (i64 i = 0; i < t; ++i)
        for (i64 j = 0; j < c; ++j)
          for (i64 kk = 0; kk < kernel; ++kk) {
            const i64 ti = i + kk - pad;
            if (ti < 0 || ti >= t) continue;
            gx[ti * c + j] += g[i * c + j] * W->values()[j * kernel + kk];
          }
    }
  });
}

Tensor rel_shift(const Tensor& x) {
  check_rank2(x, "rel_shift");
  const i64 t = x.dim(0);
  require(x.dim(1) == 2 * t - 1,
          "rel_shift: expected " + std::to_string(t) + " x " +
              std::to_string(2 * t - 1) + ", got " + shape_str(x.shape()));
  auto X = x.node();
  const i64 w = 2 * t - 1;
  auto out = make_node({t, t});
  for (i64 i = 0; i < t; ++i)
    for (i64 j = 0; j < t; ++j)
      (*out->data)[i * t + j] = X->values()[i * w + (j - i + t - 1)];
  return finish(out, "rel_shift", {X}, [X, t, w](detail::Node& self) {
    if (!X->requires_grad) return;
    double* gx = X->grad_buf().data();
    const double* g = self.grad.data();
    for (i64 i = 0; i < t; ++i)
      for (i64 j = 0; j < t; ++j)
        gx[i * w + (j - i + t - 1)] += g[i * t + j];
  });
}

Tensor nll_smoothed(const Tensor& log_probs, const std::vector<i64>& targets,
                    double epsilon) {
  check_rank2(log_probs, "nll_smoothed");
  const i64 t = log_probs.dim(0), c = log_probs.dim(1);
  require(static_cast<i64>(targets.size()) == t,
          "nll_smoothed: " + std::to_string(targets.size()) +
              " targets for " + std::to_string(t) + " rows");
  require(epsilon >= 0.0 && epsilon < 1.0, "nll_smoothed: epsilon in [0,1)");
  for (i64 y : targets)
    require(y >= 0 && y < c, "nll_smoothed: target " + std::to_string(y) +
                                 " outside vocabulary " + std::to_string(c));
  auto X = log_probs.node();
  double loss = 0.0;
  const double unif = epsilon / static_cast<double>(c);
  for (i64 i = 0; i < t; ++i) {
    double row_sum = 0.0;
    for (i64 j = 0; j < c; ++j) row_sum += X->values()[i * c + j];
    loss -= (1.0 - epsilon) * X->values()[i * c + targets[i]] + unif * row_sum;
  }
  auto out = make_node({1});
  (*out->data)[0] = loss / static_cast<double>(t);
  return finish(out, "nll_smoothed", {X},
                [X, targets, epsilon, unif, t, c](detail::Node& self) {
    if (!X->requires_grad) return;
    double* gx = X->grad_buf().data();
    const double g = self.grad[0] / static_cast<double>(t);
    for (i64 i = 0; i < t; ++i) {
      for (i64 j = 0; j < c; ++j) gx[i * c + j] -= g * unif;
      gx[i * c + targets[i]] -= g * (1.0 - epsilon);
    }
  });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  require(x.defined(), "dropout: undefined tensor");
  require(rate >= 0.0 && rate < 1.0, "dropout: rate in [0,1)");
  if (rate == 0.0) return x;
  auto X = x.node();
  const i64 n = X->numel();
  auto mask = std::make_shared<std::vector<double>>(n);
  const double keep_scale = 1.0 / (1.0 - rate);
  auto out = make_node(X->shape);
  for (i64 i = 0; i < n; ++i) {
    (*mask)[i] = (rng.uniform() < rate) ? 0.0 : keep_scale;
    (*out->data)[i] = X->values()[i] * (*mask)[i];
  }
  return finish(out, "dropout", {X}, [X, mask, n](detail::Node& self) {
    if (!X->requires_grad) return;
    double* gx = X->grad_buf().data();
    const double* g = self.grad.data();
    for (i64 i = 0; i < n; ++i) gx[i] += g[i] * (*mask)[i];
  });
}

// ---- backward sweep ----

void backward(const Tensor& root) {
  require(root.defined(), "backward: undefined root");
  auto r = root.node();
  require(r->numel() == 1, "backward: root must be a scalar");
  require(r->requires_grad, "backward: root does not require grad");

  // Reverse post-order over parent edges = consumers before producers.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(r.get(), 0);
  seen.insert(r.get());
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->parents.size()) {
      detail::Node* p = top.first->parents[top.second++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(top.first);
      stack.pop_back();
    }
  }

  r->grad_buf()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward_fn) {
      n->grad_buf();  // a node can reach the root and still get zero grad
      n->backward_fn(*n);
    }
    if (!n->is_leaf) {
      // Interior buffers are not needed once the node retires; the graph
      // itself stays intact so a second backward sweep reproduces the
      // same gradients.
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

// ---- ParamStore ----

Tensor& ParamStore::declare(const std::string& name, Tensor value) {
  require(!name.empty(), "declare: empty parameter name");
  require(value.defined(), "declare: undefined tensor for " + name);
  auto [it, inserted] = params_.emplace(name, std::move(value));
  require(inserted, "declare: duplicate parameter " + name);
  return it->second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  require(it != params_.end(), "unknown parameter " + name);
  return it->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  require(it != params_.end(), "unknown parameter " + name);
  return it->second;
}

bool ParamStore::has(const std::string& name) const {
  return params_.count(name) > 0;
}

void ParamStore::set_data(const std::string& name,
                          const std::vector<double>& values) {
  Tensor& t = get(name);
  require(static_cast<i64>(values.size()) == t.numel(),
          "set_data: " + name + " holds " + std::to_string(t.numel()) +
              " values, got " + std::to_string(values.size()));
  std::copy(values.begin(), values.end(), t.data());
}

void ParamStore::zero_grads() {
  for (auto& [name, t] : params_) t.zero_grad();
}

ParamStore ParamStore::graph_view(bool requires_grad) const {
  ParamStore view;
  for (const auto& [name, t] : params_)
    view.params_.emplace(name, t.leaf_view(requires_grad));
  view.version_ = version_;
  return view;
}

// ---- finite differences ----

FiniteDiffReport finite_difference_check(
    const std::function<Tensor(ParamStore&)>& f, ParamStore& params, double h,
    i64 samples_per_param, std::uint64_t sample_seed, double floor) {
  require(h > 0.0, "finite_difference_check: h must be positive");

  auto eval = [&]() {
    Tensor out = f(params);
    require(out.defined() && out.numel() == 1,
            "finite_difference_check: f must return a scalar");
    return out;
  };

  const double v1 = eval().scalar();
  const double v2 = eval().scalar();
  require(std::memcmp(&v1, &v2, sizeof(double)) == 0,
          "finite_difference_check: f is not deterministic (" +
              std::to_string(v1) + " vs " + std::to_string(v2) + ")");

  params.zero_grads();
  backward(eval());
  std::map<std::string, std::vector<double>> analytic;
  for (auto& [name, t] : params.entries()) {
    if (!t.requires_grad()) continue;
    const auto& g = t.grad();
    analytic[name] = g.empty() ? std::vector<double>(t.numel(), 0.0) : g;
  }

  FiniteDiffReport report;
  Rng rng(sample_seed);
  for (auto& [name, t] : params.entries()) {
    if (!t.requires_grad()) continue;
    const i64 n = t.numel();
    std::vector<i64> picks;
    if (n <= samples_per_param) {
      for (i64 i = 0; i < n; ++i) picks.push_back(i);
    } else {
      std::set<i64> chosen;
      while (static_cast<i64>(chosen.size()) < samples_per_param)
        chosen.insert(rng.uniform_int(0, n - 1));
      picks.assign(chosen.begin(), chosen.end());
    }
    for (i64 i : picks) {
      double* slot = t.data() + i;
      const double orig = *slot;
      *slot = orig + h;
      const double fp = eval().scalar();
      *slot = orig - h;
      const double fm = eval().scalar();
      *slot = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double exact = analytic[name][i];
      const double denom =
          std::max({floor, std::abs(numeric), std::abs(exact)});
      const double rel = std::abs(numeric - exact) / denom;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace punet
