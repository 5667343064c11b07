#include "fluxcast/tape.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace fluxcast::ad {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

// ============================================================================
// ParamStore
// ============================================================================

Param& ParamStore::create(const std::string& name, Tensor init, bool no_decay, int group) {
  if (find(name)) throw Error("duplicate parameter name: " + name);
  auto p = std::make_unique<Param>();
  p->name = name;
  p->grad = Tensor(init.shape());
  p->value = std::move(init);
  p->no_decay = no_decay;
  p->group = group;
  params_.push_back(std::move(p));
  return *params_.back();
}

Param* ParamStore::find(const std::string& name) {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

long ParamStore::total_size() const {
  long n = 0;
  for (auto& p : params_) n += p->value.size();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& p : params_) p->grad.zero();
}

// ============================================================================
// Graph
// ============================================================================

Var Graph::constant(Tensor v) {
  Node n;
  n.value = std::move(v);
  n.needs_grad = false;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Graph::leaf(Param& p) {
  Node n;
  n.value = p.value;
  n.needs_grad = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Graph::make(Tensor value, std::vector<Var> parents,
                std::function<void(Graph&, int)> backward) {
  Node n;
  n.value = std::move(value);
  for (Var p : parents) {
    if (p.id < 0 || p.id >= static_cast<int>(nodes_.size()))
      throw Error("graph op received a Var from another graph");
    n.parents.push_back(p.id);
    n.needs_grad = n.needs_grad || nodes_[p.id].needs_grad;
  }
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Graph::accum(Var v, const Tensor& g) {
  Node& n = nodes_[v.id];
  if (!n.needs_grad) return;
  if (!n.value.same_shape(g))
    throw ShapeError("gradient shape " + g.shape_str() + " does not match value " +
                     n.value.shape_str());
  if (n.grad.empty())
    n.grad = g;
  else
    n.grad += g;
}

Tensor* Graph::grad_buffer(Var v) {
  Node& n = nodes_[v.id];
  if (!n.needs_grad) return nullptr;
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return &n.grad;
}

void Graph::backward(Var loss) {
  if (backward_done_) throw Error("backward() called twice on one graph");
  backward_done_ = true;
  Node& top = nodes_[loss.id];
  if (top.value.size() != 1) throw ShapeError("backward target must be a scalar");
  if (!top.needs_grad) throw Error("backward target does not depend on any parameter");
  top.grad = Tensor::full({1}, 1.0);
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, id);
  }
  for (Node& n : nodes_)
    if (n.param && !n.grad.empty()) n.param->grad += n.grad;
}

// ============================================================================
// Elementwise ops
// ============================================================================

Var add(Graph& g, Var a, Var b) {
  Tensor out = g.val(a) + g.val(b);
  return g.make(std::move(out), {a, b}, [a, b](Graph& gg, int self) {
    const Tensor& gy = gg.grad_at(self);
    gg.accum(a, gy);
    gg.accum(b, gy);
  });
}

Var sub(Graph& g, Var a, Var b) {
  Tensor out = g.val(a) - g.val(b);
  return g.make(std::move(out), {a, b}, [a, b](Graph& gg, int self) {
    const Tensor& gy = gg.grad_at(self);
    gg.accum(a, gy);
    if (Tensor* gb = gg.grad_buffer(b)) gb->axpy(-1.0, gy);
  });
}

Var mul(Graph& g, Var a, Var b) {
  const Tensor& av = g.val(a);
  const Tensor& bv = g.val(b);
  if (!av.same_shape(bv))
    throw ShapeError("mul: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
  Tensor out(av.shape());
  for (long i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return g.make(std::move(out), {a, b}, [a, b](Graph& gg, int self) {
    const Tensor& gy = gg.grad_at(self);
    const Tensor& av = gg.val(a);
    const Tensor& bv = gg.val(b);
    if (Tensor* ga = gg.grad_buffer(a))
      for (long i = 0; i < gy.size(); ++i) (*ga)[i] += gy[i] * bv[i];
    if (Tensor* gb = gg.grad_buffer(b))
      for (long i = 0; i < gy.size(); ++i) (*gb)[i] += gy[i] * av[i];
  });
}

Var neg(Graph& g, Var a) { return scale(g, a, -1.0); }

Var scale(Graph& g, Var a, double s) {
  Tensor out = g.val(a);
  out *= s;
  return g.make(std::move(out), {a}, [a, s](Graph& gg, int self) {
    if (Tensor* ga = gg.grad_buffer(a)) ga->axpy(s, gg.grad_at(self));
  });
}

Var add_all(Graph& g, const std::vector<Var>& xs) {
  if (xs.empty()) throw Error("add_all: empty list");
  Tensor out = g.val(xs[0]);
  for (size_t i = 1; i < xs.size(); ++i) out += g.val(xs[i]);
  auto vars = xs;
  return g.make(std::move(out), xs, [vars](Graph& gg, int self) {
    const Tensor& gy = gg.grad_at(self);
    for (Var v : vars) gg.accum(v, gy);
  });
}

Var leaky_relu(Graph& g, Var a, double slope) {
  const Tensor& av = g.val(a);
  Tensor out(av.shape());
  for (long i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : slope * av[i];
  return g.make(std::move(out), {a}, [a, slope](Graph& gg, int self) {
    const Tensor& gy = gg.grad_at(self);
    const Tensor& av = gg.val(a);
    if (Tensor* ga = gg.grad_buffer(a))
      for (long i = 0; i < gy.size(); ++i) (*ga)[i] += gy[i] * (av[i] > 0.0 ? 1.0 : slope);
  });
}

Var gelu(Graph& g, Var a) {
  const Tensor& av = g.val(a);
  Tensor out(av.shape());
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  for (long i = 0; i < out.size(); ++i)
    out[i] = 0.5 * av[i] * (1.0 + std::erf(av[i] * inv_sqrt2));
  return g.make(std::move(out), {a}, [a](Graph& gg, int self) {
    const Tensor& gy = gg.grad_at(self);
    const Tensor& av = gg.val(a);
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    if (Tensor* ga = gg.grad_buffer(a))
      for (long i = 0; i < gy.size(); ++i) {
        double x = av[i];
        double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
        double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
        (*ga)[i] += gy[i] * (cdf + x * pdf);
      }
  });
}

Var dropout(Graph& g, Var a, double p) {
  if (!g.training() || p <= 0.0) return a;
  if (p >= 1.0) throw ConfigError("dropout probability must be < 1");
  const Tensor& av = g.val(a);
  Tensor mask(av.shape());
  double keep = 1.0 - p;
  for (long i = 0; i < mask.size(); ++i)
    mask[i] = g.drop_rng().next_uniform() < p ? 0.0 : 1.0 / keep;
  Tensor out(av.shape());
  for (long i = 0; i < out.size(); ++i) out[i] = av[i] * mask[i];
  return g.make(std::move(out), {a}, [a, mask](Graph& gg, int self) {
    const Tensor& gy = gg.grad_at(self);
    if (Tensor* ga = gg.grad_buffer(a))
      for (long i = 0; i < gy.size(); ++i) (*ga)[i] += gy[i] * mask[i];
  });
}

Var drop_path(Graph& g, Var a, double p) {
  if (!g.training() || p <= 0.0) return a;
  if (p >= 1.0) throw ConfigError("drop-path probability must be < 1");
  bool dropped = g.drop_rng().next_uniform() < p;
  if (dropped) {
    // Branch removed for this sample; nothing flows back.
    return g.constant(Tensor(g.val(a).shape()));
  }
  return scale(g, a, 1.0 / (1.0 - p));
}

// ============================================================================
// Structural ops
// ============================================================================

Var concat0(Graph& g, const std::vector<Var>& xs) {
  if (xs.empty()) throw Error("concat0: empty list");
  const Tensor& first = g.val(xs[0]);
  std::vector<int> shape = first.shape();
  long inner = first.size() / first.dim(0);
  int total0 = 0;
  for (Var v : xs) {
    const Tensor& t = g.val(v);
    if (t.rank() != first.rank() || t.size() / t.dim(0) != inner)
      throw ShapeError("concat0: incompatible shapes " + first.shape_str() + " vs " +
                       t.shape_str());
    total0 += t.dim(0);
  }
  shape[0] = total0;
  Tensor out(shape);
  long off = 0;
  for (Var v : xs) {
    const Tensor& t = g.val(v);
    std::memcpy(out.data() + off, t.data(), sizeof(double) * t.size());
    off += t.size();
  }
  auto vars = xs;
  return g.make(std::move(out), xs, [vars](Graph& gg, int self) {
    const Tensor& gy = gg.grad_at(self);
    long off = 0;
    for (Var v : vars) {
      long n = gg.val(v).size();
      if (Tensor* gv = gg.grad_buffer(v))
        for (long i = 0; i < n; ++i) (*gv)[i] += gy[off + i];
      off += n;
    }
  });
}

Var slice0(Graph& g, Var a, int start, int len) {
  const Tensor& av = g.val(a);
  if (start < 0 || len <= 0 || start + len > av.dim(0))
    throw ShapeError("slice0 [" + std::to_string(start) + "," + std::to_string(start + len) +
                     ") out of range for " + av.shape_str());
  std::vector<int> shape = av.shape();
  shape[0] = len;
  long inner = av.size() / av.dim(0);
  Tensor out(shape);
  std::memcpy(out.data(), av.data() + start * inner, sizeof(double) * out.size());
  return g.make(std::move(out), {a}, [a, start, inner, len](Graph& gg, int self) {
    const Tensor& gy = gg.grad_at(self);
    if (Tensor* ga = gg.grad_buffer(a)) {
      double* dst = ga->data() + start * inner;
      for (long i = 0; i < len * inner; ++i) dst[i] += gy[i];
    }
  });
}

Var stack0(Graph& g, const std::vector<Var>& xs) {
  if (xs.empty()) throw Error("stack0: empty list");
  const Tensor& first = g.val(xs[0]);
  for (Var v : xs)
    if (!g.val(v).same_shape(first)) throw ShapeError("stack0: shapes differ");
  std::vector<int> shape;
  shape.push_back(static_cast<int>(xs.size()));
  for (int d : first.shape()) shape.push_back(d);
  Tensor out(shape);
  long inner = first.size();
  for (size_t i = 0; i < xs.size(); ++i)
    std::memcpy(out.data() + i * inner, g.val(xs[i]).data(), sizeof(double) * inner);
  auto vars = xs;
  return g.make(std::move(out), xs, [vars, inner](Graph& gg, int self) {
    const Tensor& gy = gg.grad_at(self);
    for (size_t i = 0; i < vars.size(); ++i)
      if (Tensor* gv = gg.grad_buffer(vars[i]))
        for (long j = 0; j < inner; ++j) (*gv)[j] += gy[i * inner + j];
  });
}

Var unstack0(Graph& g, Var a, int index) {
  const Tensor& av = g.val(a);
  if (index < 0 || index >= av.dim(0))
    throw ShapeError("unstack0: index " + std::to_string(index) + " for " + av.shape_str());
  std::vector<int> shape(av.shape().begin() + 1, av.shape().end());
  long inner = av.size() / av.dim(0);
  Tensor out(shape);
  std::memcpy(out.data(), av.data() + index * inner, sizeof(double) * inner);
  return g.make(std::move(out), {a}, [a, index, inner](Graph& gg, int self) {
    const Tensor& gy = gg.grad_at(self);
    if (Tensor* ga = gg.grad_buffer(a)) {
      double* dst = ga->data() + index * inner;
      for (long i = 0; i < inner; ++i) dst[i] += gy[i];
    }
  });
}

Var reshape(Graph& g, Var a, std::vector<int> shape) {
  const Tensor& av = g.val(a);
  Tensor out(shape);
  if (out.size() != av.size())
    throw ShapeError("reshape: element count mismatch " + av.shape_str() + " -> " +
                     out.shape_str());
  std::memcpy(out.data(), av.data(), sizeof(double) * out.size());
  return g.make(std::move(out), {a}, [a](Graph& gg, int self) {
    const Tensor& gy = gg.grad_at(self);
    if (Tensor* ga = gg.grad_buffer(a))
      for (long i = 0; i < gy.size(); ++i) (*ga)[i] += gy[i];
  });
}

Var sum_all(Graph& g, Var a) {
  Tensor out = Tensor::full({1}, g.val(a).sum());
  return g.make(std::move(out), {a}, [a](Graph& gg, int self) {
    double gy = gg.grad_at(self)[0];
    if (Tensor* ga = gg.grad_buffer(a))
      for (long i = 0; i < ga->size(); ++i) (*ga)[i] += gy;
  });
}

Var mean_all(Graph& g, Var a) {
  long n = g.val(a).size();
  Tensor out = Tensor::full({1}, g.val(a).sum() / static_cast<double>(n));
  return g.make(std::move(out), {a}, [a, n](Graph& gg, int self) {
    double gy = gg.grad_at(self)[0] / static_cast<double>(n);
    if (Tensor* ga = gg.grad_buffer(a))
      for (long i = 0; i < ga->size(); ++i) (*ga)[i] += gy;
  });
}

Var add_scalar(Graph& g, Var a, double s) {
  Tensor out = g.val(a);
  for (long i = 0; i < out.size(); ++i) out[i] += s;
  return g.make(std::move(out), {a}, [a](Graph& gg, int self) {
    gg.accum(a, gg.grad_at(self));
  });
}

static void check_rowvec(const Tensor& xv, const Tensor& vv, const char* op) {
  if (xv.rank() != 2 || vv.rank() != 1 || vv.dim(0) != xv.dim(1))
    throw ShapeError(std::string(op) + ": x " + xv.shape_str() + " v " + vv.shape_str());
}

Var add_rowvec(Graph& g, Var x, Var v) {
  const Tensor& xv = g.val(x);
  const Tensor& vv = g.val(v);
  check_rowvec(xv, vv, "add_rowvec");
  int t = xv.dim(0), d = xv.dim(1);
  Tensor out(xv.shape());
  for (int r = 0; r < t; ++r)
    for (int c = 0; c < d; ++c) out.at(r, c) = xv.at(r, c) + vv[c];
  return g.make(std::move(out), {x, v}, [x, v, t, d](Graph& gg, int self) {
    const Tensor& gy = gg.grad_at(self);
    gg.accum(x, gy);
    if (Tensor* gv = gg.grad_buffer(v))
      for (int r = 0; r < t; ++r)
        for (int c = 0; c < d; ++c) (*gv)[c] += gy.at(r, c);
  });
}

Var mul_rowvec(Graph& g, Var x, Var v) {
  const Tensor& xv = g.val(x);
  const Tensor& vv = g.val(v);
  check_rowvec(xv, vv, "mul_rowvec");
  int t = xv.dim(0), d = xv.dim(1);
  Tensor out(xv.shape());
  for (int r = 0; r < t; ++r)
    for (int c = 0; c < d; ++c) out.at(r, c) = xv.at(r, c) * vv[c];
  return g.make(std::move(out), {x, v}, [x, v, t, d](Graph& gg, int self) {
    const Tensor& gy = gg.grad_at(self);
    const Tensor& xv = gg.val(x);
    const Tensor& vv = gg.val(v);
    if (Tensor* gx = gg.grad_buffer(x))
      for (int r = 0; r < t; ++r)
        for (int c = 0; c < d; ++c) gx->at(r, c) += gy.at(r, c) * vv[c];
    if (Tensor* gv = gg.grad_buffer(v))
      for (int r = 0; r < t; ++r)
        for (int c = 0; c < d; ++c) (*gv)[c] += gy.at(r, c) * xv.at(r, c);
  });
}

Var permute01(Graph& g, Var a) {
  const Tensor& av = g.val(a);
  if (av.rank() < 2) throw ShapeError("permute01 needs rank >= 2, got " + av.shape_str());
  int d0 = av.dim(0), d1 = av.dim(1);
  long inner = av.size() / (static_cast<long>(d0) * d1);
  std::vector<int> shape = av.shape();
  std::swap(shape[0], shape[1]);
  Tensor out(shape);
  for (int i = 0; i < d0; ++i)
    for (int j = 0; j < d1; ++j)
      std::memcpy(out.data() + (static_cast<long>(j) * d0 + i) * inner,
                  av.data() + (static_cast<long>(i) * d1 + j) * inner, sizeof(double) * inner);
  return g.make(std::move(out), {a}, [a, d0, d1, inner](Graph& gg, int self) {
    const Tensor& gy = gg.grad_at(self);
    if (Tensor* ga = gg.grad_buffer(a))
      for (int i = 0; i < d0; ++i)
        for (int j = 0; j < d1; ++j) {
          double* dst = ga->data() + (static_cast<long>(i) * d1 + j) * inner;
          const double* src = gy.data() + (static_cast<long>(j) * d0 + i) * inner;
          for (long k = 0; k < inner; ++k) dst[k] += src[k];
        }
  });
}

Var scale_rows(Graph& g, Var a, Tensor w) {
  const Tensor& av = g.val(a);
  if (av.rank() < 2) throw ShapeError("scale_rows needs rank >= 2, got " + av.shape_str());
  int rows = av.dim(av.rank() - 2);
  int cols = av.dim(av.rank() - 1);
  if (w.size() != rows)
    throw ShapeError("scale_rows: " + std::to_string(w.size()) + " weights for " +
                     std::to_string(rows) + " rows");
  long lead = av.size() / (static_cast<long>(rows) * cols);
  Tensor out(av.shape());
  long i = 0;
  for (long l = 0; l < lead; ++l)
    for (int h = 0; h < rows; ++h) {
      double wh = w[h];
      for (int c = 0; c < cols; ++c, ++i) out[i] = av[i] * wh;
    }
  return g.make(std::move(out), {a}, [a, w, rows, cols, lead](Graph& gg, int self) {
    const Tensor& gy = gg.grad_at(self);
    if (Tensor* ga = gg.grad_buffer(a)) {
      long i = 0;
      for (long l = 0; l < lead; ++l)
        for (int h = 0; h < rows; ++h) {
          double wh = w[h];
          for (int c = 0; c < cols; ++c, ++i) (*ga)[i] += gy[i] * wh;
        }
    }
  });
}

// ============================================================================
// Dense linear algebra (Eigen-backed)
// ============================================================================

Var matmul(Graph& g, Var a, Var b) {
  const Tensor& av = g.val(a);
  const Tensor& bv = g.val(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
    throw ShapeError("matmul: " + av.shape_str() + " x " + bv.shape_str());
  int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  MapMat(out.data(), m, n).noalias() = CMapMat(av.data(), m, k) * CMapMat(bv.data(), k, n);
  return g.make(std::move(out), {a, b}, [a, b, m, k, n](Graph& gg, int self) {
    CMapMat gy(gg.grad_at(self).data(), m, n);
    if (Tensor* ga = gg.grad_buffer(a))
      MapMat(ga->data(), m, k).noalias() += gy * CMapMat(gg.val(b).data(), k, n).transpose();
    if (Tensor* gb = gg.grad_buffer(b))
      MapMat(gb->data(), k, n).noalias() +=
          CMapMat(gg.val(a).data(), m, k).transpose() * gy;
  });
}

Var linear(Graph& g, Var x, Var w, Var b) {
  const Tensor& xv = g.val(x);
  const Tensor& wv = g.val(w);
  const Tensor& bv = g.val(b);
  if (xv.rank() != 2 || wv.rank() != 2 || bv.rank() != 1 || xv.dim(1) != wv.dim(0) ||
      wv.dim(1) != bv.dim(0))
    throw ShapeError("linear: x " + xv.shape_str() + " w " + wv.shape_str() + " b " +
                     bv.shape_str());
  int t = xv.dim(0), ci = xv.dim(1), co = wv.dim(1);
  Tensor out({t, co});
  MapMat o(out.data(), t, co);
  o.noalias() = CMapMat(xv.data(), t, ci) * CMapMat(wv.data(), ci, co);
  o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bv.data(), co);
  return g.make(std::move(out), {x, w, b}, [x, w, b, t, ci, co](Graph& gg, int self) {
    CMapMat gy(gg.grad_at(self).data(), t, co);
    if (Tensor* gx = gg.grad_buffer(x))
      MapMat(gx->data(), t, ci).noalias() +=
          gy * CMapMat(gg.val(w).data(), ci, co).transpose();
    if (Tensor* gw = gg.grad_buffer(w))
      MapMat(gw->data(), ci, co).noalias() +=
          CMapMat(gg.val(x).data(), t, ci).transpose() * gy;
    if (Tensor* gb = gg.grad_buffer(b))
      Eigen::Map<Eigen::RowVectorXd>(gb->data(), co) += gy.colwise().sum();
  });
}

}  // namespace fluxcast::ad
