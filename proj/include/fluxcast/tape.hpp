#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fluxcast/rng.hpp"
#include "fluxcast/tensor.hpp"

namespace fluxcast::ad {

/// Trainable leaf. Lives outside any graph; graphs accumulate into `grad`.
/// `group` selects the optimizer rate group (0 = default, 1 = dynamics-side).
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool no_decay = false;
  int group = 0;
};

/// Owns parameters in creation order. Creation order is the canonical order
/// for optimizer state and checkpoints, so it must be deterministic.
class ParamStore {
 public:
  Param& create(const std::string& name, Tensor init, bool no_decay = false, int group = 0);
  Param* find(const std::string& name);
  const std::vector<std::unique_ptr<Param>>& all() const { return params_; }
  size_t count() const { return params_.size(); }
  long total_size() const;
  void zero_grads();

 private:
  std::vector<std::unique_ptr<Param>> params_;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so iterating
/// ids backwards is a topological sweep. One backward() per graph.
class Graph {
 public:
  Graph() : drop_rng_(0) {}
  Graph(bool training, uint64_t drop_seed) : training_(training), drop_rng_(drop_seed) {}

  bool training() const { return training_; }
  Rng& drop_rng() { return drop_rng_; }

  Var constant(Tensor v);
  Var leaf(Param& p);
  Var make(Tensor value, std::vector<Var> parents, std::function<void(Graph&, int)> backward);

  const Tensor& val(Var v) const { return nodes_[v.id].value; }
  const Tensor& val_at(int id) const { return nodes_[id].value; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  // Gradient of `v` after backward(); empty tensor if nothing flowed.
  const Tensor& grad(Var v) const { return nodes_[v.id].grad; }
  const Tensor& grad_at(int id) const { return nodes_[id].grad; }

  // Accumulate into a node's gradient buffer (no-op for non-differentiable nodes).
  void accum(Var v, const Tensor& g);
  // Raw buffer access for ops that scatter; allocates zeros on first touch.
  Tensor* grad_buffer(Var v);

  void backward(Var loss);
  size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    Param* param = nullptr;
    std::function<void(Graph&, int)> backward;
    std::vector<int> parents;
  };
  std::vector<Node> nodes_;
  bool training_ = false;
  bool backward_done_ = false;
  Rng drop_rng_;
};

// ============================================================================
// Elementwise / structural ops. Convolution, attention, and grid stencils are
// declared next to their implementations (conv.hpp, attention.hpp, grid.hpp).
// ============================================================================

Var add(Graph& g, Var a, Var b);
Var sub(Graph& g, Var a, Var b);
Var mul(Graph& g, Var a, Var b);
Var neg(Graph& g, Var a);
Var scale(Graph& g, Var a, double s);
Var add_all(Graph& g, const std::vector<Var>& xs);
Var leaky_relu(Graph& g, Var a, double slope);
Var gelu(Graph& g, Var a);
Var dropout(Graph& g, Var a, double p);
Var drop_path(Graph& g, Var a, double p);

// Concatenate along axis 0; shapes must agree on the remaining axes.
Var concat0(Graph& g, const std::vector<Var>& xs);
// Slice [start, start+len) along axis 0.
Var slice0(Graph& g, Var a, int start, int len);
// Stack k tensors of identical shape into a new leading axis of length k.
Var stack0(Graph& g, const std::vector<Var>& xs);
// Inverse of stack0 for one index: (N, ...) -> (...).
Var unstack0(Graph& g, Var a, int index);
Var reshape(Graph& g, Var a, std::vector<int> shape);

Var sum_all(Graph& g, Var a);   // -> shape {1}
Var mean_all(Graph& g, Var a);  // -> shape {1}
Var add_scalar(Graph& g, Var a, double s);

// Broadcast a length-D vector across the rows of x (T,D).
Var add_rowvec(Graph& g, Var x, Var v);
Var mul_rowvec(Graph& g, Var x, Var v);

// Swap the two leading axes of a rank >= 2 tensor.
Var permute01(Graph& g, Var a);

// Multiply along the second-to-last axis by a fixed weight vector (one weight
// per latitude row). w.size() must equal dim(rank-2).
Var scale_rows(Graph& g, Var a, Tensor w);

Var matmul(Graph& g, Var a, Var b);        // (m,k)x(k,n) -> (m,n)
Var linear(Graph& g, Var x, Var w, Var b); // x:(T,Ci) w:(Ci,Co) b:(Co)

}  // namespace fluxcast::ad
