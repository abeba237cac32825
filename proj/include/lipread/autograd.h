#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace lipread {

// Dense row-major array of doubles with an explicit shape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0);
  Tensor(std::vector<int> shape, std::vector<double> data);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 2-D access
  int rows() const { return shape_.at(0); }
  int cols() const { return shape_.at(1); }
  double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
  double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }

  bool all_finite() const;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

std::string shape_string(const std::vector<int>& shape);

struct Var {
  int id = -1;
};

// Reverse-mode tape. Every op appends a node holding its value and, when the
// graph tracks gradients and an input requires them, a backward closure.
// Leaves created with param() point at external storage and are never copied.
class Graph {
 public:
  explicit Graph(bool track_gradients = true) : track_(track_gradients) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  // `key` identifies the parameter when gradients are collected.
  Var param(const Tensor& value, int key);

  const Tensor& value(Var v) const;
  const Tensor& grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).grad; }

  // Seeds d(loss)/d(loss) = 1 for a single-element node and back-propagates.
  void backward(Var loss);
  // Adds every parameter leaf's gradient into grads[key] (shapes must match).
  void accumulate_param_grads(std::vector<Tensor>& grads) const;

  // --- ops ---------------------------------------------------------------
  Var matmul(Var a, Var b);     // [m,k] x [k,n]
  Var matmul_nt(Var a, Var b);  // [m,k] x [n,k]^T
  Var linear(Var x, Var w, Var b);  // x[m,k] w[k,n] + b[n]
  Var add(Var a, Var b);
  Var scale(Var a, double s);
  Var swish(Var a);
  Var glu(Var a);  // [m,2n] -> a[:, :n] * sigmoid(a[:, n:])
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);  // row-wise
  // Row-wise softmax; with `causal`, entries above the diagonal are exactly 0.
  Var softmax_rows(Var x, bool causal = false);
  Var log_softmax_rows(Var x);
  Var slice_cols(Var x, int begin, int end);
  Var concat_cols(std::span<const Var> parts);
  // Same-padded depthwise convolution over time: x[T,d], w[k,d], b[d].
  Var depthwise_conv_time(Var x, Var w, Var b);
  // Adds bias[h][clamp(j - i, -max_dist, max_dist) + max_dist] to scores[i][j].
  Var add_relative_bias(Var scores, Var bias, int head, int max_dist);
  // x[T,H,W] with w[C,kt,kh,kw]: temporal padding kt/2 (so T is preserved),
  // spatial padding kh/2, kw/2 and the given spatial stride -> [T,C,H',W'].
  Var conv3d(Var x, Var w, Var b, int stride);
  // Per-frame 2-D convolution: x[T,Cin,H,W], w[Cout,Cin,k,k], padding k/2.
  Var conv2d_frames(Var x, Var w, Var b, int stride);
  Var global_avg_pool(Var x);  // [T,C,H,W] -> [T,C]
  Var embedding(Var table, std::span<const int> ids);  // table[V,d] -> [L,d]
  // sum_r x[r][targets[r]] -> scalar
  Var pick_sum(Var x, std::span<const int> targets);
  // log p_ctc(target | logprobs) as a scalar; -inf if unreachable.
  Var ctc_loglik(Var logprobs, std::span<const int> target, int blank);
  Var weighted_sum(Var a, double wa, Var b, double wb);
  // sum_i x[i] * w[i] -> scalar
  Var dot(Var x, const Tensor& w);

  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    bool requires_grad = false;
    int param_key = -1;
    std::function<void()> backward;
  };

  Var push(Tensor value, bool requires_grad);
  Node& node(Var v) { return nodes_.at(static_cast<std::size_t>(v.id)); }
  const Node& node(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)); }
  bool req(Var v) const { return track_ && node(v).requires_grad; }
  Tensor& grad_of(Var v);  // allocates on first use

  bool track_;
  std::vector<Node> nodes_;
};

}  // namespace lipread
