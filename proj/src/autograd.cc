#include "lipread/autograd.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "lipread/ctc.h"

namespace lipread {
namespace {

std::size_t product(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

void require(bool cond, const char* op, const std::string& what) {
  if (!cond) throw std::invalid_argument(std::string(op) + ": " + what);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Valid output range [lo, hi) of ox such that 0 <= ox*s + off < W.
inline void valid_range(int out_size, int stride, int off, int in_size, int& lo, int& hi) {
  lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  const int last = in_size - 1 - off;  // ox*s <= last
  hi = last < 0 ? 0 : std::min(out_size, last / stride + 1);
  if (lo > hi) lo = hi;
}

}  // namespace

Tensor::Tensor(std::vector<int> shape, double fill) : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != product(shape_)) throw std::invalid_argument("Tensor: data size does not match shape");
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string shape_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

Var Graph::push(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = track_ && requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Graph::constant(Tensor value) { return push(std::move(value), false); }

Var Graph::param(const Tensor& value, int key) {
  Node n;
  n.external = &value;
  n.requires_grad = track_;
  n.param_key = key;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Graph::value(Var v) const {
  const Node& n = node(v);
  return n.external ? *n.external : n.value;
}

Tensor& Graph::grad_of(Var v) {
  Node& n = node(v);
  if (n.grad.empty()) n.grad = Tensor(value(v).shape(), 0.0);
  return n.grad;
}

void Graph::backward(Var loss) {
  require(track_, "backward", "graph does not track gradients");
  require(value(loss).size() == 1, "backward", "loss must have exactly one element");
  grad_of(loss)[0] += 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.backward && !n.grad.empty()) n.backward();
  }
}

void Graph::accumulate_param_grads(std::vector<Tensor>& grads) const {
  for (const Node& n : nodes_) {
    if (n.param_key < 0 || n.grad.empty()) continue;
    Tensor& g = grads.at(static_cast<std::size_t>(n.param_key));
    require(g.size() == n.grad.size(), "accumulate_param_grads", "shape mismatch");
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  }
}

Var Graph::matmul(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require(A.rank() == 2 && B.rank() == 2 && A.cols() == B.rows(), "matmul",
          shape_string(A.shape()) + " x " + shape_string(B.shape()));
  const int m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C({m, n}, 0.0);
  for (int i = 0; i < m; ++i) {
    double* c = C.data() + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = A.at(i, p);
      if (av == 0.0) continue;
      const double* brow = B.data() + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) c[j] += av * brow[j];
    }
  }
  const bool need = req(a) || req(b);
  Var out = push(std::move(C), need);
  if (need) {
    node(out).backward = [this, a, b, out, m, k, n] {
      const Tensor& G = node(out).grad;
      const Tensor& A = value(a);
      const Tensor& B = value(b);
      if (req(a)) {
        Tensor& gA = grad_of(a);
        for (int i = 0; i < m; ++i) {
          const double* g = G.data() + static_cast<std::size_t>(i) * n;
          for (int p = 0; p < k; ++p) {
            const double* brow = B.data() + static_cast<std::size_t>(p) * n;
            double s = 0.0;
            for (int j = 0; j < n; ++j) s += g[j] * brow[j];
            gA.at(i, p) += s;
          }
        }
      }
      if (req(b)) {
        Tensor& gB = grad_of(b);
        for (int i = 0; i < m; ++i) {
          const double* g = G.data() + static_cast<std::size_t>(i) * n;
          for (int p = 0; p < k; ++p) {
            const double av = A.at(i, p);
            double* gb = gB.data() + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) gb[j] += av * g[j];
          }
        }
      }
    };
  }
  return out;
}

Var Graph::matmul_nt(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require(A.rank() == 2 && B.rank() == 2 && A.cols() == B.cols(), "matmul_nt",
          shape_string(A.shape()) + " x " + shape_string(B.shape()) + "^T");
  const int m = A.rows(), k = A.cols(), n = B.rows();
  Tensor C({m, n}, 0.0);
  for (int i = 0; i < m; ++i) {
    const double* ar = A.data() + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < n; ++j) {
      const double* br = B.data() + static_cast<std::size_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += ar[p] * br[p];
      C.at(i, j) = s;
    }
  }
  const bool need = req(a) || req(b);
  Var out = push(std::move(C), need);
  if (need) {
    node(out).backward = [this, a, b, out, m, k, n] {
      const Tensor& G = node(out).grad;
      const Tensor& A = value(a);
      const Tensor& B = value(b);
      if (req(a)) {
        Tensor& gA = grad_of(a);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) {
            const double g = G.at(i, j);
            if (g == 0.0) continue;
            const double* br = B.data() + static_cast<std::size_t>(j) * k;
            double* ga = gA.data() + static_cast<std::size_t>(i) * k;
            for (int p = 0; p < k; ++p) ga[p] += g * br[p];
          }
      }
      if (req(b)) {
        Tensor& gB = grad_of(b);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) {
            const double g = G.at(i, j);
            if (g == 0.0) continue;
            const double* ar = A.data() + static_cast<std::size_t>(i) * k;
            double* gb = gB.data() + static_cast<std::size_t>(j) * k;
            for (int p = 0; p < k; ++p) gb[p] += g * ar[p];
          }
      }
    };
  }
  return out;
}

Var Graph::linear(Var x, Var w, Var b) {
  Var y = matmul(x, w);
  const Tensor& Y = value(y);
  const Tensor& Bv = value(b);
  require(Bv.size() == static_cast<std::size_t>(Y.cols()), "linear", "bias size mismatch");
  Tensor out = Y;
  const int m = out.rows(), n = out.cols();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(i, j) += Bv[static_cast<std::size_t>(j)];
  const bool need = req(y) || req(b);
  Var o = push(std::move(out), need);
  if (need) {
    node(o).backward = [this, y, b, o, m, n] {
      const Tensor& G = node(o).grad;
      if (req(y)) {
        Tensor& gy = grad_of(y);
        for (std::size_t i = 0; i < G.size(); ++i) gy[i] += G[i];
      }
      if (req(b)) {
        Tensor& gb = grad_of(b);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) gb[static_cast<std::size_t>(j)] += G.at(i, j);
      }
    };
  }
  return o;
}

Var Graph::add(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require(A.shape() == B.shape(), "add", shape_string(A.shape()) + " vs " + shape_string(B.shape()));
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] += B[i];
  const bool need = req(a) || req(b);
  Var out = push(std::move(C), need);
  if (need) {
    node(out).backward = [this, a, b, out] {
      const Tensor& G = node(out).grad;
      for (Var v : {a, b}) {
        if (!req(v)) continue;
        Tensor& g = grad_of(v);
        for (std::size_t i = 0; i < G.size(); ++i) g[i] += G[i];
      }
    };
  }
  return out;
}

Var Graph::scale(Var a, double s) {
  Tensor C = value(a);
  for (double& v : C.values()) v *= s;
  const bool need = req(a);
  Var out = push(std::move(C), need);
  if (need) {
    node(out).backward = [this, a, out, s] {
      const Tensor& G = node(out).grad;
      Tensor& g = grad_of(a);
      for (std::size_t i = 0; i < G.size(); ++i) g[i] += s * G[i];
    };
  }
  return out;
}

Var Graph::weighted_sum(Var a, double wa, Var b, double wb) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require(A.shape() == B.shape(), "weighted_sum", "shape mismatch");
  Tensor C(A.shape(), 0.0);
  for (std::size_t i = 0; i < C.size(); ++i) C[i] = (wa != 0.0 ? wa * A[i] : 0.0) + (wb != 0.0 ? wb * B[i] : 0.0);
  const bool need = (req(a) && wa != 0.0) || (req(b) && wb != 0.0);
  Var out = push(std::move(C), need);
  if (need) {
    node(out).backward = [this, a, b, wa, wb, out] {
      const Tensor& G = node(out).grad;
      if (req(a) && wa != 0.0) {
        Tensor& g = grad_of(a);
        for (std::size_t i = 0; i < G.size(); ++i) g[i] += wa * G[i];
      }
      if (req(b) && wb != 0.0) {
        Tensor& g = grad_of(b);
        for (std::size_t i = 0; i < G.size(); ++i) g[i] += wb * G[i];
      }
    };
  }
  return out;
}

Var Graph::dot(Var x, const Tensor& w) {
  const Tensor& X = value(x);
  require(X.size() == w.size(), "dot", "size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += X[i] * w[i];
  const bool need = req(x);
  Var out = push(Tensor({1}, s), need);
  if (need) {
    node(out).backward = [this, x, out, w] {
      const double g = node(out).grad[0];
      Tensor& gx = grad_of(x);
      for (std::size_t i = 0; i < w.size(); ++i) gx[i] += g * w[i];
    };
  }
  return out;
}

Var Graph::swish(Var a) {
  Tensor C = value(a);
  for (double& v : C.values()) v = v * sigmoid(v);
  const bool need = req(a);
  Var out = push(std::move(C), need);
  if (need) {
    node(out).backward = [this, a, out] {
      const Tensor& G = node(out).grad;
      const Tensor& X = value(a);
      Tensor& g = grad_of(a);
      for (std::size_t i = 0; i < G.size(); ++i) {
        const double s = sigmoid(X[i]);
        g[i] += G[i] * (s + X[i] * s * (1.0 - s));
      }
    };
  }
  return out;
}

Var Graph::glu(Var a) {
  const Tensor& X = value(a);
  require(X.rank() == 2 && X.cols() % 2 == 0, "glu", "expects [m, 2n]");
  const int m = X.rows(), n = X.cols() / 2;
  Tensor Y({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) Y.at(i, j) = X.at(i, j) * sigmoid(X.at(i, j + n));
  const bool need = req(a);
  Var out = push(std::move(Y), need);
  if (need) {
    node(out).backward = [this, a, out, m, n] {
      const Tensor& G = node(out).grad;
      const Tensor& X = value(a);
      Tensor& g = grad_of(a);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          const double s = sigmoid(X.at(i, j + n));
          g.at(i, j) += G.at(i, j) * s;
          g.at(i, j + n) += G.at(i, j) * X.at(i, j) * s * (1.0 - s);
        }
    };
  }
  return out;
}

Var Graph::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& X = value(x);
  const Tensor& Gm = value(gamma);
  const Tensor& Bt = value(beta);
  require(X.rank() == 2 && Gm.size() == static_cast<std::size_t>(X.cols()) && Bt.size() == Gm.size(), "layer_norm",
          "shape mismatch");
  const int m = X.rows(), n = X.cols();
  Tensor Y({m, n});
  std::vector<double> xhat(static_cast<std::size_t>(m) * n), rstd(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += X.at(i, j);
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (X.at(i, j) - mu) * (X.at(i, j) - mu);
    var /= n;
    const double r = 1.0 / std::sqrt(var + eps);
    rstd[static_cast<std::size_t>(i)] = r;
    for (int j = 0; j < n; ++j) {
      const double h = (X.at(i, j) - mu) * r;
      xhat[static_cast<std::size_t>(i) * n + j] = h;
      Y.at(i, j) = h * Gm[static_cast<std::size_t>(j)] + Bt[static_cast<std::size_t>(j)];
    }
  }
  const bool need = req(x) || req(gamma) || req(beta);
  Var out = push(std::move(Y), need);
  if (need) {
    node(out).backward = [this, x, gamma, beta, out, m, n, xhat = std::move(xhat), rstd = std::move(rstd)] {
      const Tensor& G = node(out).grad;
      const Tensor& Gm = value(gamma);
      if (req(gamma) || req(beta)) {
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) {
            if (req(gamma)) grad_of(gamma)[static_cast<std::size_t>(j)] += G.at(i, j) * xhat[static_cast<std::size_t>(i) * n + j];
            if (req(beta)) grad_of(beta)[static_cast<std::size_t>(j)] += G.at(i, j);
          }
      }
      if (req(x)) {
        Tensor& gx = grad_of(x);
        std::vector<double> dh(static_cast<std::size_t>(n));
        for (int i = 0; i < m; ++i) {
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (int j = 0; j < n; ++j) {
            dh[static_cast<std::size_t>(j)] = G.at(i, j) * Gm[static_cast<std::size_t>(j)];
            mean_dh += dh[static_cast<std::size_t>(j)];
            mean_dh_h += dh[static_cast<std::size_t>(j)] * xhat[static_cast<std::size_t>(i) * n + j];
          }
          mean_dh /= n;
          mean_dh_h /= n;
          for (int j = 0; j < n; ++j)
            gx.at(i, j) += rstd[static_cast<std::size_t>(i)] *
                           (dh[static_cast<std::size_t>(j)] - mean_dh - xhat[static_cast<std::size_t>(i) * n + j] * mean_dh_h);
        }
      }
    };
  }
  return out;
}

Var Graph::softmax_rows(Var x, bool causal) {
  const Tensor& X = value(x);
  require(X.rank() == 2, "softmax_rows", "expects a matrix");
  const int m = X.rows(), n = X.cols();
  Tensor Y({m, n}, 0.0);
  for (int i = 0; i < m; ++i) {
    const int limit = causal ? std::min(n, i + 1) : n;
    double mx = X.at(i, 0);
    for (int j = 1; j < limit; ++j) mx = std::max(mx, X.at(i, j));
    double sum = 0.0;
    for (int j = 0; j < limit; ++j) {
      Y.at(i, j) = std::exp(X.at(i, j) - mx);
      sum += Y.at(i, j);
    }
    for (int j = 0; j < limit; ++j) Y.at(i, j) /= sum;
  }
  const bool need = req(x);
  Var out = push(std::move(Y), need);
  if (need) {
    node(out).backward = [this, x, out, m, n] {
      const Tensor& G = node(out).grad;
      const Tensor& Y = node(out).value;
      Tensor& gx = grad_of(x);
      for (int i = 0; i < m; ++i) {
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += G.at(i, j) * Y.at(i, j);
        for (int j = 0; j < n; ++j) gx.at(i, j) += Y.at(i, j) * (G.at(i, j) - dot);
      }
    };
  }
  return out;
}

Var Graph::log_softmax_rows(Var x) {
  const Tensor& X = value(x);
  require(X.rank() == 2, "log_softmax_rows", "expects a matrix");
  const int m = X.rows(), n = X.cols();
  Tensor Y({m, n});
  for (int i = 0; i < m; ++i) {
    double mx = X.at(i, 0);
    for (int j = 1; j < n; ++j) mx = std::max(mx, X.at(i, j));
    double sum = 0.0;
    for (int j = 0; j < n; ++j) sum += std::exp(X.at(i, j) - mx);
    const double lse = mx + std::log(sum);
    for (int j = 0; j < n; ++j) Y.at(i, j) = X.at(i, j) - lse;
  }
  const bool need = req(x);
  Var out = push(std::move(Y), need);
  if (need) {
    node(out).backward = [this, x, out, m, n] {
      const Tensor& G = node(out).grad;
      const Tensor& Y = node(out).value;
      Tensor& gx = grad_of(x);
      for (int i = 0; i < m; ++i) {
        double sum = 0.0;
        for (int j = 0; j < n; ++j) sum += G.at(i, j);
        for (int j = 0; j < n; ++j) gx.at(i, j) += G.at(i, j) - std::exp(Y.at(i, j)) * sum;
      }
    };
  }
  return out;
}

Var Graph::slice_cols(Var x, int begin, int end) {
  const Tensor& X = value(x);
  require(X.rank() == 2 && 0 <= begin && begin < end && end <= X.cols(), "slice_cols", "bad range");
  const int m = X.rows(), w = end - begin;
  Tensor Y({m, w});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < w; ++j) Y.at(i, j) = X.at(i, begin + j);
  const bool need = req(x);
  Var out = push(std::move(Y), need);
  if (need) {
    node(out).backward = [this, x, out, m, w, begin] {
      const Tensor& G = node(out).grad;
      Tensor& gx = grad_of(x);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j) gx.at(i, begin + j) += G.at(i, j);
    };
  }
  return out;
}

Var Graph::concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols", "no inputs");
  const int m = value(parts[0]).rows();
  int total = 0;
  bool need = false;
  for (Var p : parts) {
    require(value(p).rank() == 2 && value(p).rows() == m, "concat_cols", "row mismatch");
    total += value(p).cols();
    need = need || req(p);
  }
  Tensor Y({m, total});
  int off = 0;
  for (Var p : parts) {
    const Tensor& P = value(p);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < P.cols(); ++j) Y.at(i, off + j) = P.at(i, j);
    off += P.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  Var out = push(std::move(Y), need);
  if (need) {
    node(out).backward = [this, inputs, out, m] {
      const Tensor& G = node(out).grad;
      int off = 0;
      for (Var p : inputs) {
        const int w = value(p).cols();
        if (req(p)) {
          Tensor& g = grad_of(p);
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j) g.at(i, j) += G.at(i, off + j);
        }
        off += w;
      }
    };
  }
  return out;
}

Var Graph::depthwise_conv_time(Var x, Var w, Var b) {
  const Tensor& X = value(x);
  const Tensor& W = value(w);
  const Tensor& B = value(b);
  require(X.rank() == 2 && W.rank() == 2 && W.cols() == X.cols() && W.rows() % 2 == 1 &&
              B.size() == static_cast<std::size_t>(X.cols()),
          "depthwise_conv_time", "shape mismatch");
  const int T = X.rows(), d = X.cols(), k = W.rows(), h = k / 2;
  Tensor Y({T, d});
  for (int t = 0; t < T; ++t)
    for (int j = 0; j < d; ++j) {
      double s = B[static_cast<std::size_t>(j)];
      for (int m = 0; m < k; ++m) {
        const int ti = t + m - h;
        if (ti >= 0 && ti < T) s += W.at(m, j) * X.at(ti, j);
      }
      Y.at(t, j) = s;
    }
  const bool need = req(x) || req(w) || req(b);
  Var out = push(std::move(Y), need);
  if (need) {
    node(out).backward = [this, x, w, b, out, T, d, k, h] {
      const Tensor& G = node(out).grad;
      const Tensor& X = value(x);
      const Tensor& W = value(w);
      for (int t = 0; t < T; ++t)
        for (int j = 0; j < d; ++j) {
          const double g = G.at(t, j);
          if (req(b)) grad_of(b)[static_cast<std::size_t>(j)] += g;
          for (int m = 0; m < k; ++m) {
            const int ti = t + m - h;
            if (ti < 0 || ti >= T) continue;
            if (req(w)) grad_of(w).at(m, j) += g * X.at(ti, j);
            if (req(x)) grad_of(x).at(ti, j) += g * W.at(m, j);
          }
        }
    };
  }
  return out;
}

Var Graph::add_relative_bias(Var scores, Var bias, int head, int max_dist) {
  const Tensor& S = value(scores);
  const Tensor& Bi = value(bias);
  require(S.rank() == 2 && Bi.rank() == 2 && Bi.cols() == 2 * max_dist + 1 && head < Bi.rows(), "add_relative_bias",
          "shape mismatch");
  const int m = S.rows(), n = S.cols();
  auto idx = [max_dist](int i, int j) { return std::clamp(j - i, -max_dist, max_dist) + max_dist; };
  Tensor Y = S;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) Y.at(i, j) += Bi.at(head, idx(i, j));
  const bool need = req(scores) || req(bias);
  Var out = push(std::move(Y), need);
  if (need) {
    node(out).backward = [this, scores, bias, head, out, m, n, idx] {
      const Tensor& G = node(out).grad;
      if (req(scores)) {
        Tensor& g = grad_of(scores);
        for (std::size_t i = 0; i < G.size(); ++i) g[i] += G[i];
      }
      if (req(bias)) {
        Tensor& g = grad_of(bias);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) g.at(head, idx(i, j)) += G.at(i, j);
      }
    };
  }
  return out;
}

Var Graph::conv3d(Var x, Var w, Var b, int stride) {
  const Tensor& X = value(x);
  const Tensor& W = value(w);
  const Tensor& B = value(b);
  require(X.rank() == 3 && W.rank() == 4 && B.size() == static_cast<std::size_t>(W.dim(0)) && stride >= 1, "conv3d",
          "x " + shape_string(X.shape()) + " w " + shape_string(W.shape()));
  const int T = X.dim(0), H = X.dim(1), Wd = X.dim(2);
  const int C = W.dim(0), kt = W.dim(1), kh = W.dim(2), kw = W.dim(3);
  const int pt = kt / 2, ph = kh / 2, pw = kw / 2;
  const int Ho = (H + 2 * ph - kh) / stride + 1, Wo = (Wd + 2 * pw - kw) / stride + 1;
  require(Ho > 0 && Wo > 0, "conv3d", "input smaller than kernel");
  Tensor Y({T, C, Ho, Wo});
  const std::size_t in_frame = static_cast<std::size_t>(H) * Wd, out_plane = static_cast<std::size_t>(Ho) * Wo;

  // Calls fn(out_row, in_row, weight_index, lo, hi, off) for every kernel tap
  // and output row that touches valid input.
  auto for_each_tap = [=](auto&& fn) {
    for (int t = 0; t < T; ++t)
      for (int c = 0; c < C; ++c)
        for (int dt = 0; dt < kt; ++dt) {
          const int ti = t + dt - pt;
          if (ti < 0 || ti >= T) continue;
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              const std::size_t widx = ((static_cast<std::size_t>(c) * kt + dt) * kh + ky) * kw + kx;
              int lo, hi;
              valid_range(Wo, stride, kx - pw, Wd, lo, hi);
              for (int oy = 0; oy < Ho; ++oy) {
                const int iy = oy * stride + ky - ph;
                if (iy < 0 || iy >= H) continue;
                const std::size_t out_off = (static_cast<std::size_t>(t) * C + c) * out_plane + static_cast<std::size_t>(oy) * Wo;
                const std::size_t in_off = static_cast<std::size_t>(ti) * in_frame + static_cast<std::size_t>(iy) * Wd;
                fn(out_off, in_off, widx, lo, hi, kx - pw);
              }
            }
        }
  };

  for (int t = 0; t < T; ++t)
    for (int c = 0; c < C; ++c)
      std::fill_n(Y.data() + (static_cast<std::size_t>(t) * C + c) * out_plane, out_plane, B[static_cast<std::size_t>(c)]);
  {
    double* yd = Y.data();
    const double* xd = X.data();
    const double* wd = W.data();
    for_each_tap([&](std::size_t oo, std::size_t io, std::size_t wi, int lo, int hi, int off) {
      const double wv = wd[wi];
      double* yr = yd + oo;
      const double* xr = xd + io + off;
      for (int ox = lo; ox < hi; ++ox) yr[ox] += wv * xr[ox * stride];
    });
  }
  const bool need = req(x) || req(w) || req(b);
  Var out = push(std::move(Y), need);
  if (need) {
    node(out).backward = [this, x, w, b, out, for_each_tap, stride, T, C, out_plane] {
      const Tensor& G = node(out).grad;
      const Tensor& X = value(x);
      const Tensor& W = value(w);
      if (req(b)) {
        Tensor& gb = grad_of(b);
        for (int t = 0; t < T; ++t)
          for (int c = 0; c < C; ++c) {
            const double* g = G.data() + (static_cast<std::size_t>(t) * C + c) * out_plane;
            double s = 0.0;
            for (std::size_t i = 0; i < out_plane; ++i) s += g[i];
            gb[static_cast<std::size_t>(c)] += s;
          }
      }
      const bool gw_needed = req(w), gx_needed = req(x);
      double* gw = gw_needed ? grad_of(w).data() : nullptr;
      double* gx = gx_needed ? grad_of(x).data() : nullptr;
      const double* xd = X.data();
      const double* wd = W.data();
      const double* gd = G.data();
      for_each_tap([&](std::size_t oo, std::size_t io, std::size_t wi, int lo, int hi, int off) {
        const double* gr = gd + oo;
        if (gw) {
          const double* xr = xd + io + off;
          double s = 0.0;
          for (int ox = lo; ox < hi; ++ox) s += gr[ox] * xr[ox * stride];
          gw[wi] += s;
        }
        if (gx) {
          const double wv = wd[wi];
          double* gxr = gx + io + off;
          for (int ox = lo; ox < hi; ++ox) gxr[ox * stride] += wv * gr[ox];
        }
      });
    };
  }
  return out;
}

Var Graph::conv2d_frames(Var x, Var w, Var b, int stride) {
  const Tensor& X = value(x);
  const Tensor& W = value(w);
  const Tensor& B = value(b);
  require(X.rank() == 4 && W.rank() == 4 && W.dim(1) == X.dim(1) && B.size() == static_cast<std::size_t>(W.dim(0)) &&
              stride >= 1,
          "conv2d_frames", "x " + shape_string(X.shape()) + " w " + shape_string(W.shape()));
  const int T = X.dim(0), Ci = X.dim(1), H = X.dim(2), Wd = X.dim(3);
  const int Co = W.dim(0), kh = W.dim(2), kw = W.dim(3);
  const int ph = kh / 2, pw = kw / 2;
  const int Ho = (H + 2 * ph - kh) / stride + 1, Wo = (Wd + 2 * pw - kw) / stride + 1;
  require(Ho > 0 && Wo > 0, "conv2d_frames", "input smaller than kernel");
  Tensor Y({T, Co, Ho, Wo});
  const std::size_t in_plane = static_cast<std::size_t>(H) * Wd, out_plane = static_cast<std::size_t>(Ho) * Wo;

  auto for_each_tap = [=](auto&& fn) {
    for (int t = 0; t < T; ++t)
      for (int co = 0; co < Co; ++co)
        for (int ci = 0; ci < Ci; ++ci)
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              const std::size_t widx = ((static_cast<std::size_t>(co) * Ci + ci) * kh + ky) * kw + kx;
              int lo, hi;
              valid_range(Wo, stride, kx - pw, Wd, lo, hi);
              for (int oy = 0; oy < Ho; ++oy) {
                const int iy = oy * stride + ky - ph;
                if (iy < 0 || iy >= H) continue;
                const std::size_t out_off = (static_cast<std::size_t>(t) * Co + co) * out_plane + static_cast<std::size_t>(oy) * Wo;
                const std::size_t in_off = (static_cast<std::size_t>(t) * Ci + ci) * in_plane + static_cast<std::size_t>(iy) * Wd;
                fn(out_off, in_off, widx, lo, hi, kx - pw);
              }
            }
  };

  for (int t = 0; t < T; ++t)
    for (int c = 0; c < Co; ++c)
      std::fill_n(Y.data() + (static_cast<std::size_t>(t) * Co + c) * out_plane, out_plane, B[static_cast<std::size_t>(c)]);
  {
    double* yd = Y.data();
    const double* xd = X.data();
    const double* wd = W.data();
    for_each_tap([&](std::size_t oo, std::size_t io, std::size_t wi, int lo, int hi, int off) {
      const double wv = wd[wi];
      double* yr = yd + oo;
      const double* xr = xd + io + off;
      for (int ox = lo; ox < hi; ++ox) yr[ox] += wv * xr[ox * stride];
    });
  }
  const bool need = req(x) || req(w) || req(b);
  Var out = push(std::move(Y), need);
  if (need) {
    node(out).backward = [this, x, w, b, out, for_each_tap, stride, T, Co, out_plane] {
      const Tensor& G = node(out).grad;
      const Tensor& X = value(x);
      const Tensor& W = value(w);
      if (req(b)) {
        Tensor& gb = grad_of(b);
        for (int t = 0; t < T; ++t)
          for (int c = 0; c < Co; ++c) {
            const double* g = G.data() + (static_cast<std::size_t>(t) * Co + c) * out_plane;
            double s = 0.0;
            for (std::size_t i = 0; i < out_plane; ++i) s += g[i];
            gb[static_cast<std::size_t>(c)] += s;
          }
      }
      double* gw = req(w) ? grad_of(w).data() : nullptr;
      double* gx = req(x) ? grad_of(x).data() : nullptr;
      const double* xd = X.data();
      const double* wd = W.data();
      const double* gd = G.data();
      for_each_tap([&](std::size_t oo, std::size_t io, std::size_t wi, int lo, int hi, int off) {
        const double* gr = gd + oo;
        if (gw) {
          const double* xr = xd + io + off;
          double s = 0.0;
          for (int ox = lo; ox < hi; ++ox) s += gr[ox] * xr[ox * stride];
          gw[wi] += s;
        }
        if (gx) {
          const double wv = wd[wi];
          double* gxr = gx + io + off;
          for (int ox = lo; ox < hi; ++ox) gxr[ox * stride] += wv * gr[ox];
        }
      });
    };
  }
  return out;
}

Var Graph::global_avg_pool(Var x) {
  const Tensor& X = value(x);
  require(X.rank() == 4, "global_avg_pool", "expects [T,C,H,W]");
  const int T = X.dim(0), C = X.dim(1);
  const std::size_t plane = static_cast<std::size_t>(X.dim(2)) * X.dim(3);
  Tensor Y({T, C});
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < C; ++c) {
      const double* p = X.data() + (static_cast<std::size_t>(t) * C + c) * plane;
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      Y.at(t, c) = s / static_cast<double>(plane);
    }
  const bool need = req(x);
  Var out = push(std::move(Y), need);
  if (need) {
    node(out).backward = [this, x, out, T, C, plane] {
      const Tensor& G = node(out).grad;
      double* g = grad_of(x).data();
      for (int t = 0; t < T; ++t)
        for (int c = 0; c < C; ++c) {
          const double v = G.at(t, c) / static_cast<double>(plane);
          double* p = g + (static_cast<std::size_t>(t) * C + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) p[i] += v;
        }
    };
  }
  return out;
}

Var Graph::embedding(Var table, std::span<const int> ids) {
  const Tensor& E = value(table);
  require(E.rank() == 2, "embedding", "table must be a matrix");
  const int L = static_cast<int>(ids.size()), d = E.cols();
  Tensor Y({L, d});
  for (int r = 0; r < L; ++r) {
    const int id = ids[static_cast<std::size_t>(r)];
    require(id >= 0 && id < E.rows(), "embedding", "id out of range");
    for (int j = 0; j < d; ++j) Y.at(r, j) = E.at(id, j);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  const bool need = req(table);
  Var out = push(std::move(Y), need);
  if (need) {
    node(out).backward = [this, table, out, idv, d] {
      const Tensor& G = node(out).grad;
      Tensor& g = grad_of(table);
      for (std::size_t r = 0; r < idv.size(); ++r)
        for (int j = 0; j < d; ++j) g.at(idv[r], j) += G.at(static_cast<int>(r), j);
    };
  }
  return out;
}

Var Graph::pick_sum(Var x, std::span<const int> targets) {
  const Tensor& X = value(x);
  require(X.rank() == 2 && static_cast<std::size_t>(X.rows()) == targets.size(), "pick_sum", "row/target mismatch");
  double s = 0.0;
  for (std::size_t r = 0; r < targets.size(); ++r) s += X.at(static_cast<int>(r), targets[r]);
  std::vector<int> tv(targets.begin(), targets.end());
  const bool need = req(x);
  Var out = push(Tensor({1}, s), need);
  if (need) {
    node(out).backward = [this, x, out, tv] {
      const double g = node(out).grad[0];
      Tensor& gx = grad_of(x);
      for (std::size_t r = 0; r < tv.size(); ++r) gx.at(static_cast<int>(r), tv[r]) += g;
    };
  }
  return out;
}

Var Graph::ctc_loglik(Var logprobs, std::span<const int> target, int blank) {
  const Tensor& X = value(logprobs);
  require(X.rank() == 2, "ctc_loglik", "expects [T,V]");
  CtcPosterior post(X.rows(), X.cols(), X.values());
  CtcLossResult res = ctc_loss(post, target, blank, req(logprobs));
  const bool need = req(logprobs) && res.reachable;
  Var out = push(Tensor({1}, -res.nll), need);
  if (need) {
    node(out).backward = [this, logprobs, out, grad = std::move(res.grad)] {
      const double g = node(out).grad[0];
      Tensor& gx = grad_of(logprobs);
      // d loglik = -d nll
      for (std::size_t i = 0; i < grad.size(); ++i) gx[i] -= g * grad[i];
    };
  }
  return out;
}

}  // namespace lipread
