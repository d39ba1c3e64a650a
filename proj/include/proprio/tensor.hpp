#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

namespace proprio::tensor {

/// Dense 64-bit float tensor, row-major. Shapes are small (<= 3 dims here)
/// and sizes are desk-scale, so everything is a flat heap vector.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, double fill = 0.0) : shape(std::move(s)) {
    data.assign(numel_of(shape), fill);
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
  }

  std::size_t numel() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  // 2D accessors (row-major)
  double& at2(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  double at2(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

  static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }

  static Tensor randn(std::vector<std::size_t> s, std::mt19937_64& engine, double stddev = 1.0) {
    Tensor t(std::move(s));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.data) v = dist(engine);
    return t;
  }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

// --- raw matrix kernels (no autodiff) ---------------------------------------

/// C += A(m x k) * B(k x n)
inline void mm_nn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                      std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* cr = c + i * n;
    const double* ar = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ar[p];
      const double* br = b + p * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

/// C += A(m x k) * B^T where B is (n x k)
inline void mm_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                      std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ar = a + i * k;
    double* cr = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* br = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ar[p] * br[p];
      cr[j] += acc;
    }
  }
}

/// C += A^T * B where A is (k x m), B is (k x n)
inline void mm_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                      std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ar = a + p * m;
    const double* br = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = ar[i];
      double* cr = c + i * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

// --- reverse-mode graph ------------------------------------------------------

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;  // pulls this->grad into parents' grads

  void ensure_grad() {
    if (grad.shape != value.shape) {
      grad = Tensor::zeros(value.shape);
    }
  }
  void zero_grad() {
    if (!grad.data.empty()) grad.fill(0.0);
  }
};

inline Var make_param(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = true;
  n->ensure_grad();
  return n;
}

inline Var make_const(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  return n;
}

/// Records operations in creation order; backward walks them in reverse.
/// One tape per forward pass; parameters live outside the tape and
/// accumulate gradients across passes until explicitly zeroed.
class Tape {
 public:
  Var record(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
    for (const auto& p : n->parents)
      if (p->requires_grad) n->requires_grad = true;
    order_.push_back(n);
    return n;
  }

  void backward(const Var& loss) {
    if (loss->value.numel() != 1)
      throw std::invalid_argument("backward: loss must be a scalar");
    loss->ensure_grad();
    loss->grad[0] = 1.0;
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      Node& n = **it;
      if (!n.requires_grad || !n.backprop || n.grad.data.empty()) continue;
      for (auto& p : n.parents)
        if (p->requires_grad) p->ensure_grad();
      n.backprop(n);
    }
  }

  void clear() { order_.clear(); }
  std::size_t size() const { return order_.size(); }

 private:
  std::vector<Var> order_;
};

// --- ops ----------------------------------------------------------------------

inline Var matmul(Tape& tape, const Var& a, const Var& b) {
  if (a->value.shape.size() != 2 || b->value.shape.size() != 2 ||
      a->value.shape[1] != b->value.shape[0])
    throw std::invalid_argument("matmul: shape mismatch");
  const std::size_t m = a->value.shape[0], k = a->value.shape[1], n = b->value.shape[1];
  Tensor out({m, n});
  mm_nn_acc(a->value.data.data(), b->value.data.data(), out.data.data(), m, k, n);
  return tape.record(std::move(out), {a, b}, [m, k, n](Node& node) {
    const Var& a = node.parents[0];
    const Var& b = node.parents[1];
    if (a->requires_grad)
      mm_nt_acc(node.grad.data.data(), b->value.data.data(), a->grad.data.data(), m, n, k);
    if (b->requires_grad)
      mm_tn_acc(a->value.data.data(), node.grad.data.data(), b->grad.data.data(), k, m, n);
  });
}

/// X (m x n) + row vector b (n), broadcast over rows.
inline Var add_bias(Tape& tape, const Var& x, const Var& b) {
  if (x->value.shape.size() != 2 || b->value.numel() != x->value.shape[1])
    throw std::invalid_argument("add_bias: shape mismatch");
  const std::size_t m = x->value.shape[0], n = x->value.shape[1];
  Tensor out = x->value;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += b->value[j];
  return tape.record(std::move(out), {x, b}, [m, n](Node& node) {
    const Var& x = node.parents[0];
    const Var& b = node.parents[1];
    if (x->requires_grad)
      for (std::size_t i = 0; i < node.grad.numel(); ++i) x->grad[i] += node.grad[i];
    if (b->requires_grad)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) b->grad[j] += node.grad[i * n + j];
  });
}

inline Var add(Tape& tape, const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value)) throw std::invalid_argument("add: shape mismatch");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
  return tape.record(std::move(out), {a, b}, [](Node& node) {
    for (auto& p : node.parents)
      if (p->requires_grad)
        for (std::size_t i = 0; i < node.grad.numel(); ++i) p->grad[i] += node.grad[i];
  });
}

inline Var relu(Tape& tape, const Var& x) {
  Tensor out = x->value;
  for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
  return tape.record(std::move(out), {x}, [](Node& node) {
    const Var& x = node.parents[0];
    if (!x->requires_grad) return;
    for (std::size_t i = 0; i < node.grad.numel(); ++i)
      if (x->value[i] > 0.0) x->grad[i] += node.grad[i];
  });
}

inline Var mul_scalar(Tape& tape, const Var& x, double s) {
  Tensor out = x->value;
  for (auto& v : out.data) v *= s;
  return tape.record(std::move(out), {x}, [s](Node& node) {
    const Var& x = node.parents[0];
    if (!x->requires_grad) return;
    for (std::size_t i = 0; i < node.grad.numel(); ++i) x->grad[i] += s * node.grad[i];
  });
}

/// Column-wise max over the point axis of an (M x C) set; permutation
/// invariant. Subgradient routes to exactly one argmax row per channel,
/// ties broken toward the lowest row index.
inline Var global_max_pool(Tape& tape, const Var& x) {
  if (x->value.shape.size() != 2) throw std::invalid_argument("global_max_pool: need M x C");
  const std::size_t m = x->value.shape[0], c = x->value.shape[1];
  if (m == 0) throw std::invalid_argument("global_max_pool: empty point axis");
  Tensor out({1, c});
  auto argmax = std::make_shared<std::vector<std::size_t>>(c, 0);
  for (std::size_t j = 0; j < c; ++j) {
    double best = x->value.data[j];
    std::size_t best_i = 0;
    for (std::size_t i = 1; i < m; ++i) {
      double v = x->value.data[i * c + j];
      if (v > best) {
        best = v;
        best_i = i;
      }
    }
    out.data[j] = best;
    (*argmax)[j] = best_i;
  }
  return tape.record(std::move(out), {x}, [argmax, c](Node& node) {
    const Var& x = node.parents[0];
    if (!x->requires_grad) return;
    for (std::size_t j = 0; j < c; ++j) x->grad[(*argmax)[j] * c + j] += node.grad[j];
  });
}

inline Var reshape(Tape& tape, const Var& x, std::vector<std::size_t> shape) {
  if (Tensor::numel_of(shape) != x->value.numel())
    throw std::invalid_argument("reshape: element count mismatch");
  Tensor out;
  out.shape = std::move(shape);
  out.data = x->value.data;
  return tape.record(std::move(out), {x}, [](Node& node) {
    const Var& x = node.parents[0];
    if (!x->requires_grad) return;
    for (std::size_t i = 0; i < node.grad.numel(); ++i) x->grad[i] += node.grad[i];
  });
}

inline Var transpose2d(Tape& tape, const Var& x) {
  if (x->value.shape.size() != 2) throw std::invalid_argument("transpose2d: need 2D");
  const std::size_t m = x->value.shape[0], n = x->value.shape[1];
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.data[j * m + i] = x->value.data[i * n + j];
  return tape.record(std::move(out), {x}, [m, n](Node& node) {
    const Var& x = node.parents[0];
    if (!x->requires_grad) return;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) x->grad[i * n + j] += node.grad[j * m + i];
  });
}

/// Transposed 2D convolution on a single (Cin x H x W) map with kernel
/// (Cin x Cout x kh x kw). Output is (Cout x H2 x W2) with
/// H2 = (H-1)*stride - 2*pad + kh + output_pad. The layer defaults
/// (k=3, stride=2, pad=1, output_pad=1) exactly double the spatial dims.
inline Var conv_transpose2d(Tape& tape, const Var& x, const Var& kernel, const Var& bias,
                            std::size_t stride = 2, std::size_t pad = 1,
                            std::size_t output_pad = 1) {
  if (x->value.shape.size() != 3 || kernel->value.shape.size() != 4)
    throw std::invalid_argument("conv_transpose2d: bad ranks");
  const std::size_t cin = x->value.shape[0], h = x->value.shape[1], w = x->value.shape[2];
  if (kernel->value.shape[0] != cin)
    throw std::invalid_argument("conv_transpose2d: kernel Cin mismatch");
  const std::size_t cout = kernel->value.shape[1], kh = kernel->value.shape[2],
                    kw = kernel->value.shape[3];
  if (bias->value.numel() != cout) throw std::invalid_argument("conv_transpose2d: bias mismatch");
  const std::size_t h2 = (h - 1) * stride + kh + output_pad - 2 * pad;
  const std::size_t w2 = (w - 1) * stride + kw + output_pad - 2 * pad;

  Tensor out({cout, h2, w2});
  for (std::size_t co = 0; co < cout; ++co) {
    double bv = bias->value[co];
    double* plane = out.data.data() + co * h2 * w2;
    for (std::size_t i = 0; i < h2 * w2; ++i) plane[i] = bv;
  }
  const std::size_t ksz = cout * kh * kw;  // kernel row per input channel
  std::vector<double> acc(ksz);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xw = 0; xw < w; ++xw) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double a = x->value.data[(ci * h + y) * w + xw];
        if (a == 0.0) continue;
        const double* krow = kernel->value.data.data() + ci * ksz;
        for (std::size_t t = 0; t < ksz; ++t) acc[t] += a * krow[t];
      }
      for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(y * stride + ky) -
                                    static_cast<std::ptrdiff_t>(pad);
          if (oy < 0 || oy >= static_cast<std::ptrdiff_t>(h2)) continue;
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(xw * stride + kx) -
                                      static_cast<std::ptrdiff_t>(pad);
            if (ox < 0 || ox >= static_cast<std::ptrdiff_t>(w2)) continue;
            out.data[(co * h2 + static_cast<std::size_t>(oy)) * w2 + static_cast<std::size_t>(ox)] +=
                acc[(co * kh + ky) * kw + kx];
          }
        }
    }

  auto geom = [=](Node& node) {
    const Var& x = node.parents[0];
    const Var& kernel = node.parents[1];
    const Var& bias = node.parents[2];
    if (bias->requires_grad)
      for (std::size_t co = 0; co < cout; ++co) {
        const double* plane = node.grad.data.data() + co * h2 * w2;
        double s = 0.0;
        for (std::size_t i = 0; i < h2 * w2; ++i) s += plane[i];
        bias->grad[co] += s;
      }
    std::vector<double> gvec(cout * kh * kw);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xw = 0; xw < w; ++xw) {
        // gather the output gradients this input position scattered into
        for (std::size_t co = 0; co < cout; ++co)
          for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(y * stride + ky) -
                                        static_cast<std::ptrdiff_t>(pad);
              const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(xw * stride + kx) -
                                        static_cast<std::ptrdiff_t>(pad);
              double g = 0.0;
              if (oy >= 0 && oy < static_cast<std::ptrdiff_t>(h2) && ox >= 0 &&
                  ox < static_cast<std::ptrdiff_t>(w2))
                g = node.grad.data[(co * h2 + static_cast<std::size_t>(oy)) * w2 +
                                   static_cast<std::size_t>(ox)];
              gvec[(co * kh + ky) * kw + kx] = g;
            }
        const std::size_t ksz2 = cout * kh * kw;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const double* krow = kernel->value.data.data() + ci * ksz2;
          const double a = x->value.data[(ci * h + y) * w + xw];
          if (x->requires_grad) {
            double acc2 = 0.0;
            for (std::size_t t = 0; t < ksz2; ++t) acc2 += krow[t] * gvec[t];
            x->grad.data[(ci * h + y) * w + xw] += acc2;
          }
          if (kernel->requires_grad && a != 0.0) {
            double* kg = kernel->grad.data.data() + ci * ksz2;
            for (std::size_t t = 0; t < ksz2; ++t) kg[t] += a * gvec[t];
          }
        }
      }
  };
  return tape.record(std::move(out), {x, kernel, bias}, geom);
}

/// Sum of squared differences against a constant target: ||x - t||^2.
inline Var sum_sq_diff(Tape& tape, const Var& x, const Tensor& target) {
  if (!x->value.same_shape(target)) throw std::invalid_argument("sum_sq_diff: shape mismatch");
  double loss = 0.0;
  for (std::size_t i = 0; i < x->value.numel(); ++i) {
    double d = x->value[i] - target[i];
    loss += d * d;
  }
  Tensor out({1});
  out[0] = loss;
  auto tgt = std::make_shared<Tensor>(target);
  return tape.record(std::move(out), {x}, [tgt](Node& node) {
    const Var& x = node.parents[0];
    if (!x->requires_grad) return;
    const double g = node.grad[0];
    for (std::size_t i = 0; i < x->value.numel(); ++i)
      x->grad[i] += 2.0 * (x->value[i] - (*tgt)[i]) * g;
  });
}

inline Var sum(Tape& tape, const Var& x) {
  Tensor out({1});
  for (double v : x->value.data) out[0] += v;
  return tape.record(std::move(out), {x}, [](Node& node) {
    const Var& x = node.parents[0];
    if (!x->requires_grad) return;
    for (std::size_t i = 0; i < x->value.numel(); ++i) x->grad[i] += node.grad[0];
  });
}

// --- layers -------------------------------------------------------------------

struct Linear {
  Var weight;  // (in x out)
  Var bias;    // (out)

  Linear() = default;
  Linear(std::size_t in, std::size_t out, std::mt19937_64& engine) {
    weight = make_param(Tensor::randn({in, out}, engine, std::sqrt(2.0 / static_cast<double>(in))));
    bias = make_param(Tensor::zeros({out}));
  }

  Var forward(Tape& tape, const Var& x) const {
    return add_bias(tape, matmul(tape, x, weight), bias);
  }

  void collect(std::vector<Var>& out) const {
    out.push_back(weight);
    out.push_back(bias);
  }
};

/// Identical per-point feature lift: linear+relu stacks applied to every
/// row of an (M x C) point set (shared weights across points).
struct PointwiseMlp {
  std::vector<Linear> layers;

  PointwiseMlp() = default;
  PointwiseMlp(const std::vector<std::size_t>& widths, std::mt19937_64& engine) {
    for (std::size_t i = 0; i + 1 < widths.size(); ++i)
      layers.emplace_back(widths[i], widths[i + 1], engine);
  }

  Var forward(Tape& tape, Var x) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = layers[i].forward(tape, x);
      if (i + 1 < layers.size()) x = relu(tape, x);
    }
    return x;
  }

  void collect(std::vector<Var>& out) const {
    for (const auto& l : layers) l.collect(out);
  }
};

struct ConvTranspose2d {
  Var kernel;  // (Cin x Cout x k x k)
  Var bias;    // (Cout)
  std::size_t stride = 2, pad = 1, output_pad = 1;

  ConvTranspose2d() = default;
  ConvTranspose2d(std::size_t cin, std::size_t cout, std::size_t k, std::mt19937_64& engine,
                  std::size_t stride_ = 2, std::size_t pad_ = 1, std::size_t output_pad_ = 1)
      : stride(stride_), pad(pad_), output_pad(output_pad_) {
    double stddev = std::sqrt(2.0 / static_cast<double>(cin * k * k));
    kernel = make_param(Tensor::randn({cin, cout, k, k}, engine, stddev));
    bias = make_param(Tensor::zeros({cout}));
  }

  Var forward(Tape& tape, const Var& x) const {
    return conv_transpose2d(tape, x, kernel, bias, stride, pad, output_pad);
  }

  void collect(std::vector<Var>& out) const {
    out.push_back(kernel);
    out.push_back(bias);
  }
};

}  // namespace proprio::tensor
