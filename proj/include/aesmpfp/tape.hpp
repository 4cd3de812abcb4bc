#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace aesmpfp {

// A trainable parameter: persistent value plus a gradient accumulator that
// the optimizer owns the lifecycle of.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param() = default;
  Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
    grad = Tensor::zeros(value.dims());
  }

  void zero_grad() { grad.fill(0.0); }
};

// Kaiming-uniform over fan-in: U(-sqrt(3/fan_in), sqrt(3/fan_in)).
inline Tensor kaiming_uniform(std::vector<size_t> dims, size_t fan_in, RngStream& rng) {
  Tensor t(std::move(dims));
  const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
  for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

class Tape;

struct Var {
  Tape* tape = nullptr;
  size_t idx = static_cast<size_t>(-1);
};

// Reverse-mode autodiff over a per-step graph.  Values are computed eagerly;
// backward() walks the node list once in reverse.  Leaf nodes reference the
// Param's storage directly and accumulate into Param::grad.
class Tape {
  static constexpr size_t NPOS = static_cast<size_t>(-1);

  enum class Op {
    Leaf,
    Const,
    Add,
    Sub,
    Mul,
    MulConst,
    Minimum,
    Linear,     // x @ W^T + b
    MatMulNT,   // x @ W^T
    Scale,
    AffineConst,  // p0 * x + p1
    ScaleByVar,   // scalar-var * tensor
    Tanh,
    Sigmoid,
    Relu,
    Softplus,
    Exp,
    Log,
    Square,
    ClampMin,
    ConcatCols,
    SliceCols,
    RowSum,
    ColMean,
    SumAll,
    MeanAll,
    AvgPool,
    Upsample,
    BceLogits,
    Mse,
    KlDiag,
  };

  struct Node {
    Op op;
    size_t a = NPOS, b = NPOS, c = NPOS, d = NPOS;
    Tensor val;                  // owned value (empty for leaves)
    const Tensor* ext = nullptr; // external value (leaf)
    Tensor* ext_grad = nullptr;  // external grad target (leaf)
    Tensor grad;                 // local adjoint, allocated on first touch
    Tensor aux;                  // captured constants (targets, masks, noise)
    bool needs_grad = false;
    double p0 = 0.0, p1 = 0.0;
    size_t i0 = 0, i1 = 0;
  };

 public:
  void clear() { nodes_.clear(); }
  size_t size() const { return nodes_.size(); }

  const Tensor& value(Var v) const {
    const Node& n = nodes_[v.idx];
    return n.ext ? *n.ext : n.val;
  }

  // --- graph construction -------------------------------------------------

  Var param(Param& p) {
    Node n;
    n.op = Op::Leaf;
    n.ext = &p.value;
    n.ext_grad = &p.grad;
    n.needs_grad = true;
    return push(std::move(n));
  }

  Var constant(Tensor t) {
    Node n;
    n.op = Op::Const;
    n.val = std::move(t);
    n.needs_grad = false;
    return push(std::move(n));
  }

  Var add(Var a, Var b) { return binary(Op::Add, a, b); }
  Var sub(Var a, Var b) { return binary(Op::Sub, a, b); }
  Var mul(Var a, Var b) { return binary(Op::Mul, a, b); }
  Var minimum(Var a, Var b) { return binary(Op::Minimum, a, b); }

  Var mul_const(Var a, Tensor m) {
    check_same(value(a), m, "mul_const");
    Node n = unary_node(Op::MulConst, a);
    n.aux = std::move(m);
    n.val = value(a);
    for (size_t i = 0; i < n.val.numel(); ++i) n.val[i] *= n.aux[i];
    return push(std::move(n));
  }

  // y = x @ W^T + b with x (B,I), W (O,I), b (O)
  Var linear(Var x, Var w, Var b) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    const Tensor& bv = value(b);
    const size_t B = xv.rows(), I = xv.cols(), O = wv.rows();
    if (wv.cols() != I || bv.numel() != O) throw ShapeMismatch("linear");
    Node n;
    n.op = Op::Linear;
    n.a = x.idx;
    n.b = w.idx;
    n.c = b.idx;
    n.needs_grad = needs(x) || needs(w) || needs(b);
    n.val = Tensor::zeros({B, O});
    gemm_nt(xv.data(), wv.data(), n.val.data(), B, I, O);
    for (size_t r = 0; r < B; ++r) {
      double* row = n.val.data() + r * O;
      for (size_t j = 0; j < O; ++j) row[j] += bv[j];
    }
    return push(std::move(n));
  }

  // y = x @ W^T with x (B,I), W (O,I)
  Var matmul_nt(Var x, Var w) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    const size_t B = xv.rows(), I = xv.cols(), O = wv.rows();
    if (wv.cols() != I) throw ShapeMismatch("matmul_nt");
    Node n;
    n.op = Op::MatMulNT;
    n.a = x.idx;
    n.b = w.idx;
    n.needs_grad = needs(x) || needs(w);
    n.val = Tensor::zeros({B, O});
    gemm_nt(xv.data(), wv.data(), n.val.data(), B, I, O);
    return push(std::move(n));
  }

  Var scale(Var a, double s) {
    Node n = unary_node(Op::Scale, a);
    n.p0 = s;
    n.val = value(a);
    for (size_t i = 0; i < n.val.numel(); ++i) n.val[i] *= s;
    return push(std::move(n));
  }

  // y = p0 * x + p1 elementwise
  Var affine_const(Var a, double m, double c) {
    Node n = unary_node(Op::AffineConst, a);
    n.p0 = m;
    n.p1 = c;
    n.val = value(a);
    for (size_t i = 0; i < n.val.numel(); ++i) n.val[i] = m * n.val[i] + c;
    return push(std::move(n));
  }

  // y = s * x where s is a single-element Var
  Var scale_by_var(Var x, Var s) {
    if (value(s).numel() != 1) throw ShapeMismatch("scale_by_var: scalar expected");
    Node n;
    n.op = Op::ScaleByVar;
    n.a = x.idx;
    n.b = s.idx;
    n.needs_grad = needs(x) || needs(s);
    n.val = value(x);
    const double sv = value(s)[0];
    for (size_t i = 0; i < n.val.numel(); ++i) n.val[i] *= sv;
    return push(std::move(n));
  }

  Var tanh(Var a) {
    Node n = unary_node(Op::Tanh, a);
    n.val = value(a);
    for (size_t i = 0; i < n.val.numel(); ++i) n.val[i] = std::tanh(n.val[i]);
    return push(std::move(n));
  }

  Var sigmoid(Var a) {
    Node n = unary_node(Op::Sigmoid, a);
    n.val = value(a);
    for (size_t i = 0; i < n.val.numel(); ++i) n.val[i] = sigmoid_stable(n.val[i]);
    return push(std::move(n));
  }

  Var relu(Var a) {
    Node n = unary_node(Op::Relu, a);
    n.val = value(a);
    for (size_t i = 0; i < n.val.numel(); ++i) n.val[i] = n.val[i] > 0.0 ? n.val[i] : 0.0;
    return push(std::move(n));
  }

  Var softplus(Var a) {
    Node n = unary_node(Op::Softplus, a);
    n.val = value(a);
    for (size_t i = 0; i < n.val.numel(); ++i) n.val[i] = softplus_stable(n.val[i]);
    return push(std::move(n));
  }

  Var exp(Var a) {
    Node n = unary_node(Op::Exp, a);
    n.val = value(a);
    for (size_t i = 0; i < n.val.numel(); ++i) n.val[i] = std::exp(n.val[i]);
    return push(std::move(n));
  }

  Var log(Var a) {
    Node n = unary_node(Op::Log, a);
    n.val = value(a);
    for (size_t i = 0; i < n.val.numel(); ++i) n.val[i] = std::log(n.val[i]);
    return push(std::move(n));
  }

  Var square(Var a) {
    Node n = unary_node(Op::Square, a);
    n.val = value(a);
    for (size_t i = 0; i < n.val.numel(); ++i) n.val[i] *= n.val[i];
    return push(std::move(n));
  }

  Var clamp_min(Var a, double lo) {
    Node n = unary_node(Op::ClampMin, a);
    n.p0 = lo;
    n.val = value(a);
    for (size_t i = 0; i < n.val.numel(); ++i) n.val[i] = std::max(n.val[i], lo);
    return push(std::move(n));
  }

  Var concat_cols(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    const size_t B = av.rows();
    if (bv.rows() != B) throw ShapeMismatch("concat_cols rows");
    const size_t Ca = av.cols(), Cb = bv.cols();
    Node n;
    n.op = Op::ConcatCols;
    n.a = a.idx;
    n.b = b.idx;
    n.needs_grad = needs(a) || needs(b);
    n.val = Tensor::zeros({B, Ca + Cb});
    for (size_t r = 0; r < B; ++r) {
      std::memcpy(n.val.data() + r * (Ca + Cb), av.data() + r * Ca, Ca * sizeof(double));
      std::memcpy(n.val.data() + r * (Ca + Cb) + Ca, bv.data() + r * Cb,
                  Cb * sizeof(double));
    }
    return push(std::move(n));
  }

  Var slice_cols(Var a, size_t c0, size_t c1) {
    const Tensor& av = value(a);
    const size_t B = av.rows(), C = av.cols();
    if (c0 >= c1 || c1 > C) throw ShapeMismatch("slice_cols range");
    Node n = unary_node(Op::SliceCols, a);
    n.i0 = c0;
    n.i1 = c1;
    n.val = Tensor::zeros({B, c1 - c0});
    for (size_t r = 0; r < B; ++r)
      std::memcpy(n.val.data() + r * (c1 - c0), av.data() + r * C + c0,
                  (c1 - c0) * sizeof(double));
    return push(std::move(n));
  }

  Var row_sum(Var a) {
    const Tensor& av = value(a);
    const size_t B = av.rows(), C = av.cols();
    Node n = unary_node(Op::RowSum, a);
    n.val = Tensor::zeros({B, 1});
    for (size_t r = 0; r < B; ++r) {
      double s = 0.0;
      for (size_t j = 0; j < C; ++j) s += av[r * C + j];
      n.val[r] = s;
    }
    return push(std::move(n));
  }

  Var col_mean(Var a) {
    const Tensor& av = value(a);
    const size_t B = av.rows(), C = av.cols();
    Node n = unary_node(Op::ColMean, a);
    n.val = Tensor::zeros({1, C});
    for (size_t r = 0; r < B; ++r)
      for (size_t j = 0; j < C; ++j) n.val[j] += av[r * C + j];
    for (size_t j = 0; j < C; ++j) n.val[j] /= static_cast<double>(B);
    return push(std::move(n));
  }

  Var sum_all(Var a) {
    const Tensor& av = value(a);
    Node n = unary_node(Op::SumAll, a);
    double s = 0.0;
    for (size_t i = 0; i < av.numel(); ++i) s += av[i];
    n.val = Tensor::scalar(s);
    return push(std::move(n));
  }

  Var mean_all(Var a) {
    const Tensor& av = value(a);
    Node n = unary_node(Op::MeanAll, a);
    double s = 0.0;
    for (size_t i = 0; i < av.numel(); ++i) s += av[i];
    n.val = Tensor::scalar(s / static_cast<double>(av.numel()));
    return push(std::move(n));
  }

  // Block average pooling over rows interpreted as side x side grids.
  Var avg_pool(Var a, size_t side, size_t block) {
    const Tensor& av = value(a);
    if (av.cols() != side * side || side % block != 0)
      throw ShapeMismatch("avg_pool geometry");
    const size_t B = av.rows(), s = side / block;
    Node n = unary_node(Op::AvgPool, a);
    n.i0 = side;
    n.i1 = block;
    n.val = Tensor::zeros({B, s * s});
    const double inv = 1.0 / static_cast<double>(block * block);
    for (size_t r = 0; r < B; ++r) {
      const double* in = av.data() + r * side * side;
      double* out = n.val.data() + r * s * s;
      for (size_t oy = 0; oy < s; ++oy)
        for (size_t ox = 0; ox < s; ++ox) {
          double acc = 0.0;
          for (size_t dy = 0; dy < block; ++dy)
            for (size_t dx = 0; dx < block; ++dx)
              acc += in[(oy * block + dy) * side + ox * block + dx];
          out[oy * s + ox] = acc * inv;
        }
    }
    return push(std::move(n));
  }

  // Nearest-neighbor block upsampling, the inverse layout of avg_pool.
  Var upsample(Var a, size_t small_side, size_t block) {
    const Tensor& av = value(a);
    if (av.cols() != small_side * small_side) throw ShapeMismatch("upsample geometry");
    const size_t B = av.rows(), S = small_side * block;
    Node n = unary_node(Op::Upsample, a);
    n.i0 = small_side;
    n.i1 = block;
    n.val = Tensor::zeros({B, S * S});
    for (size_t r = 0; r < B; ++r) {
      const double* in = av.data() + r * small_side * small_side;
      double* out = n.val.data() + r * S * S;
      for (size_t y = 0; y < S; ++y)
        for (size_t x = 0; x < S; ++x)
          out[y * S + x] = in[(y / block) * small_side + x / block];
    }
    return push(std::move(n));
  }

  // Elementwise binary cross-entropy on logits against a constant target.
  Var bce_logits(Var x, Tensor target) {
    check_same(value(x), target, "bce_logits");
    Node n = unary_node(Op::BceLogits, x);
    n.aux = std::move(target);
    const Tensor& xv = value(x);
    n.val = Tensor::zeros(xv.dims());
    for (size_t i = 0; i < xv.numel(); ++i) {
      const double z = xv[i], t = n.aux[i];
      n.val[i] = std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
    }
    return push(std::move(n));
  }

  // Elementwise squared error against a constant target.
  Var mse(Var x, Tensor target) {
    check_same(value(x), target, "mse");
    Node n = unary_node(Op::Mse, x);
    n.aux = std::move(target);
    const Tensor& xv = value(x);
    n.val = Tensor::zeros(xv.dims());
    for (size_t i = 0; i < xv.numel(); ++i) {
      const double d = xv[i] - n.aux[i];
      n.val[i] = d * d;
    }
    return push(std::move(n));
  }

  // Elementwise KL( N(mu1, s1^2) || N(mu2, s2^2) ) for diagonal Gaussians.
  Var kl_diag(Var mu1, Var s1, Var mu2, Var s2) {
    const Tensor& m1 = value(mu1);
    check_same(m1, value(s1), "kl_diag");
    check_same(m1, value(mu2), "kl_diag");
    check_same(m1, value(s2), "kl_diag");
    Node n;
    n.op = Op::KlDiag;
    n.a = mu1.idx;
    n.b = s1.idx;
    n.c = mu2.idx;
    n.d = s2.idx;
    n.needs_grad = needs(mu1) || needs(s1) || needs(mu2) || needs(s2);
    n.val = Tensor::zeros(m1.dims());
    const Tensor& v1 = value(s1);
    const Tensor& m2 = value(mu2);
    const Tensor& v2 = value(s2);
    for (size_t i = 0; i < m1.numel(); ++i) {
      const double dm = m1[i] - m2[i];
      n.val[i] = std::log(v2[i] / v1[i]) +
                 (v1[i] * v1[i] + dm * dm) / (2.0 * v2[i] * v2[i]) - 0.5;
    }
    return push(std::move(n));
  }

  // --- backward ------------------------------------------------------------

  void backward(Var out) {
    Node& o = nodes_[out.idx];
    const Tensor& ov = o.ext ? *o.ext : o.val;
    if (ov.numel() != 1) throw ShapeMismatch("backward from non-scalar");
    touch_grad(out.idx)[0] += 1.0;

    for (size_t i = out.idx + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.op == Op::Leaf || n.op == Op::Const) continue;
      if (n.grad.numel() == 0) continue;  // not on any path to the output
      step_back(n);
    }
  }

 private:
  std::vector<Node> nodes_;

  static double sigmoid_stable(double z) {
    if (z >= 0.0) {
      const double e = std::exp(-z);
      return 1.0 / (1.0 + e);
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
  }

  static double softplus_stable(double z) {
    return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
  }

  static void check_same(const Tensor& a, const Tensor& b, const char* where) {
    if (!a.same_shape(b)) throw ShapeMismatch(std::string(where) + ": shape mismatch");
  }

  bool needs(Var v) const { return nodes_[v.idx].needs_grad; }

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  Node unary_node(Op op, Var a) {
    Node n;
    n.op = op;
    n.a = a.idx;
    n.needs_grad = needs(a);
    return n;
  }

  Var binary(Op op, Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    check_same(av, bv, "binary op");
    Node n;
    n.op = op;
    n.a = a.idx;
    n.b = b.idx;
    n.needs_grad = needs(a) || needs(b);
    n.val = Tensor::zeros(av.dims());
    switch (op) {
      case Op::Add:
        for (size_t i = 0; i < av.numel(); ++i) n.val[i] = av[i] + bv[i];
        break;
      case Op::Sub:
        for (size_t i = 0; i < av.numel(); ++i) n.val[i] = av[i] - bv[i];
        break;
      case Op::Mul:
        for (size_t i = 0; i < av.numel(); ++i) n.val[i] = av[i] * bv[i];
        break;
      case Op::Minimum:
        for (size_t i = 0; i < av.numel(); ++i) n.val[i] = std::min(av[i], bv[i]);
        break;
      default:
        throw Error("bad binary op");
    }
    return push(std::move(n));
  }

  const Tensor& nval(size_t i) const {
    const Node& n = nodes_[i];
    return n.ext ? *n.ext : n.val;
  }

  // Adjoint buffer for node i, allocated (or routed to Param::grad) on demand.
  // Returns nullptr when the node does not require gradients.
  Tensor* grad_target(size_t i) {
    Node& n = nodes_[i];
    if (!n.needs_grad) return nullptr;
    if (n.op == Op::Leaf) return n.ext_grad;
    if (n.grad.numel() == 0) n.grad = Tensor::zeros(nval(i).dims());
    return &n.grad;
  }

  Tensor& touch_grad(size_t i) {
    Tensor* g = grad_target(i);
    if (!g) throw Error("touch_grad on non-grad node");
    return *g;
  }

  void step_back(Node& n) {
    const Tensor& gy = n.grad;
    switch (n.op) {
      case Op::Add: {
        if (Tensor* ga = grad_target(n.a))
          for (size_t i = 0; i < gy.numel(); ++i) (*ga)[i] += gy[i];
        if (Tensor* gb = grad_target(n.b))
          for (size_t i = 0; i < gy.numel(); ++i) (*gb)[i] += gy[i];
        break;
      }
      case Op::Sub: {
        if (Tensor* ga = grad_target(n.a))
          for (size_t i = 0; i < gy.numel(); ++i) (*ga)[i] += gy[i];
        if (Tensor* gb = grad_target(n.b))
          for (size_t i = 0; i < gy.numel(); ++i) (*gb)[i] -= gy[i];
        break;
      }
      case Op::Mul: {
        const Tensor& av = nval(n.a);
        const Tensor& bv = nval(n.b);
        if (Tensor* ga = grad_target(n.a))
          for (size_t i = 0; i < gy.numel(); ++i) (*ga)[i] += gy[i] * bv[i];
        if (Tensor* gb = grad_target(n.b))
          for (size_t i = 0; i < gy.numel(); ++i) (*gb)[i] += gy[i] * av[i];
        break;
      }
      case Op::MulConst: {
        if (Tensor* ga = grad_target(n.a))
          for (size_t i = 0; i < gy.numel(); ++i) (*ga)[i] += gy[i] * n.aux[i];
        break;
      }
      case Op::Minimum: {
        const Tensor& av = nval(n.a);
        const Tensor& bv = nval(n.b);
        Tensor* ga = grad_target(n.a);
        Tensor* gb = grad_target(n.b);
        for (size_t i = 0; i < gy.numel(); ++i) {
          if (av[i] <= bv[i]) {
            if (ga) (*ga)[i] += gy[i];
          } else if (gb) {
            (*gb)[i] += gy[i];
          }
        }
        break;
      }
      case Op::Linear:
      case Op::MatMulNT: {
        const Tensor& xv = nval(n.a);
        const Tensor& wv = nval(n.b);
        const size_t B = xv.rows(), I = xv.cols(), O = wv.rows();
        if (Tensor* gx = grad_target(n.a))
          gemm_nn(gy.data(), wv.data(), gx->data(), B, O, I);
        if (Tensor* gw = grad_target(n.b))
          gemm_tn(gy.data(), xv.data(), gw->data(), O, B, I);
        if (n.op == Op::Linear) {
          if (Tensor* gb = grad_target(n.c)) {
            for (size_t r = 0; r < B; ++r)
              for (size_t j = 0; j < O; ++j) (*gb)[j] += gy[r * O + j];
          }
        }
        break;
      }
      case Op::Scale: {
        if (Tensor* ga = grad_target(n.a))
          for (size_t i = 0; i < gy.numel(); ++i) (*ga)[i] += gy[i] * n.p0;
        break;
      }
      case Op::AffineConst: {
        if (Tensor* ga = grad_target(n.a))
          for (size_t i = 0; i < gy.numel(); ++i) (*ga)[i] += gy[i] * n.p0;
        break;
      }
      case Op::ScaleByVar: {
        const Tensor& xv = nval(n.a);
        const double sv = nval(n.b)[0];
        if (Tensor* gx = grad_target(n.a))
          for (size_t i = 0; i < gy.numel(); ++i) (*gx)[i] += gy[i] * sv;
        if (Tensor* gs = grad_target(n.b)) {
          double acc = 0.0;
          for (size_t i = 0; i < gy.numel(); ++i) acc += gy[i] * xv[i];
          (*gs)[0] += acc;
        }
        break;
      }
      case Op::Tanh: {
        if (Tensor* ga = grad_target(n.a))
          for (size_t i = 0; i < gy.numel(); ++i)
            (*ga)[i] += gy[i] * (1.0 - n.val[i] * n.val[i]);
        break;
      }
      case Op::Sigmoid: {
        if (Tensor* ga = grad_target(n.a))
          for (size_t i = 0; i < gy.numel(); ++i)
            (*ga)[i] += gy[i] * n.val[i] * (1.0 - n.val[i]);
        break;
      }
      case Op::Relu: {
        const Tensor& av = nval(n.a);
        if (Tensor* ga = grad_target(n.a))
          for (size_t i = 0; i < gy.numel(); ++i)
            if (av[i] > 0.0) (*ga)[i] += gy[i];
        break;
      }
      case Op::Softplus: {
        const Tensor& av = nval(n.a);
        if (Tensor* ga = grad_target(n.a))
          for (size_t i = 0; i < gy.numel(); ++i)
            (*ga)[i] += gy[i] * sigmoid_stable(av[i]);
        break;
      }
      case Op::Exp: {
        if (Tensor* ga = grad_target(n.a))
          for (size_t i = 0; i < gy.numel(); ++i) (*ga)[i] += gy[i] * n.val[i];
        break;
      }
      case Op::Log: {
        const Tensor& av = nval(n.a);
        if (Tensor* ga = grad_target(n.a))
          for (size_t i = 0; i < gy.numel(); ++i) (*ga)[i] += gy[i] / av[i];
        break;
      }
      case Op::Square: {
        const Tensor& av = nval(n.a);
        if (Tensor* ga = grad_target(n.a))
          for (size_t i = 0; i < gy.numel(); ++i) (*ga)[i] += gy[i] * 2.0 * av[i];
        break;
      }
      case Op::ClampMin: {
        const Tensor& av = nval(n.a);
        if (Tensor* ga = grad_target(n.a))
          for (size_t i = 0; i < gy.numel(); ++i)
            if (av[i] > n.p0) (*ga)[i] += gy[i];
        break;
      }
      case Op::ConcatCols: {
        const Tensor& av = nval(n.a);
        const Tensor& bv = nval(n.b);
        const size_t B = av.rows(), Ca = av.cols(), Cb = bv.cols();
        if (Tensor* ga = grad_target(n.a))
          for (size_t r = 0; r < B; ++r)
            for (size_t j = 0; j < Ca; ++j)
              (*ga)[r * Ca + j] += gy[r * (Ca + Cb) + j];
        if (Tensor* gb = grad_target(n.b))
          for (size_t r = 0; r < B; ++r)
            for (size_t j = 0; j < Cb; ++j)
              (*gb)[r * Cb + j] += gy[r * (Ca + Cb) + Ca + j];
        break;
      }
      case Op::SliceCols: {
        const Tensor& av = nval(n.a);
        const size_t B = av.rows(), C = av.cols(), W = n.i1 - n.i0;
        if (Tensor* ga = grad_target(n.a))
          for (size_t r = 0; r < B; ++r)
            for (size_t j = 0; j < W; ++j) (*ga)[r * C + n.i0 + j] += gy[r * W + j];
        break;
      }
      case Op::RowSum: {
        const Tensor& av = nval(n.a);
        const size_t B = av.rows(), C = av.cols();
        if (Tensor* ga = grad_target(n.a))
          for (size_t r = 0; r < B; ++r)
            for (size_t j = 0; j < C; ++j) (*ga)[r * C + j] += gy[r];
        break;
      }
      case Op::ColMean: {
        const Tensor& av = nval(n.a);
        const size_t B = av.rows(), C = av.cols();
        const double inv = 1.0 / static_cast<double>(B);
        if (Tensor* ga = grad_target(n.a))
          for (size_t r = 0; r < B; ++r)
            for (size_t j = 0; j < C; ++j) (*ga)[r * C + j] += gy[j] * inv;
        break;
      }
      case Op::SumAll: {
        if (Tensor* ga = grad_target(n.a))
          for (size_t i = 0; i < ga->numel(); ++i) (*ga)[i] += gy[0];
        break;
      }
      case Op::MeanAll: {
        if (Tensor* ga = grad_target(n.a)) {
          const double inv = 1.0 / static_cast<double>(ga->numel());
          for (size_t i = 0; i < ga->numel(); ++i) (*ga)[i] += gy[0] * inv;
        }
        break;
      }
      case Op::AvgPool: {
        const size_t side = n.i0, block = n.i1, s = side / block;
        const size_t B = nval(n.a).rows();
        const double inv = 1.0 / static_cast<double>(block * block);
        if (Tensor* ga = grad_target(n.a)) {
          for (size_t r = 0; r < B; ++r) {
            const double* g = gy.data() + r * s * s;
            double* out = ga->data() + r * side * side;
            for (size_t y = 0; y < side; ++y)
              for (size_t x = 0; x < side; ++x)
                out[y * side + x] += g[(y / block) * s + x / block] * inv;
          }
        }
        break;
      }
      case Op::Upsample: {
        const size_t small = n.i0, block = n.i1, S = small * block;
        const size_t B = nval(n.a).rows();
        if (Tensor* ga = grad_target(n.a)) {
          for (size_t r = 0; r < B; ++r) {
            const double* g = gy.data() + r * S * S;
            double* out = ga->data() + r * small * small;
            for (size_t y = 0; y < S; ++y)
              for (size_t x = 0; x < S; ++x)
                out[(y / block) * small + x / block] += g[y * S + x];
          }
        }
        break;
      }
      case Op::BceLogits: {
        const Tensor& av = nval(n.a);
        if (Tensor* ga = grad_target(n.a))
          for (size_t i = 0; i < gy.numel(); ++i)
            (*ga)[i] += gy[i] * (sigmoid_stable(av[i]) - n.aux[i]);
        break;
      }
      case Op::Mse: {
        const Tensor& av = nval(n.a);
        if (Tensor* ga = grad_target(n.a))
          for (size_t i = 0; i < gy.numel(); ++i)
            (*ga)[i] += gy[i] * 2.0 * (av[i] - n.aux[i]);
        break;
      }
      case Op::KlDiag: {
        const Tensor& m1 = nval(n.a);
        const Tensor& v1 = nval(n.b);
        const Tensor& m2 = nval(n.c);
        const Tensor& v2 = nval(n.d);
        Tensor* g1 = grad_target(n.a);
        Tensor* gs1 = grad_target(n.b);
        Tensor* g2 = grad_target(n.c);
        Tensor* gs2 = grad_target(n.d);
        for (size_t i = 0; i < gy.numel(); ++i) {
          const double dm = m1[i] - m2[i];
          const double iv2 = 1.0 / (v2[i] * v2[i]);
          if (g1) (*g1)[i] += gy[i] * dm * iv2;
          if (g2) (*g2)[i] -= gy[i] * dm * iv2;
          if (gs1) (*gs1)[i] += gy[i] * (-1.0 / v1[i] + v1[i] * iv2);
          if (gs2)
            (*gs2)[i] +=
                gy[i] * (1.0 / v2[i] - (v1[i] * v1[i] + dm * dm) * iv2 / v2[i]);
        }
        break;
      }
      case Op::Leaf:
      case Op::Const:
        break;
    }
  }
};

}  // namespace aesmpfp
