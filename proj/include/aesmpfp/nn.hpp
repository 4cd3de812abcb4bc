#pragma once

#include "tape.hpp"

namespace aesmpfp {

// ---------------------------------------------------------------------------
// Fast no-tape tensor ops for planning rollouts.  These operate on plain
// Tensors and never touch gradients; the taped equivalents live in Tape.
// ---------------------------------------------------------------------------
namespace fast {

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const size_t B = x.rows(), I = x.cols(), O = w.rows();
  Tensor y({B, O});
  gemm_nt(x.data(), w.data(), y.data(), B, I, O);
  for (size_t r = 0; r < B; ++r) {
    double* row = y.data() + r * O;
    for (size_t j = 0; j < O; ++j) row[j] += b[j];
  }
  return y;
}

inline Tensor matmul_nt(const Tensor& x, const Tensor& w) {
  const size_t B = x.rows(), I = x.cols(), O = w.rows();
  Tensor y({B, O});
  gemm_nt(x.data(), w.data(), y.data(), B, I, O);
  return y;
}

inline void tanh_(Tensor& t) {
  for (size_t i = 0; i < t.numel(); ++i) t[i] = std::tanh(t[i]);
}

inline void sigmoid_(Tensor& t) {
  for (size_t i = 0; i < t.numel(); ++i) {
    const double z = t[i];
    t[i] = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                    : std::exp(z) / (1.0 + std::exp(z));
  }
}

inline void relu_(Tensor& t) {
  for (size_t i = 0; i < t.numel(); ++i)
    if (t[i] < 0.0) t[i] = 0.0;
}

inline void softplus_(Tensor& t) {
  for (size_t i = 0; i < t.numel(); ++i)
    t[i] = t[i] > 0.0 ? t[i] + std::log1p(std::exp(-t[i]))
                      : std::log1p(std::exp(t[i]));
}

inline Tensor slice_cols(const Tensor& x, size_t start, size_t count) {
  const size_t B = x.rows(), C = x.cols();
  if (start + count > C) throw ShapeMismatch("fast::slice_cols");
  Tensor y({B, count});
  for (size_t r = 0; r < B; ++r)
    std::memcpy(y.data() + r * count, x.data() + r * C + start,
                count * sizeof(double));
  return y;
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  const size_t B = a.rows(), Ca = a.cols(), Cb = b.cols();
  if (b.rows() != B) throw ShapeMismatch("fast::concat_cols");
  Tensor y({B, Ca + Cb});
  for (size_t r = 0; r < B; ++r) {
    std::memcpy(y.data() + r * (Ca + Cb), a.data() + r * Ca, Ca * sizeof(double));
    std::memcpy(y.data() + r * (Ca + Cb) + Ca, b.data() + r * Cb, Cb * sizeof(double));
  }
  return y;
}

inline Tensor avg_pool(const Tensor& x, size_t side, size_t block) {
  const size_t B = x.rows(), s = side / block;
  if (x.cols() != side * side || side % block != 0)
    throw ShapeMismatch("fast::avg_pool");
  Tensor y({B, s * s});
  const double inv = 1.0 / static_cast<double>(block * block);
  for (size_t r = 0; r < B; ++r) {
    const double* in = x.data() + r * side * side;
    double* out = y.data() + r * s * s;
    for (size_t oy = 0; oy < s; ++oy)
      for (size_t ox = 0; ox < s; ++ox) {
        double acc = 0.0;
        for (size_t dy = 0; dy < block; ++dy)
          for (size_t dx = 0; dx < block; ++dx)
            acc += in[(oy * block + dy) * side + ox * block + dx];
        out[oy * s + ox] = acc * inv;
      }
  }
  return y;
}

inline Tensor upsample(const Tensor& x, size_t small_side, size_t block) {
  const size_t B = x.rows(), S = small_side * block;
  if (x.cols() != small_side * small_side) throw ShapeMismatch("fast::upsample");
  Tensor y({B, S * S});
  for (size_t r = 0; r < B; ++r) {
    const double* in = x.data() + r * small_side * small_side;
    double* out = y.data() + r * S * S;
    for (size_t yy = 0; yy < S; ++yy)
      for (size_t xx = 0; xx < S; ++xx)
        out[yy * S + xx] = in[(yy / block) * small_side + xx / block];
  }
  return y;
}

}  // namespace fast

// ---------------------------------------------------------------------------
// Parameterized layers
// ---------------------------------------------------------------------------

struct DenseLayer {
  Param w, b;

  DenseLayer() = default;
  DenseLayer(const std::string& name, size_t in, size_t out, RngStream& rng)
      : w(name + "/w", kaiming_uniform({out, in}, in, rng)),
        b(name + "/b", Tensor::zeros({out})) {}

  Var operator()(Tape& t, Var x) { return t.linear(x, t.param(w), t.param(b)); }
  Tensor forward(const Tensor& x) const { return fast::linear(x, w.value, b.value); }

  void collect(std::vector<Param*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

inline Var dense(Tape& t, Var x, DenseLayer& l) { return l(t, x); }

enum class Act { None, Tanh, Relu };

// Fixed-depth fully connected stack: hidden layers share one width and one
// activation; the output layer is linear.
struct Mlp {
  std::vector<DenseLayer> layers;
  Act hidden_act = Act::Relu;

  Mlp() = default;
  Mlp(const std::string& name, size_t in, std::vector<size_t> hidden, size_t out,
      RngStream& rng, Act act = Act::Relu)
      : hidden_act(act) {
    size_t d = in;
    for (size_t i = 0; i < hidden.size(); ++i) {
      layers.emplace_back(name + "/h" + std::to_string(i), d, hidden[i], rng);
      d = hidden[i];
    }
    layers.emplace_back(name + "/out", d, out, rng);
  }

  Var operator()(Tape& t, Var x) {
    for (size_t i = 0; i + 1 < layers.size(); ++i) {
      x = layers[i](t, x);
      x = hidden_act == Act::Tanh ? t.tanh(x) : t.relu(x);
    }
    return layers.back()(t, x);
  }

  Tensor forward(const Tensor& in) const {
    Tensor x = in;
    for (size_t i = 0; i + 1 < layers.size(); ++i) {
      x = layers[i].forward(x);
      if (hidden_act == Act::Tanh)
        fast::tanh_(x);
      else
        fast::relu_(x);
    }
    return layers.back().forward(x);
  }

  void collect(std::vector<Param*>& out) {
    for (DenseLayer& l : layers) l.collect(out);
  }
};

// GRU cell over input x (B, X) and state h (B, H):
//   z = sigm(x Wz + h Uz + bz), r = sigm(x Wr + h Ur + br)
//   c = tanh(x Wc + (r*h) Uc + bc), h' = z*h + (1-z)*c
// h' stays in (-1, 1) whenever h does (convex mix with a tanh).
struct GruCell {
  Param wz, wr, wc;  // (H, X)
  Param uz, ur, uc;  // (H, H)
  Param bz, br, bc;  // (H)

  GruCell() = default;
  GruCell(const std::string& name, size_t x_dim, size_t h_dim, RngStream& rng)
      : wz(name + "/wz", kaiming_uniform({h_dim, x_dim}, x_dim, rng)),
        wr(name + "/wr", kaiming_uniform({h_dim, x_dim}, x_dim, rng)),
        wc(name + "/wc", kaiming_uniform({h_dim, x_dim}, x_dim, rng)),
        uz(name + "/uz", kaiming_uniform({h_dim, h_dim}, h_dim, rng)),
        ur(name + "/ur", kaiming_uniform({h_dim, h_dim}, h_dim, rng)),
        uc(name + "/uc", kaiming_uniform({h_dim, h_dim}, h_dim, rng)),
        bz(name + "/bz", Tensor::zeros({h_dim})),
        br(name + "/br", Tensor::zeros({h_dim})),
        bc(name + "/bc", Tensor::zeros({h_dim})) {}

  Var operator()(Tape& t, Var x, Var h) {
    Var z = t.sigmoid(t.add(t.linear(x, t.param(wz), t.param(bz)),
                            t.matmul_nt(h, t.param(uz))));
    Var r = t.sigmoid(t.add(t.linear(x, t.param(wr), t.param(br)),
                            t.matmul_nt(h, t.param(ur))));
    Var c = t.tanh(t.add(t.linear(x, t.param(wc), t.param(bc)),
                         t.matmul_nt(t.mul(r, h), t.param(uc))));
    return t.add(t.mul(z, h), t.mul(t.affine_const(z, -1.0, 1.0), c));
  }

  Tensor forward(const Tensor& x, const Tensor& h) const {
    Tensor z = fast::linear(x, wz.value, bz.value);
    {
      Tensor rec = fast::matmul_nt(h, uz.value);
      for (size_t i = 0; i < z.numel(); ++i) z[i] += rec[i];
    }
    fast::sigmoid_(z);
    Tensor r = fast::linear(x, wr.value, br.value);
    {
      Tensor rec = fast::matmul_nt(h, ur.value);
      for (size_t i = 0; i < r.numel(); ++i) r[i] += rec[i];
    }
    fast::sigmoid_(r);
    for (size_t i = 0; i < r.numel(); ++i) r[i] *= h[i];
    Tensor c = fast::linear(x, wc.value, bc.value);
    {
      Tensor rec = fast::matmul_nt(r, uc.value);
      for (size_t i = 0; i < c.numel(); ++i) c[i] += rec[i];
    }
    fast::tanh_(c);
    Tensor out = Tensor::zeros(h.dims());
    for (size_t i = 0; i < out.numel(); ++i)
      out[i] = z[i] * h[i] + (1.0 - z[i]) * c[i];
    return out;
  }

  void collect(std::vector<Param*>& out) {
    for (Param* p : {&wz, &wr, &wc, &uz, &ur, &uc, &bz, &br, &bc}) out.push_back(p);
  }
};

inline Var gru_cell(Tape& t, Var h_prev, Var x, GruCell& cell) {
  return cell(t, x, h_prev);
}

// Reparameterized Gaussian sample z = mu + sigma * noise with external noise.
inline Var gaussian_sample(Tape& t, Var mu, Var sigma, Tensor noise) {
  return t.add(mu, t.mul(sigma, t.constant(std::move(noise))));
}

inline Tensor make_normal(std::vector<size_t> dims, RngStream& rng) {
  Tensor t(std::move(dims));
  for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal();
  return t;
}

}  // namespace aesmpfp
