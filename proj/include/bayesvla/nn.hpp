#pragma once

#include <string>
#include <utility>
#include <vector>

#include "bayesvla/tensor.hpp"

namespace bayesvla::nn {

template <class T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

template <class T>
using ParamList = std::vector<NamedParam<T>>;

template <class T>
void push_param(ParamList<T>& out, const std::string& name, const Tensor<T>& t) {
  out.push_back({name, t});
}

template <class T>
struct Linear {
  Tensor<T> w;  // [in x out]
  Tensor<T> b;  // [1 x out]

  Linear() = default;
  Linear(int in, int out, Rng& rng, bool zero_init = false) {
    const T std = zero_init ? T(0) : static_cast<T>(1.0 / std::sqrt(static_cast<double>(in)));
    w = Tensor<T>::randn(in, out, rng, std, true);
    b = Tensor<T>::zeros(1, out, true);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return add_rowvec(matmul(x, w), b);
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    push_param(out, prefix + ".w", w);
    push_param(out, prefix + ".b", b);
  }
};

template <class T>
struct LayerNorm {
  Tensor<T> gain;
  Tensor<T> bias;

  LayerNorm() = default;
  explicit LayerNorm(int d) {
    gain = Tensor<T>::full(1, d, T(1), true);
    bias = Tensor<T>::zeros(1, d, true);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return add_rowvec(mul_rowvec(layer_norm_rows(x), gain), bias);
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    push_param(out, prefix + ".gain", gain);
    push_param(out, prefix + ".bias", bias);
  }
};

template <class T>
struct Mlp {
  Linear<T> fc1, fc2;

  Mlp() = default;
  Mlp(int d, int hidden, Rng& rng, bool zero_out = false)
      : fc1(d, hidden, rng), fc2(hidden, d, rng, zero_out) {}

  Tensor<T> forward(const Tensor<T>& x) const {
    return fc2.forward(gelu(fc1.forward(x)));
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
  }
};

// Feature-wise affine modulation. The projection is zero-initialized so a
// fresh layer is the identity (effective gamma 1, beta 0).
template <class T>
struct FiLM {
  Linear<T> proj;  // cond -> [gamma_hat ; beta]
  int d = 0;

  FiLM() = default;
  FiLM(int d_model, int cond_dim, Rng& rng) : proj(cond_dim, 2 * d_model, rng, true), d(d_model) {}

  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& cond) const {
    if (cond.rows() != 1 || cond.cols() != proj.w.rows())
      throw ShapeError("film: conditioning length mismatch");
    Tensor<T> gb = proj.forward(cond);
    Tensor<T> gamma = add_rowvec(slice_cols(gb, 0, d), Tensor<T>::full(1, d, T(1)));
    Tensor<T> beta = slice_cols(gb, d, 2 * d);
    return add_rowvec(mul_rowvec(x, gamma), beta);
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    proj.collect(out, prefix + ".proj");
  }
};

template <class T>
Tensor<T> film(const Tensor<T>& x, const Tensor<T>& cond, const FiLM<T>& layer) {
  return layer.forward(x, cond);
}

// positional spec for rotary attention
struct Positions {
  enum class Kind { None, OneD, TwoD };
  Kind kind = Kind::None;
  std::vector<double> p1;
  std::vector<std::pair<double, double>> p2;

  static Positions none() { return {}; }
  static Positions oned(std::vector<double> p) {
    Positions q;
    q.kind = Kind::OneD;
    q.p1 = std::move(p);
    return q;
  }
  static Positions twod(std::vector<std::pair<double, double>> p) {
    Positions q;
    q.kind = Kind::TwoD;
    q.p2 = std::move(p);
    return q;
  }
};

template <class T>
Tensor<T> apply_positions(const Tensor<T>& x, const Positions& pos) {
  switch (pos.kind) {
    case Positions::Kind::None:
      return x;
    case Positions::Kind::OneD:
      return rope_rows(x, pos.p1);
    case Positions::Kind::TwoD:
      return rope_rows_2d(x, pos.p2);
  }
  return x;
}

// Pre-LN self-attention + MLP block with optional rotary positions.
template <class T>
struct EncoderBlock {
  LayerNorm<T> ln1, ln2;
  Linear<T> wq, wk, wv, wo;
  Mlp<T> mlp;

  EncoderBlock() = default;
  EncoderBlock(int d, int hidden, Rng& rng)
      : ln1(d), ln2(d), wq(d, d, rng), wk(d, d, rng), wv(d, d, rng), wo(d, d, rng),
        mlp(d, hidden, rng) {}

  Tensor<T> forward(const Tensor<T>& x, const Positions& pos, bool scale) const {
    Tensor<T> h = ln1.forward(x);
    Tensor<T> q = apply_positions(wq.forward(h), pos);
    Tensor<T> k = apply_positions(wk.forward(h), pos);
    Tensor<T> a = attention(q, k, wv.forward(h), scale);
    Tensor<T> y = add(x, wo.forward(a));
    return add(y, mlp.forward(ln2.forward(y)));
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    ln1.collect(out, prefix + ".ln1");
    ln2.collect(out, prefix + ".ln2");
    wq.collect(out, prefix + ".wq");
    wk.collect(out, prefix + ".wk");
    wv.collect(out, prefix + ".wv");
    wo.collect(out, prefix + ".wo");
    mlp.collect(out, prefix + ".mlp");
  }
};

// Local block: the value+output path of an attention block with each token
// attending only to itself (no cross-token mixing), plus the MLP sublayer.
// Keeps per-token semantics intact for patch-level similarity readouts.
template <class T>
struct LocalBlock {
  LayerNorm<T> ln1, ln2;
  Linear<T> wv, wo;
  Mlp<T> mlp;

  LocalBlock() = default;
  LocalBlock(int d, int hidden, Rng& rng)
      : ln1(d), ln2(d), wv(d, d, rng), wo(d, d, rng), mlp(d, hidden, rng) {}

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> y = add(x, wo.forward(wv.forward(ln1.forward(x))));
    return add(y, mlp.forward(ln2.forward(y)));
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    ln1.collect(out, prefix + ".ln1");
    ln2.collect(out, prefix + ".ln2");
    wv.collect(out, prefix + ".wv");
    wo.collect(out, prefix + ".wo");
    mlp.collect(out, prefix + ".mlp");
  }
};

// Cross-attention block: queries from the token stream, keys/values from a
// two-part memory (rotary-positioned rows + unpositioned rows).
template <class T>
struct CrossBlock {
  LayerNorm<T> ln1, ln2;
  Linear<T> wq, wk, wv, wo;
  Mlp<T> mlp;

  CrossBlock() = default;
  CrossBlock(int d, int hidden, Rng& rng)
      : ln1(d), ln2(d), wq(d, d, rng), wk(d, d, rng), wv(d, d, rng), wo(d, d, rng),
        mlp(d, hidden, rng) {}

  Tensor<T> forward(const Tensor<T>& x, const Positions& qpos,
                    const Tensor<T>& mem_pos_tokens, const Positions& mem_pos,
                    const Tensor<T>& mem_plain_tokens, bool scale) const {
    Tensor<T> h = ln1.forward(x);
    Tensor<T> q = apply_positions(wq.forward(h), qpos);
    Tensor<T> k = apply_positions(wk.forward(mem_pos_tokens), mem_pos);
    Tensor<T> v = wv.forward(mem_pos_tokens);
    if (mem_plain_tokens.valid() && mem_plain_tokens.rows() > 0) {
      k = concat_rows(k, wk.forward(mem_plain_tokens));
      v = concat_rows(v, wv.forward(mem_plain_tokens));
    }
    Tensor<T> a = attention(q, k, v, scale);
    Tensor<T> y = add(x, wo.forward(a));
    return add(y, mlp.forward(ln2.forward(y)));
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    ln1.collect(out, prefix + ".ln1");
    ln2.collect(out, prefix + ".ln2");
    wq.collect(out, prefix + ".wq");
    wk.collect(out, prefix + ".wk");
    wv.collect(out, prefix + ".wv");
    wo.collect(out, prefix + ".wo");
    mlp.collect(out, prefix + ".mlp");
  }
};

// Diffusion policy block: FiLM-conditioned self-attention, cross-attention
// over a memory stream, and MLP. `zero_out` zero-initializes the residual
// output projections of all three sublayers so the block starts as identity.
template <class T>
struct PolicyBlock {
  LayerNorm<T> ln1, ln2, ln3;
  FiLM<T> film_self, film_cross, film_mlp;
  Linear<T> sq, sk, sv, so;
  Linear<T> cq, ck, cv, co;
  Mlp<T> mlp;

  PolicyBlock() = default;
  PolicyBlock(int d, int hidden, int cond_dim, Rng& rng, bool zero_out = false)
      : ln1(d), ln2(d), ln3(d),
        film_self(d, cond_dim, rng), film_cross(d, cond_dim, rng), film_mlp(d, cond_dim, rng),
        sq(d, d, rng), sk(d, d, rng), sv(d, d, rng), so(d, d, rng, zero_out),
        cq(d, d, rng), ck(d, d, rng), cv(d, d, rng), co(d, d, rng, zero_out),
        mlp(d, hidden, rng, zero_out) {}

  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& memory,
                    const Tensor<T>& cond, bool scale) const {
    Tensor<T> h = film_self.forward(ln1.forward(x), cond);
    Tensor<T> y = add(x, so.forward(attention(sq.forward(h), sk.forward(h),
                                              sv.forward(h), scale)));
    Tensor<T> h2 = film_cross.forward(ln2.forward(y), cond);
    y = add(y, co.forward(attention(cq.forward(h2), ck.forward(memory),
                                    cv.forward(memory), scale)));
    Tensor<T> h3 = film_mlp.forward(ln3.forward(y), cond);
    return add(y, mlp.forward(h3));
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    ln1.collect(out, prefix + ".ln1");
    ln2.collect(out, prefix + ".ln2");
    ln3.collect(out, prefix + ".ln3");
    film_self.collect(out, prefix + ".film_self");
    film_cross.collect(out, prefix + ".film_cross");
    film_mlp.collect(out, prefix + ".film_mlp");
    sq.collect(out, prefix + ".sq");
    sk.collect(out, prefix + ".sk");
    sv.collect(out, prefix + ".sv");
    so.collect(out, prefix + ".so");
    cq.collect(out, prefix + ".cq");
    ck.collect(out, prefix + ".ck");
    cv.collect(out, prefix + ".cv");
    co.collect(out, prefix + ".co");
    mlp.collect(out, prefix + ".mlp");
  }
};

// sinusoidal timestep embedding as a constant row tensor
template <class T>
Tensor<T> timestep_embedding(int t, int dim) {
  std::vector<T> v(dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
    v[i] = static_cast<T>(std::sin(t * freq));
    v[half + i] = static_cast<T>(std::cos(t * freq));
  }
  return Tensor<T>::row(std::move(v));
}

template <class T>
std::size_t param_count(const ParamList<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.size();
  return n;
}

template <class T>
void zero_grads(ParamList<T>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

}  // namespace bayesvla::nn
