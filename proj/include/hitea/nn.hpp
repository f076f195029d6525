#pragma once

#include "hitea/tape.hpp"

#include <map>
#include <string>

// Parameter registry and transformer building blocks shared by the encoders,
// the fusion module and the decoder. Parameters live in a flat named store;
// a training step binds them onto a tape as differentiable leaves and reads
// the gradients back after backward().

namespace hitea::nn {

using ad::Tape;
using ad::Var;

struct Param {
  std::string name;
  Mat value;
  bool no_decay = false;
  Mat adam_m, adam_v;  // optimizer state, lazily sized
};

class ParamStore {
 public:
  int add(const std::string& name, int rows, int cols, bool no_decay = false) {
    if (index_.count(name)) throw contract_error("ParamStore: duplicate '" + name + "'");
    index_[name] = static_cast<int>(items_.size());
    items_.push_back(Param{name, Mat::Zero(rows, cols), no_decay, Mat(), Mat()});
    return static_cast<int>(items_.size()) - 1;
  }
  Param& at(int id) { return items_[static_cast<size_t>(id)]; }
  const Param& at(int id) const { return items_[static_cast<size_t>(id)]; }
  Param& by_name(const std::string& n) {
    auto it = index_.find(n);
    if (it == index_.end()) throw contract_error("ParamStore: unknown '" + n + "'");
    return items_[static_cast<size_t>(it->second)];
  }
  bool has(const std::string& n) const { return index_.count(n) > 0; }
  int size() const { return static_cast<int>(items_.size()); }
  std::vector<Param>& items() { return items_; }
  const std::vector<Param>& items() const { return items_; }

  int64_t scalar_count() const {
    int64_t n = 0;
    for (const auto& p : items_) n += p.value.size();
    return n;
  }

 private:
  std::vector<Param> items_;
  std::map<std::string, int> index_;
};

// Tape-bound view of the store for one forward/backward pass.
struct Bound {
  Tape* tape = nullptr;
  ParamStore* store = nullptr;
  std::vector<Var> vars;
  bool with_grad = true;

  Var operator[](int id) const { return vars[static_cast<size_t>(id)]; }

  // Accumulates tape gradients into `grads`, indexed like the store.
  void collect_grads(std::vector<Mat>& grads) const {
    for (size_t i = 0; i < vars.size(); ++i) {
      Mat g = tape->grad(vars[i]);
      if (grads[i].size() == 0)
        grads[i] = std::move(g);
      else
        grads[i] += g;
    }
  }
};

inline Bound bind(Tape& t, ParamStore& store, bool with_grad = true) {
  Bound b;
  b.tape = &t;
  b.store = &store;
  b.with_grad = with_grad;
  b.vars.reserve(static_cast<size_t>(store.size()));
  for (auto& p : store.items())
    b.vars.push_back(with_grad ? ad::input(t, p.value) : ad::constant(t, p.value));
  return b;
}

// ---- graph helpers ----

struct LinearP {
  int w = -1, b = -1;
};
struct LayerNormP {
  int g = -1, b = -1;
};

inline Var linear(const Bound& bp, Var x, const LinearP& p) {
  return ad::add_rowvec(ad::matmul(x, bp[p.w]), bp[p.b]);
}

inline Var layernorm(const Bound& bp, Var x, const LayerNormP& p) {
  return ad::layernorm_rows(x, bp[p.g], bp[p.b]);
}

// y.row(r) = x.row(r) + table.row(map[r]); map entry -1 skips the row.
inline Var add_positional(Var x, Var table, std::vector<int> map) {
  Tape& t = *x.tape;
  Mat y = t.val(x);
  const Mat& tv = t.val(table);
  for (size_t r = 0; r < map.size(); ++r)
    if (map[r] >= 0) y.row(static_cast<Eigen::Index>(r)) += tv.row(map[r]);
  if (!ad::detail::any_grad({x, table})) return ad::constant(t, std::move(y));
  return t.emit(std::move(y), true, [x, table, map = std::move(map)](Tape& tt, const Mat& g) {
    tt.accumulate(x, g);
    if (tt.needs_grad(table)) {
      Mat gt = Mat::Zero(tt.val(table).rows(), tt.val(table).cols());
      for (size_t r = 0; r < map.size(); ++r)
        if (map[r] >= 0) gt.row(map[r]) += g.row(static_cast<Eigen::Index>(r));
      tt.accumulate(table, gt);
    }
  });
}

// Stacks `times` copies of x rows; gradient sums the copies.
inline Var tile_rows(Var x, int times) {
  Tape& t = *x.tape;
  Eigen::Index R = t.val(x).rows();
  Mat y(R * times, t.val(x).cols());
  for (int k = 0; k < times; ++k) y.middleRows(static_cast<Eigen::Index>(k) * R, R) = t.val(x);
  if (!t.needs_grad(x)) return ad::constant(t, std::move(y));
  return t.emit(std::move(y), true, [x, times, R](Tape& tt, const Mat& g) {
    Mat gx = Mat::Zero(R, g.cols());
    for (int k = 0; k < times; ++k) gx += g.middleRows(static_cast<Eigen::Index>(k) * R, R);
    tt.accumulate(x, gx);
  });
}

// Splits (B*T) x (C*H*W) frame rows into p x p patches:
// output ((B*T*P) x (p*p*C)) with P = (H/p)*(W/p), patches in row-major order.
inline Var patchify(Var frames, int C, int H, int W, int p) {
  Tape& t = *frames.tape;
  if (H % p != 0 || W % p != 0) throw contract_error("patchify: patch_size must divide H and W");
  const int ph = H / p, pw = W / p, P = ph * pw;
  const int cols = p * p * C;
  std::vector<int> colmap(static_cast<size_t>(P) * cols);
  for (int pi = 0; pi < P; ++pi) {
    int py0 = (pi / pw) * p, px0 = (pi % pw) * p;
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x)
          colmap[static_cast<size_t>(pi) * cols + static_cast<size_t>(c * p * p + y * p + x)] =
              c * H * W + (py0 + y) * W + (px0 + x);
  }
  const Mat& fv = t.val(frames);
  Eigen::Index BT = fv.rows();
  Mat y(BT * P, cols);
  for (Eigen::Index r = 0; r < BT; ++r)
    for (int pi = 0; pi < P; ++pi)
      for (int c = 0; c < cols; ++c)
        y(r * P + pi, c) = fv(r, colmap[static_cast<size_t>(pi) * cols + static_cast<size_t>(c)]);
  if (!t.needs_grad(frames)) return ad::constant(t, std::move(y));
  return t.emit(std::move(y), true, [frames, colmap = std::move(colmap), P, cols](Tape& tt, const Mat& g) {
    const Mat& fv = tt.val(frames);
    Mat gf = Mat::Zero(fv.rows(), fv.cols());
    for (Eigen::Index r = 0; r < fv.rows(); ++r)
      for (int pi = 0; pi < P; ++pi)
        for (int c = 0; c < cols; ++c)
          gf(r, colmap[static_cast<size_t>(pi) * cols + static_cast<size_t>(c)]) += g(r * P + pi, c);
    tt.accumulate(frames, gf);
  });
}

// Pre-LN transformer encoder block.
struct BlockP {
  LayerNormP ln1;
  LinearP qkv;   // D -> 3D
  LinearP out;   // D -> D
  LayerNormP ln2;
  LinearP ffn1;  // D -> F
  LinearP ffn2;  // F -> D
};

inline Var encoder_block(const Bound& bp, Var x, int B, int L, const Mat* bias, int heads,
                         const BlockP& blk) {
  int D = static_cast<int>(x.tape->val(x).cols());
  Var h = layernorm(bp, x, blk.ln1);
  Var qkv = linear(bp, h, blk.qkv);
  Var q = ad::slice_cols(qkv, 0, D);
  Var k = ad::slice_cols(qkv, D, D);
  Var v = ad::slice_cols(qkv, 2 * D, D);
  Var att = ad::attention(q, k, v, bias, B, L, L, heads);
  x = ad::add(x, linear(bp, att, blk.out));
  Var h2 = layernorm(bp, x, blk.ln2);
  Var f = linear(bp, ad::gelu(linear(bp, h2, blk.ffn1)), blk.ffn2);
  return ad::add(x, f);
}

// Decoder block: causal self-attention, cross-attention to memory, FFN.
struct DecBlockP {
  LayerNormP ln1;
  LinearP qkv;
  LinearP out;
  LayerNormP lnx;
  LinearP xq, xk, xv, xo;
  LayerNormP ln2;
  LinearP ffn1, ffn2;
};

inline Var decoder_block(const Bound& bp, Var x, int B, int L, const Mat* causal_bias, Var memory,
                         int Lm, const Mat* mem_bias, int heads, const DecBlockP& blk) {
  int D = static_cast<int>(x.tape->val(x).cols());
  Var h = layernorm(bp, x, blk.ln1);
  Var qkv = linear(bp, h, blk.qkv);
  Var q = ad::slice_cols(qkv, 0, D);
  Var k = ad::slice_cols(qkv, D, D);
  Var v = ad::slice_cols(qkv, 2 * D, D);
  x = ad::add(x, linear(bp, ad::attention(q, k, v, causal_bias, B, L, L, heads), blk.out));

  Var hx = layernorm(bp, x, blk.lnx);
  Var cq = linear(bp, hx, blk.xq);
  Var ck = linear(bp, memory, blk.xk);
  Var cv = linear(bp, memory, blk.xv);
  x = ad::add(x, linear(bp, ad::attention(cq, ck, cv, mem_bias, B, L, Lm, heads), blk.xo));

  Var h2 = layernorm(bp, x, blk.ln2);
  Var f = linear(bp, ad::gelu(linear(bp, h2, blk.ffn1)), blk.ffn2);
  return ad::add(x, f);
}

// ---- attention bias builders (constants) ----

inline Mat no_bias() { return Mat(); }

// Masks key positions >= valid[s] within each sample block of a (B*Lq) x Lk
// bias. Used for padded text.
inline Mat pad_key_bias(int B, int Lq, int Lk, const std::vector<int>& valid) {
  const double ninf = -std::numeric_limits<double>::infinity();
  Mat bias = Mat::Zero(static_cast<Eigen::Index>(B) * Lq, Lk);
  for (int s = 0; s < B; ++s)
    for (int k = valid[static_cast<size_t>(s)]; k < Lk; ++k)
      bias.block(static_cast<Eigen::Index>(s) * Lq, k, Lq, 1).setConstant(ninf);
  return bias;
}

inline Mat causal_bias(int B, int L) {
  const double ninf = -std::numeric_limits<double>::infinity();
  Mat bias = Mat::Zero(static_cast<Eigen::Index>(B) * L, L);
  for (int s = 0; s < B; ++s)
    for (int r = 0; r < L; ++r)
      for (int k = r + 1; k < L; ++k) bias(static_cast<Eigen::Index>(s) * L + r, k) = ninf;
  return bias;
}

// Fusion-sequence bias: video keys [0, Lv) always visible, text key j visible
// iff j - Lv < text_valid[s].
inline Mat fused_key_bias(int B, int L, int Lv, const std::vector<int>& text_valid) {
  const double ninf = -std::numeric_limits<double>::infinity();
  Mat bias = Mat::Zero(static_cast<Eigen::Index>(B) * L, L);
  for (int s = 0; s < B; ++s)
    for (int k = Lv + text_valid[static_cast<size_t>(s)]; k < L; ++k)
      bias.block(static_cast<Eigen::Index>(s) * L, k, L, 1).setConstant(ninf);
  return bias;
}

}  // namespace hitea::nn
