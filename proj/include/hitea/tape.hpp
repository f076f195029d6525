#pragma once

#include "hitea/common.hpp"

#include <functional>
#include <memory>
#include <utility>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace hitea::ad {

using hitea::Mat;

// Reverse-mode autodiff over dense Eigen matrices. Forward values are
// computed eagerly when a node is created; backward() replays the tape in
// reverse. Batches are packed row-wise: a tensor holding B sequences of L
// rows is a (B*L) x D matrix, so the per-op overhead stays independent of
// the batch size.
class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool ok() const { return tape != nullptr && id >= 0; }
};

struct Node {
  Mat value;
  Mat grad;  // allocated on first accumulation
  bool needs_grad = false;
  std::function<void(Tape&, const Mat&)> pull;  // push incoming grad to parents
};

class Tape {
 public:
  Var emit(Mat value, bool needs_grad, std::function<void(Tape&, const Mat&)> pull = nullptr) {
    nodes_.push_back(Node{std::move(value), Mat(), needs_grad, std::move(pull)});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  const Mat& val(Var v) const { return nodes_[v.id].value; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  // Gradient of the last backward() w.r.t. v; zeros if v was not reached.
  Mat grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void accumulate(Var v, const Mat& g) {
    Node& n = nodes_[v.id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  void backward(Var root) {
    const Node& r = nodes_[root.id];
    if (r.value.rows() != 1 || r.value.cols() != 1)
      throw contract_error("backward: root must be a scalar");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[root.id].grad = Mat::Ones(1, 1);
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0 || !n.pull) continue;
      n.pull(*this, n.grad);
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

inline Var constant(Tape& t, Mat m) { return t.emit(std::move(m), false); }

inline Var scalar(Tape& t, double x) { return t.emit(Mat::Constant(1, 1, x), false); }

// Differentiable leaf (model parameter or probe input).
inline Var input(Tape& t, Mat m) { return t.emit(std::move(m), true); }

namespace detail {
inline bool any_grad(std::initializer_list<Var> vs) {
  for (Var v : vs)
    if (v.tape->needs_grad(v)) return true;
  return false;
}
}  // namespace detail

// ---- arithmetic ----

inline Var add(Var a, Var b) {
  Tape& t = *a.tape;
  Mat y = t.val(a) + t.val(b);
  if (!detail::any_grad({a, b})) return constant(t, std::move(y));
  return t.emit(std::move(y), true, [a, b](Tape& tt, const Mat& g) {
    tt.accumulate(a, g);
    tt.accumulate(b, g);
  });
}

inline Var sub(Var a, Var b) {
  Tape& t = *a.tape;
  Mat y = t.val(a) - t.val(b);
  if (!detail::any_grad({a, b})) return constant(t, std::move(y));
  return t.emit(std::move(y), true, [a, b](Tape& tt, const Mat& g) {
    tt.accumulate(a, g);
    tt.accumulate(b, -g);
  });
}

inline Var scale(Var a, double c) {
  Tape& t = *a.tape;
  Mat y = t.val(a) * c;
  if (!t.needs_grad(a)) return constant(t, std::move(y));
  return t.emit(std::move(y), true, [a, c](Tape& tt, const Mat& g) { tt.accumulate(a, g * c); });
}

inline Var neg(Var a) { return scale(a, -1.0); }

inline Var hadamard(Var a, Var b) {
  Tape& t = *a.tape;
  Mat y = t.val(a).cwiseProduct(t.val(b));
  if (!detail::any_grad({a, b})) return constant(t, std::move(y));
  return t.emit(std::move(y), true, [a, b](Tape& tt, const Mat& g) {
    tt.accumulate(a, g.cwiseProduct(tt.val(b)));
    tt.accumulate(b, g.cwiseProduct(tt.val(a)));
  });
}

// y = A * s for a 1x1 variable s.
inline Var scale_by(Var a, Var s) {
  Tape& t = *a.tape;
  double sv = t.val(s)(0, 0);
  Mat y = t.val(a) * sv;
  if (!detail::any_grad({a, s})) return constant(t, std::move(y));
  return t.emit(std::move(y), true, [a, s, sv](Tape& tt, const Mat& g) {
    tt.accumulate(a, g * sv);
    Mat gs(1, 1);
    gs(0, 0) = g.cwiseProduct(tt.val(a)).sum();
    tt.accumulate(s, gs);
  });
}

inline Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  Mat y = t.val(a) * t.val(b);
  if (!detail::any_grad({a, b})) return constant(t, std::move(y));
  return t.emit(std::move(y), true, [a, b](Tape& tt, const Mat& g) {
    if (tt.needs_grad(a)) tt.accumulate(a, g * tt.val(b).transpose());
    if (tt.needs_grad(b)) tt.accumulate(b, tt.val(a).transpose() * g);
  });
}

// y = A * B^T (saves a transpose node in similarity matrices).
inline Var matmul_nt(Var a, Var b) {
  Tape& t = *a.tape;
  Mat y = t.val(a) * t.val(b).transpose();
  if (!detail::any_grad({a, b})) return constant(t, std::move(y));
  return t.emit(std::move(y), true, [a, b](Tape& tt, const Mat& g) {
    if (tt.needs_grad(a)) tt.accumulate(a, g * tt.val(b));
    if (tt.needs_grad(b)) tt.accumulate(b, g.transpose() * tt.val(a));
  });
}

// Adds a 1xC row vector to every row of A.
inline Var add_rowvec(Var a, Var b) {
  Tape& t = *a.tape;
  Mat y = t.val(a).rowwise() + t.val(b).row(0);
  if (!detail::any_grad({a, b})) return constant(t, std::move(y));
  return t.emit(std::move(y), true, [a, b](Tape& tt, const Mat& g) {
    tt.accumulate(a, g);
    if (tt.needs_grad(b)) tt.accumulate(b, g.colwise().sum());
  });
}

// ---- nonlinearities ----

inline Var relu(Var a) {
  Tape& t = *a.tape;
  Mat y = t.val(a).cwiseMax(0.0);
  if (!t.needs_grad(a)) return constant(t, std::move(y));
  return t.emit(std::move(y), true, [a](Tape& tt, const Mat& g) {
    Mat m = (tt.val(a).array() > 0.0).cast<double>();
    tt.accumulate(a, g.cwiseProduct(m));
  });
}

// Exact GELU: x * Phi(x). Smooth, so finite differences stay well behaved.
inline Var gelu(Var a) {
  Tape& t = *a.tape;
  Mat x = t.val(a);
  Mat phi = x.unaryExpr([](double z) { return 0.5 * (1.0 + std::erf(z / M_SQRT2)); });
  Mat y = x.cwiseProduct(phi);
  if (!t.needs_grad(a)) return constant(t, std::move(y));
  return t.emit(std::move(y), true, [a, phi](Tape& tt, const Mat& g) {
    const Mat& x = tt.val(a);
    Mat pdf = ((-0.5 * x.array().square()).exp() / std::sqrt(2.0 * M_PI)).matrix();
    Mat d = phi + x.cwiseProduct(pdf);
    tt.accumulate(a, g.cwiseProduct(d));
  });
}

inline Var exp_elem(Var a) {
  Tape& t = *a.tape;
  Mat y = t.val(a).array().exp().matrix();
  if (!t.needs_grad(a)) return constant(t, std::move(y));
  return t.emit(Mat(y), true, [a, y](Tape& tt, const Mat& g) { tt.accumulate(a, g.cwiseProduct(y)); });
}

// ---- row-structured ops ----

// Row-wise softmax of (A + bias); bias is an optional constant matrix with
// -inf marking masked entries.
inline Var softmax_rows(Var a, const Mat* bias = nullptr) {
  Tape& t = *a.tape;
  Mat z = t.val(a);
  if (bias) z += *bias;
  Mat y(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    double m = z.row(r).maxCoeff();
    Eigen::ArrayXd e = (z.row(r).array() - m).exp();
    y.row(r) = (e / e.sum()).matrix();
  }
  if (!t.needs_grad(a)) return constant(t, std::move(y));
  return t.emit(Mat(y), true, [a, y](Tape& tt, const Mat& g) {
    Mat gy = g.cwiseProduct(y);
    Eigen::VectorXd rowsum = gy.rowwise().sum();
    Mat ga = gy - y.cwiseProduct(rowsum.replicate(1, y.cols()));
    tt.accumulate(a, ga);
  });
}

// Row-wise layer norm with per-column gamma/beta (1xD each).
inline Var layernorm_rows(Var x, Var gamma, Var beta, double eps = 1e-5) {
  Tape& t = *x.tape;
  const Mat& xv = t.val(x);
  Eigen::Index R = xv.rows(), D = xv.cols();
  Mat xhat(R, D);
  Eigen::VectorXd inv_std(R);
  for (Eigen::Index r = 0; r < R; ++r) {
    double mu = xv.row(r).mean();
    Eigen::ArrayXd c = xv.row(r).array() - mu;
    double var = c.square().mean();
    double is = 1.0 / std::sqrt(var + eps);
    inv_std(r) = is;
    xhat.row(r) = (c * is).matrix();
  }
  Mat y = (xhat.array().rowwise() * t.val(gamma).row(0).array()).matrix();
  y.rowwise() += t.val(beta).row(0);
  if (!detail::any_grad({x, gamma, beta})) return constant(t, std::move(y));
  return t.emit(std::move(y), true, [x, gamma, beta, xhat, inv_std](Tape& tt, const Mat& g) {
    Eigen::Index R = g.rows(), D = g.cols();
    if (tt.needs_grad(gamma)) tt.accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
    if (tt.needs_grad(beta)) tt.accumulate(beta, g.colwise().sum());
    if (tt.needs_grad(x)) {
      Mat gx(R, D);
      Eigen::RowVectorXd gam = tt.val(gamma).row(0);
      for (Eigen::Index r = 0; r < R; ++r) {
        Eigen::ArrayXd gh = (g.row(r).array() * gam.array()).transpose();
        double m1 = gh.mean();
        double m2 = (gh * xhat.row(r).array().transpose()).mean();
        gx.row(r) =
            (inv_std(r) * (gh - m1 - xhat.row(r).array().transpose() * m2)).matrix().transpose();
      }
      tt.accumulate(x, gx);
    }
  });
}

// Row-wise L2 normalization.
inline Var l2_normalize_rows(Var x) {
  Tape& t = *x.tape;
  const Mat& xv = t.val(x);
  Eigen::Index R = xv.rows();
  Mat y(R, xv.cols());
  Eigen::VectorXd norms(R);
  for (Eigen::Index r = 0; r < R; ++r) {
    double n = xv.row(r).norm();
    if (n < 1e-12) throw contract_error("l2_normalize_rows: zero-norm row " + std::to_string(r));
    norms(r) = n;
    y.row(r) = xv.row(r) / n;
  }
  if (!t.needs_grad(x)) return constant(t, std::move(y));
  return t.emit(Mat(y), true, [x, y, norms](Tape& tt, const Mat& g) {
    Mat gx(g.rows(), g.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      double d = y.row(r).dot(g.row(r));
      gx.row(r) = (g.row(r) - d * y.row(r)) / norms(r);
    }
    tt.accumulate(x, gx);
  });
}

inline Var slice_rows(Var a, int start, int count) {
  Tape& t = *a.tape;
  Mat y = t.val(a).middleRows(start, count);
  if (!t.needs_grad(a)) return constant(t, std::move(y));
  return t.emit(std::move(y), true, [a, start, count](Tape& tt, const Mat& g) {
    Mat ga = Mat::Zero(tt.val(a).rows(), tt.val(a).cols());
    ga.middleRows(start, count) = g;
    tt.accumulate(a, ga);
  });
}

inline Var slice_cols(Var a, int start, int count) {
  Tape& t = *a.tape;
  Mat y = t.val(a).middleCols(start, count);
  if (!t.needs_grad(a)) return constant(t, std::move(y));
  return t.emit(std::move(y), true, [a, start, count](Tape& tt, const Mat& g) {
    Mat ga = Mat::Zero(tt.val(a).rows(), tt.val(a).cols());
    ga.middleCols(start, count) = g;
    tt.accumulate(a, ga);
  });
}

// Gathers rows by index; index -1 yields a zero row (used for padding).
inline Var gather_rows(Var a, std::vector<int> idx) {
  Tape& t = *a.tape;
  Mat y(static_cast<Eigen::Index>(idx.size()), t.val(a).cols());
  for (size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0)
      y.row(static_cast<Eigen::Index>(r)).setZero();
    else
      y.row(static_cast<Eigen::Index>(r)) = t.val(a).row(idx[r]);
  }
  if (!t.needs_grad(a)) return constant(t, std::move(y));
  return t.emit(std::move(y), true, [a, idx = std::move(idx)](Tape& tt, const Mat& g) {
    Mat ga = Mat::Zero(tt.val(a).rows(), tt.val(a).cols());
    for (size_t r = 0; r < idx.size(); ++r)
      if (idx[r] >= 0) ga.row(idx[r]) += g.row(static_cast<Eigen::Index>(r));
    tt.accumulate(a, ga);
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw contract_error("concat_rows: empty input");
  Tape& t = *parts[0].tape;
  Eigen::Index rows = 0;
  Eigen::Index cols = t.val(parts[0]).cols();
  for (Var p : parts) rows += t.val(p).rows();
  Mat y(rows, cols);
  Eigen::Index at = 0;
  bool any = false;
  for (Var p : parts) {
    y.middleRows(at, t.val(p).rows()) = t.val(p);
    at += t.val(p).rows();
    any = any || t.needs_grad(p);
  }
  if (!any) return constant(t, std::move(y));
  return t.emit(std::move(y), true, [parts](Tape& tt, const Mat& g) {
    Eigen::Index at = 0;
    for (Var p : parts) {
      Eigen::Index n = tt.val(p).rows();
      if (tt.needs_grad(p)) tt.accumulate(p, g.middleRows(at, n));
      at += n;
    }
  });
}

inline Var concat_cols(Var a, Var b) {
  Tape& t = *a.tape;
  const Mat& av = t.val(a);
  const Mat& bv = t.val(b);
  if (av.rows() != bv.rows()) throw contract_error("concat_cols: row count mismatch");
  Mat y(av.rows(), av.cols() + bv.cols());
  y.leftCols(av.cols()) = av;
  y.rightCols(bv.cols()) = bv;
  if (!detail::any_grad({a, b})) return constant(t, std::move(y));
  return t.emit(std::move(y), true, [a, b](Tape& tt, const Mat& g) {
    if (tt.needs_grad(a)) tt.accumulate(a, g.leftCols(tt.val(a).cols()));
    if (tt.needs_grad(b)) tt.accumulate(b, g.rightCols(tt.val(b).cols()));
  });
}

// Per-sample row concatenation of two packed batches: a holds B blocks of La
// rows, b holds B blocks of Lb rows; output holds B blocks of La+Lb rows.
inline Var interleave_rows(Var a, Var b, int B, int La, int Lb) {
  Tape& t = *a.tape;
  Mat y(static_cast<Eigen::Index>(B) * (La + Lb), t.val(a).cols());
  for (int s = 0; s < B; ++s) {
    y.middleRows(static_cast<Eigen::Index>(s) * (La + Lb), La) = t.val(a).middleRows(static_cast<Eigen::Index>(s) * La, La);
    y.middleRows(static_cast<Eigen::Index>(s) * (La + Lb) + La, Lb) =
        t.val(b).middleRows(static_cast<Eigen::Index>(s) * Lb, Lb);
  }
  if (!detail::any_grad({a, b})) return constant(t, std::move(y));
  return t.emit(std::move(y), true, [a, b, B, La, Lb](Tape& tt, const Mat& g) {
    if (tt.needs_grad(a)) {
      Mat ga(static_cast<Eigen::Index>(B) * La, g.cols());
      for (int s = 0; s < B; ++s)
        ga.middleRows(static_cast<Eigen::Index>(s) * La, La) = g.middleRows(static_cast<Eigen::Index>(s) * (La + Lb), La);
      tt.accumulate(a, ga);
    }
    if (tt.needs_grad(b)) {
      Mat gb(static_cast<Eigen::Index>(B) * Lb, g.cols());
      for (int s = 0; s < B; ++s)
        gb.middleRows(static_cast<Eigen::Index>(s) * Lb, Lb) =
            g.middleRows(static_cast<Eigen::Index>(s) * (La + Lb) + La, Lb);
      tt.accumulate(b, gb);
    }
  });
}

// ---- reductions ----

inline Var sum_all(Var a) {
  Tape& t = *a.tape;
  Mat y(1, 1);
  y(0, 0) = t.val(a).sum();
  if (!t.needs_grad(a)) return constant(t, std::move(y));
  return t.emit(std::move(y), true, [a](Tape& tt, const Mat& g) {
    tt.accumulate(a, Mat::Constant(tt.val(a).rows(), tt.val(a).cols(), g(0, 0)));
  });
}

inline Var mean_all(Var a) {
  Tape& t = *a.tape;
  double n = static_cast<double>(t.val(a).size());
  return scale(sum_all(a), 1.0 / n);
}

// Row-wise dot products of two equally shaped matrices -> (R x 1).
inline Var dot_rows(Var a, Var b) {
  Tape& t = *a.tape;
  Mat y = t.val(a).cwiseProduct(t.val(b)).rowwise().sum();
  if (!detail::any_grad({a, b})) return constant(t, std::move(y));
  return t.emit(std::move(y), true, [a, b](Tape& tt, const Mat& g) {
    if (tt.needs_grad(a)) tt.accumulate(a, tt.val(b).cwiseProduct(g.col(0).replicate(1, tt.val(b).cols())));
    if (tt.needs_grad(b)) tt.accumulate(b, tt.val(a).cwiseProduct(g.col(0).replicate(1, tt.val(a).cols())));
  });
}

// Per-row cross entropy -log softmax(logits_r)[target_r] -> (R x 1).
// Rows with target -1 contribute 0 (padding).
inline Var cross_entropy_rows(Var logits, std::vector<int> targets) {
  Tape& t = *logits.tape;
  const Mat& z = t.val(logits);
  if (static_cast<Eigen::Index>(targets.size()) != z.rows())
    throw contract_error("cross_entropy_rows: target count mismatch");
  Mat p(z.rows(), z.cols());
  Mat y(z.rows(), 1);
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    double m = z.row(r).maxCoeff();
    Eigen::ArrayXd e = (z.row(r).array() - m).exp();
    double s = e.sum();
    p.row(r) = (e / s).matrix();
    if (targets[r] < 0) {
      y(r, 0) = 0.0;
    } else {
      y(r, 0) = -(z(r, targets[r]) - m - std::log(s));
    }
  }
  if (!t.needs_grad(logits)) return constant(t, std::move(y));
  return t.emit(std::move(y), true, [logits, p, targets = std::move(targets)](Tape& tt, const Mat& g) {
    Mat gz = Mat::Zero(p.rows(), p.cols());
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      if (targets[r] < 0) continue;
      gz.row(r) = g(r, 0) * p.row(r);
      gz(r, targets[r]) -= g(r, 0);
    }
    tt.accumulate(logits, gz);
  });
}

inline Var stopgrad(Var a) {
  Tape& t = *a.tape;
  return t.emit(Mat(t.val(a)), false);
}

// Multi-head scaled dot-product attention over a packed batch.
// q: (B*Lq) x D, k/v: (B*Lk) x D, bias: optional (B*Lq) x Lk constant with
// -inf for masked keys. Heads split D into contiguous blocks.
inline Var attention(Var q, Var k, Var v, const Mat* bias, int B, int Lq, int Lk, int heads) {
  Tape& t = *q.tape;
  const Mat& qv = t.val(q);
  const Mat& kv = t.val(k);
  const Mat& vv = t.val(v);
  int D = static_cast<int>(qv.cols());
  if (D % heads != 0) throw contract_error("attention: head count must divide width");
  int dh = D / heads;
  double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  // Attention probabilities kept for backward: heads stacked per sample.
  auto probs = std::make_shared<std::vector<Mat>>(static_cast<size_t>(B) * heads);
  Mat y(qv.rows(), D);
  bool track = detail::any_grad({q, k, v});
#pragma omp parallel for collapse(2) schedule(static) num_threads(hitea::thread_count())
  for (int s = 0; s < B; ++s) {
    for (int h = 0; h < heads; ++h) {
      auto Qb = qv.block(static_cast<Eigen::Index>(s) * Lq, static_cast<Eigen::Index>(h) * dh, Lq, dh);
      auto Kb = kv.block(static_cast<Eigen::Index>(s) * Lk, static_cast<Eigen::Index>(h) * dh, Lk, dh);
      auto Vb = vv.block(static_cast<Eigen::Index>(s) * Lk, static_cast<Eigen::Index>(h) * dh, Lk, dh);
      Mat scores = (Qb * Kb.transpose()) * inv_sqrt;
      if (bias) scores += bias->middleRows(static_cast<Eigen::Index>(s) * Lq, Lq);
      Mat P(Lq, Lk);
      for (int r = 0; r < Lq; ++r) {
        double m = scores.row(r).maxCoeff();
        Eigen::ArrayXd e = (scores.row(r).array() - m).exp();
        P.row(r) = (e / e.sum()).matrix();
      }
      y.block(static_cast<Eigen::Index>(s) * Lq, static_cast<Eigen::Index>(h) * dh, Lq, dh).noalias() = P * Vb;
      if (track) (*probs)[static_cast<size_t>(s) * heads + h] = std::move(P);
    }
  }
  if (!track) return constant(t, std::move(y));
  return t.emit(std::move(y), true, [q, k, v, probs, B, Lq, Lk, heads, dh, inv_sqrt](Tape& tt, const Mat& g) {
    const Mat& qv = tt.val(q);
    const Mat& kv = tt.val(k);
    const Mat& vv = tt.val(v);
    Mat gq = Mat::Zero(qv.rows(), qv.cols());
    Mat gk = Mat::Zero(kv.rows(), kv.cols());
    Mat gv = Mat::Zero(vv.rows(), vv.cols());
#pragma omp parallel for collapse(2) schedule(static) num_threads(hitea::thread_count())
    for (int s = 0; s < B; ++s) {
      for (int h = 0; h < heads; ++h) {
        const Mat& P = (*probs)[static_cast<size_t>(s) * heads + h];
        auto Qb = qv.block(static_cast<Eigen::Index>(s) * Lq, static_cast<Eigen::Index>(h) * dh, Lq, dh);
        auto Kb = kv.block(static_cast<Eigen::Index>(s) * Lk, static_cast<Eigen::Index>(h) * dh, Lk, dh);
        auto Vb = vv.block(static_cast<Eigen::Index>(s) * Lk, static_cast<Eigen::Index>(h) * dh, Lk, dh);
        auto Gb = g.block(static_cast<Eigen::Index>(s) * Lq, static_cast<Eigen::Index>(h) * dh, Lq, dh);
        gv.block(static_cast<Eigen::Index>(s) * Lk, static_cast<Eigen::Index>(h) * dh, Lk, dh).noalias() =
            P.transpose() * Gb;
        Mat gP = Gb * Vb.transpose();
        // softmax backward per row
        Mat gS(Lq, Lk);
        for (int r = 0; r < Lq; ++r) {
          double dot = gP.row(r).dot(P.row(r));
          gS.row(r) = (gP.row(r).array() - dot).matrix().cwiseProduct(P.row(r));
        }
        gS *= inv_sqrt;
        gq.block(static_cast<Eigen::Index>(s) * Lq, static_cast<Eigen::Index>(h) * dh, Lq, dh).noalias() = gS * Kb;
        gk.block(static_cast<Eigen::Index>(s) * Lk, static_cast<Eigen::Index>(h) * dh, Lk, dh).noalias() =
            gS.transpose() * Qb;
      }
    }
    if (tt.needs_grad(q)) tt.accumulate(q, gq);
    if (tt.needs_grad(k)) tt.accumulate(k, gk);
    if (tt.needs_grad(v)) tt.accumulate(v, gv);
  });
}

// Mean over the T middle axis of a (B*T*P) x D packed tensor -> (B*P) x D.
// Addends are sorted before summation so the result is bitwise invariant to
// frame permutations (used by the order-invariant video encoder ablation).
inline Var mean_over_frames(Var x, int B, int T, int P) {
  Tape& t = *x.tape;
  const Mat& xv = t.val(x);
  int D = static_cast<int>(xv.cols());
  Mat y(static_cast<Eigen::Index>(B) * P, D);
  std::vector<double> vals(static_cast<size_t>(T));
  for (int s = 0; s < B; ++s) {
    for (int p = 0; p < P; ++p) {
      for (int d = 0; d < D; ++d) {
        for (int f = 0; f < T; ++f) vals[static_cast<size_t>(f)] = xv(static_cast<Eigen::Index>(s) * T * P + static_cast<Eigen::Index>(f) * P + p, d);
        std::sort(vals.begin(), vals.end());
        double acc = 0.0;
        for (double z : vals) acc += z;
        y(static_cast<Eigen::Index>(s) * P + p, d) = acc / static_cast<double>(T);
      }
    }
  }
  if (!t.needs_grad(x)) return constant(t, std::move(y));
  return t.emit(std::move(y), true, [x, B, T, P](Tape& tt, const Mat& g) {
    Mat gx(static_cast<Eigen::Index>(B) * T * P, g.cols());
    double inv = 1.0 / static_cast<double>(T);
    for (int s = 0; s < B; ++s)
      for (int f = 0; f < T; ++f)
        gx.middleRows(static_cast<Eigen::Index>(s) * T * P + static_cast<Eigen::Index>(f) * P, P) =
            g.middleRows(static_cast<Eigen::Index>(s) * P, P) * inv;
    tt.accumulate(x, gx);
  });
}

}  // namespace hitea::ad
