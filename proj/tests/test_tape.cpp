#include "hitea/tape.hpp"

#include "fd_check.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace hitea;
using namespace hitea::ad;
using hitea::testing::fd_check;
using hitea::testing::random_mat;

namespace {
Rng& rng() {
  static Rng r(20240911ULL);
  return r;
}
}  // namespace

TEST_CASE("matmul forward and gradient") {
  Mat a = random_mat(rng(), 3, 4);
  Mat b = random_mat(rng(), 4, 5);
  auto rep = fd_check({a, b}, [](Tape& t, const std::vector<Var>& v) {
    return sum_all(matmul(v[0], v[1]));
  });
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("matmul_nt matches matmul with transpose") {
  Mat a = random_mat(rng(), 3, 4);
  Mat b = random_mat(rng(), 5, 4);
  Tape t;
  Var va = input(t, a), vb = input(t, b);
  Mat y = t.val(matmul_nt(va, vb));
  CHECK((y - a * b.transpose()).norm() == 0.0);
  auto rep = fd_check({a, b}, [](Tape& t, const std::vector<Var>& v) {
    return sum_all(hadamard(matmul_nt(v[0], v[1]), matmul_nt(v[0], v[1])));
  });
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("elementwise ops gradients") {
  Mat a = random_mat(rng(), 4, 3);
  Mat b = random_mat(rng(), 4, 3);
  auto mix = [](Tape& t, const std::vector<Var>& v) {
    Var x = add(hadamard(v[0], v[1]), scale(sub(v[0], v[1]), 0.7));
    return mean_all(hadamard(x, x));
  };
  CHECK(fd_check({a, b}, mix).max_rel_err < 1e-6);
}

TEST_CASE("relu and gelu gradients") {
  Mat a = random_mat(rng(), 5, 4);
  // keep entries away from the relu kink
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (std::abs(a(i)) < 1e-3) a(i) = 0.1;
  CHECK(fd_check({a}, [](Tape& t, const std::vector<Var>& v) {
          return sum_all(relu(v[0]));
        }).max_rel_err < 1e-6);
  CHECK(fd_check({a}, [](Tape& t, const std::vector<Var>& v) {
          return sum_all(gelu(v[0]));
        }).max_rel_err < 1e-6);
}

TEST_CASE("softmax_rows gradient with mask bias") {
  Mat a = random_mat(rng(), 4, 6);
  Mat bias = Mat::Zero(4, 6);
  bias(0, 5) = -std::numeric_limits<double>::infinity();
  bias(2, 4) = -std::numeric_limits<double>::infinity();
  auto rep = fd_check({a}, [&](Tape& t, const std::vector<Var>& v) {
    Var p = softmax_rows(v[0], &bias);
    Mat w = Mat::Ones(4, 6);
    w(1, 1) = 3.0;
    return sum_all(hadamard(p, constant(t, w)));
  });
  CHECK(rep.max_rel_err < 1e-6);

  // masked entries are exactly zero probability
  Tape t;
  Var p = softmax_rows(input(t, a), &bias);
  CHECK(t.val(p)(0, 5) == 0.0);
  CHECK(t.val(p)(2, 4) == 0.0);
}

TEST_CASE("layernorm_rows gradient") {
  Mat x = random_mat(rng(), 5, 8);
  Mat gamma = random_mat(rng(), 1, 8, 0.5);
  gamma.array() += 1.0;
  Mat beta = random_mat(rng(), 1, 8, 0.2);
  auto rep = fd_check({x, gamma, beta}, [](Tape& t, const std::vector<Var>& v) {
    Var y = layernorm_rows(v[0], v[1], v[2]);
    return sum_all(hadamard(y, y));
  });
  CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("l2_normalize_rows gradient and zero-norm contract") {
  Mat x = random_mat(rng(), 4, 6);
  auto rep = fd_check({x}, [](Tape& t, const std::vector<Var>& v) {
    Mat w = Mat::Ones(4, 6);
    w(0, 0) = 2.0;
    return sum_all(hadamard(l2_normalize_rows(v[0]), constant(t, w)));
  });
  CHECK(rep.max_rel_err < 1e-6);

  Tape t;
  Mat z = Mat::Zero(2, 3);
  CHECK_THROWS_AS(l2_normalize_rows(input(t, z)), contract_error);
}

TEST_CASE("slicing, gathering and concatenation gradients") {
  Mat a = random_mat(rng(), 6, 4);
  auto rep = fd_check({a}, [](Tape& t, const std::vector<Var>& v) {
    Var s1 = slice_rows(v[0], 1, 3);
    Var s2 = slice_cols(v[0], 0, 2);
    Var g = gather_rows(v[0], {5, 0, -1, 2, 2});
    Var c = concat_rows({s1, g});
    return add(sum_all(hadamard(c, c)), mean_all(hadamard(s2, s2)));
  });
  CHECK(rep.max_rel_err < 1e-6);

  // index -1 produces a zero row
  Tape t;
  Var g = gather_rows(input(t, a), {-1, 3});
  CHECK(t.val(g).row(0).norm() == 0.0);
  CHECK((t.val(g).row(1) - a.row(3)).norm() == 0.0);
}

TEST_CASE("interleave_rows round-trips per-sample blocks") {
  Mat a = random_mat(rng(), 6, 3);  // B=2, La=3
  Mat b = random_mat(rng(), 4, 3);  // B=2, Lb=2
  Tape t;
  Var y = interleave_rows(input(t, a), input(t, b), 2, 3, 2);
  CHECK((t.val(y).middleRows(0, 3) - a.middleRows(0, 3)).norm() == 0.0);
  CHECK((t.val(y).middleRows(3, 2) - b.middleRows(0, 2)).norm() == 0.0);
  CHECK((t.val(y).middleRows(5, 3) - a.middleRows(3, 3)).norm() == 0.0);
  CHECK((t.val(y).middleRows(8, 2) - b.middleRows(2, 2)).norm() == 0.0);

  auto rep = fd_check({a, b}, [](Tape& t, const std::vector<Var>& v) {
    Var y = interleave_rows(v[0], v[1], 2, 3, 2);
    return sum_all(hadamard(y, y));
  });
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("reductions and dot_rows gradients") {
  Mat a = random_mat(rng(), 4, 5);
  Mat b = random_mat(rng(), 4, 5);
  auto rep = fd_check({a, b}, [](Tape& t, const std::vector<Var>& v) {
    return mean_all(hadamard(dot_rows(v[0], v[1]), dot_rows(v[0], v[1])));
  });
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("cross_entropy_rows values and gradient") {
  Mat z = random_mat(rng(), 5, 7);
  std::vector<int> targets = {0, 3, -1, 6, 2};
  Tape t;
  Var ce = cross_entropy_rows(input(t, z), targets);
  CHECK(t.val(ce)(2, 0) == 0.0);  // padded row
  // uniform logits give log(vocab)
  Mat u = Mat::Zero(1, 7);
  Var ceu = cross_entropy_rows(input(t, u), {4});
  CHECK(t.val(ceu)(0, 0) == Catch::Approx(std::log(7.0)).epsilon(1e-12));

  auto rep = fd_check({z}, [&](Tape& t, const std::vector<Var>& v) {
    return mean_all(cross_entropy_rows(v[0], targets));
  });
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("scale_by and exp_elem handle learnable temperature") {
  Mat a = random_mat(rng(), 3, 3);
  Mat log_tau = Mat::Constant(1, 1, std::log(0.07));
  auto rep = fd_check({a, log_tau}, [](Tape& t, const std::vector<Var>& v) {
    Var inv_tau = exp_elem(neg(v[1]));
    Var logits = scale_by(v[0], inv_tau);
    return sum_all(hadamard(logits, logits));
  });
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("stopgrad blocks gradient exactly") {
  Mat a = random_mat(rng(), 3, 3);
  Tape t;
  Var v = input(t, a);
  Var loss = sum_all(hadamard(stopgrad(v), v));
  t.backward(loss);
  CHECK((t.grad(v) - a).norm() == 0.0);  // only the non-sg factor contributes
}

TEST_CASE("attention matches manual single-head computation") {
  int B = 2, Lq = 3, Lk = 4, D = 6;
  Mat q = random_mat(rng(), B * Lq, D);
  Mat k = random_mat(rng(), B * Lk, D);
  Mat v = random_mat(rng(), B * Lk, D);
  Tape t;
  Var y = attention(input(t, q), input(t, k), input(t, v), nullptr, B, Lq, Lk, 1);
  for (int s = 0; s < B; ++s) {
    Mat scores = q.middleRows(s * Lq, Lq) * k.middleRows(s * Lk, Lk).transpose() / std::sqrt(6.0);
    for (int r = 0; r < Lq; ++r) {
      Eigen::ArrayXd e = (scores.row(r).array() - scores.row(r).maxCoeff()).exp();
      Mat p = (e / e.sum()).matrix().transpose();
      Mat expect = p * v.middleRows(s * Lk, Lk);
      CHECK((t.val(y).row(s * Lq + r) - expect).norm() < 1e-12);
    }
  }
}

TEST_CASE("attention gradient, multi-head with mask") {
  int B = 2, Lq = 3, Lk = 4, D = 8, H = 2;
  Mat q = random_mat(rng(), B * Lq, D, 0.5);
  Mat k = random_mat(rng(), B * Lk, D, 0.5);
  Mat v = random_mat(rng(), B * Lk, D, 0.5);
  Mat bias = Mat::Zero(B * Lq, Lk);
  bias.col(3).setConstant(-std::numeric_limits<double>::infinity());
  auto rep = fd_check({q, k, v}, [&](Tape& t, const std::vector<Var>& vs) {
    Var y = attention(vs[0], vs[1], vs[2], &bias, B, Lq, Lk, H);
    return sum_all(hadamard(y, y));
  });
  CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("mean_over_frames is exactly frame-permutation invariant") {
  int B = 2, T = 5, P = 3, D = 4;
  Mat x = random_mat(rng(), B * T * P, D);
  Tape t;
  Mat y0 = t.val(mean_over_frames(input(t, x), B, T, P));

  auto perm = rng().permutation(T);
  Mat xp(x.rows(), x.cols());
  for (int s = 0; s < B; ++s)
    for (int f = 0; f < T; ++f)
      xp.middleRows(s * T * P + f * P, P) = x.middleRows(s * T * P + perm[f] * P, P);
  Mat y1 = t.val(mean_over_frames(input(t, xp), B, T, P));
  CHECK((y0 - y1).norm() == 0.0);  // bitwise equal

  auto rep = fd_check({x}, [&](Tape& t, const std::vector<Var>& v) {
    Var y = mean_over_frames(v[0], B, T, P);
    return sum_all(hadamard(y, y));
  });
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("backward requires scalar root") {
  Tape t;
  Var v = input(t, Mat::Ones(2, 2));
  CHECK_THROWS_AS(t.backward(v), contract_error);
}
