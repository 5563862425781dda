#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "msnmt/errors.hpp"
#include "msnmt/numerics.hpp"
#include "msnmt/tape.hpp"

using namespace msnmt;
using testing::max_rel_err;
using testing::random_tensor;

namespace {

Tensor triple_loop(const Tensor& a, const Tensor& b) {
  Tensor c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      Real s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

// Loss = <f(a, b), r> for a fixed random r; returns analytic and numeric grads of a and b.
template <class Fwd, class Bwd>
void check_binary_grads(Fwd fwd, Bwd bwd, std::size_t ar, std::size_t ac, std::size_t br,
                        std::size_t bc, std::uint64_t seed) {
  Rng rng(seed);
  Parameter a("a", ar, ac), b("b", br, bc);
  testing::randomize(a, rng);
  testing::randomize(b, rng);
  const Tensor out = fwd(a.value, b.value);
  const Tensor r = random_tensor(out.rows(), out.cols(), rng);
  auto [da, db] = bwd(a.value, b.value, out, r);
  Parameter* ps[] = {&a, &b};
  const auto num =
      finite_difference_grad([&] { return testing::dot(fwd(a.value, b.value), r); }, ps);
  CHECK(max_rel_err(da, num[0]) < 1e-6);
  CHECK(max_rel_err(db, num[1]) < 1e-6);
}

}  // namespace

TEST_CASE("matmul identity and hand product") {
  const Tensor m = Tensor::matrix({{1, 2}, {3, 4}});
  CHECK(matmul(Tensor::matrix({{1, 0}, {0, 1}}), m) == m);
  const Tensor p = matmul(Tensor::row({1, 2}), Tensor::matrix({{3}, {4}}));
  CHECK(p.rows() == 1);
  CHECK(p.cols() == 1);
  CHECK(p(0, 0) == 11.0);
}

TEST_CASE("matmul matches a triple loop") {
  Rng rng(42);
  const Tensor a = random_tensor(3, 4, rng);
  const Tensor b = random_tensor(4, 2, rng);
  CHECK(testing::max_abs_diff(matmul(a, b), triple_loop(a, b)) < 1e-14);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  try {
    matmul(Tensor(2, 3), Tensor(2, 3));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
  }
}

TEST_CASE("matmul is associative on small instances") {
  Rng rng(7);
  const Tensor a = random_tensor(3, 4, rng), b = random_tensor(4, 5, rng),
               c = random_tensor(5, 2, rng);
  CHECK(testing::max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))) < 1e-10);
}

TEST_CASE("gemm transposes and accumulates") {
  Rng rng(3);
  const Tensor a = random_tensor(4, 3, rng), b = random_tensor(2, 4, rng);
  Tensor at(3, 4), bt(4, 2);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 3; ++j) at(j, i) = a(i, j);
    for (std::size_t j = 0; j < 2; ++j) bt(i, j) = b(j, i);
  }
  Tensor c;
  gemm(a, true, b, true, c);
  CHECK(testing::max_abs_diff(c, triple_loop(at, bt)) < 1e-14);
  Tensor acc = c;
  gemm(a, true, b, true, acc, 2.0, true);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(acc[i] == doctest::Approx(3.0 * c[i]));
}

TEST_CASE("matmul backward matches finite differences") {
  check_binary_grads([](const Tensor& a, const Tensor& b) { return matmul(a, b); },
                     [](const Tensor& a, const Tensor& b, const Tensor&, const Tensor& r) {
                       auto g = matmul_backward(a, b, r);
                       return std::pair{g.da, g.db};
                     },
                     3, 4, 4, 2, 11);
}

TEST_CASE("ewise forward examples") {
  const Tensor z(1, 3);
  CHECK(ewise(Ewise::Tanh, z) == z);
  const Tensor s = ewise(Ewise::Sigmoid, z);
  for (std::size_t i = 0; i < 3; ++i) CHECK(s[i] == 0.5);
  CHECK(ewise(Ewise::Mul, Tensor::row({0.2}), Tensor::row({0.3}))[0] == doctest::Approx(0.06));
  CHECK_THROWS_AS(ewise(Ewise::Add, Tensor(1, 2), Tensor(1, 3)), DimensionError);
}

TEST_CASE("ewise backward matches finite differences") {
  for (Ewise kind : {Ewise::Add, Ewise::Mul, Ewise::Sub}) {
    check_binary_grads([kind](const Tensor& a, const Tensor& b) { return ewise(kind, a, b); },
                       [kind](const Tensor& a, const Tensor& b, const Tensor& out,
                              const Tensor& r) {
                         auto g = ewise_backward(kind, a, &b, out, r);
                         return std::pair{g.da, g.db};
                       },
                       2, 3, 2, 3, 5 + static_cast<int>(kind));
  }
  for (Ewise kind : {Ewise::Tanh, Ewise::Sigmoid}) {
    Rng rng(17);
    Parameter a("a", 2, 3);
    testing::randomize(a, rng);
    const Tensor out = ewise(kind, a.value);
    const Tensor r = random_tensor(2, 3, rng);
    const Tensor da = ewise_backward(kind, a.value, nullptr, out, r).da;
    Parameter* ps[] = {&a};
    const auto num =
        finite_difference_grad([&] { return testing::dot(ewise(kind, a.value), r); }, ps);
    CHECK(max_rel_err(da, num[0]) < 1e-6);
  }
}

TEST_CASE("concat examples") {
  CHECK(concat({Tensor::row({1, 2}), Tensor::row({3})}) == Tensor::row({1, 2, 3}));
  const Tensor x = Tensor::row({4, 5});
  CHECK(concat({x}) == x);
  const Tensor c = concat({Tensor::row({1, 1, 1, 1}), Tensor::row({2, 2, 2, 2}),
                           Tensor::row({3, 3, 3, 3})});
  CHECK(c.cols() == 12);
  for (std::size_t i = 0; i < 12; ++i) CHECK(c[i] == static_cast<Real>(i / 4 + 1));
  CHECK_THROWS_AS(concat(std::span<const Tensor>{}), ArgumentError);
  CHECK_THROWS_AS(concat({Tensor(1, 2), Tensor(2, 2)}), DimensionError);
}

TEST_CASE("concat then split is the identity") {
  Rng rng(9);
  const std::vector<Tensor> parts = {random_tensor(2, 3, rng), random_tensor(2, 1, rng),
                                     random_tensor(2, 4, rng)};
  const std::size_t widths[] = {3, 1, 4};
  const auto back = split_cols(concat(parts), widths);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(back[i] == parts[i]);
}

TEST_CASE("softmax examples") {
  const Tensor u = softmax(Tensor::row({0, 0, 0, 0}));
  for (std::size_t i = 0; i < 4; ++i) CHECK(u[i] == 0.25);
  const Tensor big = softmax(Tensor::row({1000, 0}));
  CHECK(big.all_finite());
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(big[1] < 1e-300);
  const Tensor s = softmax(Tensor::row({1, 2, 3}));
  const Real z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(s[i] - std::exp(i + 1.0) / z) < 1e-12);
  CHECK_THROWS_AS(softmax(Tensor(1, 0)), ArgumentError);
}

TEST_CASE("softmax sums to one and is permutation equivariant") {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor v = random_tensor(1, 7, rng, -20, 20);
    const Tensor s = softmax(v);
    CHECK(std::abs(s.sum() - 1.0) < 1e-12);
    Tensor rev(1, 7);
    for (std::size_t i = 0; i < 7; ++i) rev[i] = v[6 - i];
    const Tensor sr = softmax(rev);
    for (std::size_t i = 0; i < 7; ++i) CHECK(std::abs(sr[i] - s[6 - i]) < 1e-15);
  }
}

TEST_CASE("softmax backward matches finite differences") {
  Rng rng(23);
  Parameter v("v", 2, 5);
  testing::randomize(v, rng);
  const Tensor r = random_tensor(2, 5, rng);
  const Tensor dv = softmax_backward(softmax(v.value), r);
  Parameter* ps[] = {&v};
  const auto num = finite_difference_grad([&] { return testing::dot(softmax(v.value), r); }, ps);
  CHECK(max_rel_err(dv, num[0]) < 1e-6);
}

TEST_CASE("finite differences on analytic functions") {
  Parameter t("theta", 1, 1);
  t.value[0] = 3.0;
  Parameter* ps[] = {&t};
  auto g = finite_difference_grad([&] { return t.value[0] * t.value[0]; }, ps);
  CHECK(std::abs(g[0][0] - 6.0) < 1e-6);
  CHECK(t.value[0] == 3.0);
  g = finite_difference_grad([] { return 4.0; }, ps);
  CHECK(g[0][0] == 0.0);
  CHECK_THROWS_AS(finite_difference_grad([] { return std::nan(""); }, ps), NumericError);
}

TEST_CASE("tape ops backward matches finite differences") {
  Rng rng(31);
  Parameter x("x", 3, 4), w("w", 5, 4), b("b", 1, 5), table("table", 6, 4);
  for (Parameter* p : {&x, &w, &b, &table}) testing::randomize(p[0], rng);
  const Tensor r = random_tensor(3, 13, rng);
  const Tensor mask = random_tensor(3, 5, rng, 0.0, 2.0);
  const int ids[] = {2, 5, 2};
  auto build = [&](Tape* tape) {
    Var xv = make_var(x.value);
    Var h = tanh(tape, linear(tape, xv, w, &b));
    Var m = apply_mask(tape, h, mask);
    Var e = embed(tape, table, ids);
    Var s = add(tape, e, xv);
    Var out = concat_cols(tape, {m, s, e});
    return std::pair{xv, out};
  };
  Tape tape;
  auto [xv, out] = build(&tape);
  out->grad_ref() = r;
  tape.backward();
  x.grad = xv->grad;
  Parameter* ps[] = {&x, &w, &b, &table};
  const auto num =
      finite_difference_grad([&] { return testing::dot(build(nullptr).second->value, r); }, ps);
  CHECK(max_rel_err(x.grad, num[0]) < 1e-6);
  CHECK(max_rel_err(w.grad, num[1]) < 1e-6);
  CHECK(max_rel_err(b.grad, num[2]) < 1e-6);
  CHECK(max_rel_err(table.grad, num[3]) < 1e-6);
}

TEST_CASE("embed rejects out-of-range ids") {
  Parameter table("table", 4, 2);
  const int ids[] = {4};
  CHECK_THROWS_AS(embed(nullptr, table, ids), VocabularyError);
}

TEST_CASE("zero_grad leaves exact zeros") {
  Parameter p("p", 2, 2);
  p.grad.fill(3.0);
  p.zero_grad();
  for (std::size_t i = 0; i < 4; ++i) CHECK(p.grad[i] == 0.0);
  CHECK(p.grad.same_shape(p.value));
}

TEST_CASE("exit codes per error kind") {
  CHECK(exit_code_for(ErrorKind::Validation) == 1);
  CHECK(exit_code_for(ErrorKind::Io) == 2);
  CHECK(exit_code_for(ErrorKind::Numeric) == 3);
  CHECK(exit_code_for(ErrorKind::Compatibility) == 4);
}

TEST_CASE("derived seeds differ per stream and are stable") {
  CHECK(derive_seed(1, "init") == derive_seed(1, "init"));
  CHECK(derive_seed(1, "init") != derive_seed(1, "dropout"));
  CHECK(derive_seed(1, "step", 1, 2) != derive_seed(1, "step", 2, 1));
  Rng a(5, "shuffle"), b(5, "shuffle");
  for (int i = 0; i < 10; ++i) CHECK(a.next() == b.next());
  Rng c(5);
  for (int i = 0; i < 1000; ++i) {
    const Real u = c.uniform();
    CHECK((u >= 0.0 && u < 1.0));
    CHECK(c.below(7) < 7);
  }
}
