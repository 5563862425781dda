#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "msnmt/combiner.hpp"
#include "msnmt/errors.hpp"

using namespace msnmt;
using testing::random_tensor;

namespace {

LayerState state_of(const Tensor& h, const Tensor& c) { return {make_var(h), make_var(c)}; }

LayerState random_state(std::size_t b, std::size_t d, Rng& rng) {
  return state_of(random_tensor(b, d, rng), random_tensor(b, d, rng, -2, 2));
}

Real sig(Real x) { return 1.0 / (1.0 + std::exp(-x)); }

// Scalar Child-Sum merge for d = 1.
std::pair<Real, Real> scalar_childsum(Real h1, Real c1, Real h2, Real c2, const Real w[8]) {
  // w: W1_i, W2_i, W1_f, W2_f, W1_o, W2_o, W1_u, W2_u
  const Real i = sig(w[0] * h1 + w[1] * h2);
  const Real f1 = sig(w[2] * h1);
  const Real f2 = sig(w[3] * h2);
  const Real o = sig(w[4] * h1 + w[5] * h2);
  const Real u = std::tanh(w[6] * h1 + w[7] * h2);
  const Real c = i * u + f1 * c1 + f2 * c2;
  return {o * std::tanh(c), c};
}

ChildSumCombinerParams swapped(const ChildSumCombinerParams& p) {
  ChildSumCombinerParams q = p;
  std::swap(q.w1_i.value, q.w2_i.value);
  std::swap(q.w1_f.value, q.w2_f.value);
  std::swap(q.w1_o.value, q.w2_o.value);
  std::swap(q.w1_u.value, q.w2_u.value);
  return q;
}

}  // namespace

TEST_CASE("basic combine hand values") {
  BasicCombinerParams p("c", 1);
  SUBCASE("zero weights") {
    const LayerState s = basic_combine(nullptr, state_of(Tensor::row({0.9}), Tensor::row({0.2})),
                                       state_of(Tensor::row({-0.4}), Tensor::row({0.3})), p);
    CHECK(s.h->value[0] == 0.0);
    CHECK(s.c->value[0] == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("cancellation") {
    p.w_c.value = Tensor::row({1, 1});
    const LayerState s = basic_combine(nullptr, state_of(Tensor::row({0.5}), Tensor::row({0})),
                                       state_of(Tensor::row({-0.5}), Tensor::row({0})), p);
    CHECK(s.h->value[0] == 0.0);
  }
  SUBCASE("d=2 against hand arithmetic") {
    BasicCombinerParams q("c", 2);
    q.w_c.value = Tensor::matrix({{0.1, -0.2, 0.3, 0.4}, {0.5, 0.6, -0.7, 0.8}});
    const LayerState s =
        basic_combine(nullptr, state_of(Tensor::row({0.2, -0.3}), Tensor::row({1.0, 2.0})),
                      state_of(Tensor::row({0.4, 0.5}), Tensor::row({-0.5, 0.25})), q);
    const Real h0 = std::tanh(0.1 * 0.2 + -0.2 * -0.3 + 0.3 * 0.4 + 0.4 * 0.5);
    const Real h1 = std::tanh(0.5 * 0.2 + 0.6 * -0.3 + -0.7 * 0.4 + 0.8 * 0.5);
    CHECK(std::abs(s.h->value[0] - h0) < 1e-12);
    CHECK(std::abs(s.h->value[1] - h1) < 1e-12);
    CHECK(std::abs(s.c->value[0] - 0.5) < 1e-12);
    CHECK(std::abs(s.c->value[1] - 2.25) < 1e-12);
  }
}

TEST_CASE("basic combine cell sum is commutative") {
  Rng rng(2);
  BasicCombinerParams p("c", 3);
  testing::randomize(p.w_c, rng);
  const LayerState a = random_state(2, 3, rng), b = random_state(2, 3, rng);
  const LayerState ab = basic_combine(nullptr, a, b, p);
  const LayerState ba = basic_combine(nullptr, b, a, p);
  CHECK(ab.c->value == ba.c->value);
  for (std::size_t i = 0; i < ab.h->value.size(); ++i) CHECK(std::abs(ab.h->value[i]) < 1.0);
}

TEST_CASE("childsum hand values") {
  ChildSumCombinerParams p("c", 1);
  SUBCASE("zero weights, zero cells") {
    const LayerState s = childsum_combine(nullptr, state_of(Tensor::row({0.3}), Tensor::row({0})),
                                          state_of(Tensor::row({0.7}), Tensor::row({0})), p);
    CHECK(s.c->value[0] == 0.0);
    CHECK(s.h->value[0] == 0.0);
  }
  SUBCASE("zero weights, c1=1") {
    const LayerState s = childsum_combine(nullptr, state_of(Tensor::row({0.3}), Tensor::row({1})),
                                          state_of(Tensor::row({0.7}), Tensor::row({0})), p);
    CHECK(s.c->value[0] == 0.5);
    CHECK(s.h->value[0] == doctest::Approx(0.2311).epsilon(1e-4));
    CHECK(std::abs(s.h->value[0] - 0.5 * std::tanh(0.5)) < 1e-15);
  }
  SUBCASE("d=1 random weights against the scalar oracle") {
    Rng rng(4);
    Real w[8];
    auto params = p.parameters();
    for (int k = 0; k < 8; ++k) {
      w[k] = rng.uniform(-1, 1);
      params[static_cast<std::size_t>(k)]->value[0] = w[k];
    }
    const auto [h, c] = scalar_childsum(0.3, -0.8, -0.6, 1.5, w);
    const LayerState s = childsum_combine(nullptr, state_of(Tensor::row({0.3}), Tensor::row({-0.8})),
                                          state_of(Tensor::row({-0.6}), Tensor::row({1.5})), p);
    CHECK(std::abs(s.h->value[0] - h) < 1e-12);
    CHECK(std::abs(s.c->value[0] - c) < 1e-12);
  }
}

TEST_CASE("childsum d=2 against a per-unit oracle") {
  Rng rng(6);
  ChildSumCombinerParams p("c", 2);
  for (Parameter* q : p.parameters()) testing::randomize(*q, rng);
  const LayerState a = random_state(1, 2, rng), b = random_state(1, 2, rng);
  const LayerState s = childsum_combine(nullptr, a, b, p);
  auto mv = [](const Parameter& w, const Tensor& h, std::size_t j) {
    return w.value(j, 0) * h[0] + w.value(j, 1) * h[1];
  };
  const Tensor& h1 = a.h->value;
  const Tensor& h2 = b.h->value;
  for (std::size_t j = 0; j < 2; ++j) {
    const Real i = sig(mv(p.w1_i, h1, j) + mv(p.w2_i, h2, j));
    const Real f1 = sig(mv(p.w1_f, h1, j));
    const Real f2 = sig(mv(p.w2_f, h2, j));
    const Real o = sig(mv(p.w1_o, h1, j) + mv(p.w2_o, h2, j));
    const Real u = std::tanh(mv(p.w1_u, h1, j) + mv(p.w2_u, h2, j));
    const Real c = i * u + f1 * a.c->value[j] + f2 * b.c->value[j];
    CHECK(std::abs(s.c->value[j] - c) < 1e-12);
    CHECK(std::abs(s.h->value[j] - o * std::tanh(c)) < 1e-12);
  }
}

TEST_CASE("childsum swap symmetry is exact") {
  Rng rng(8);
  for (std::size_t d : {1u, 2u, 5u}) {
    ChildSumCombinerParams p("c", d);
    for (Parameter* q : p.parameters()) testing::randomize(*q, rng);
    ChildSumCombinerParams q = swapped(p);
    const LayerState a = random_state(3, d, rng), b = random_state(3, d, rng);
    const LayerState ab = childsum_combine(nullptr, a, b, p);
    const LayerState ba = childsum_combine(nullptr, b, a, q);
    CHECK(ab.h->value == ba.h->value);
    CHECK(ab.c->value == ba.c->value);
  }
}

TEST_CASE("combiner dimension errors") {
  BasicCombinerParams b("c", 2);
  ChildSumCombinerParams c("c", 2);
  Rng rng(1);
  const LayerState two = random_state(1, 2, rng), three = random_state(1, 3, rng);
  CHECK_THROWS_AS(basic_combine(nullptr, two, three, b), DimensionError);
  CHECK_THROWS_AS(childsum_combine(nullptr, three, three, c), DimensionError);
  CombinerLayers layers(CombineMethod::Basic, 2, 2);
  CHECK_THROWS_AS(combine_stacks(nullptr, {two, two}, {two}, layers), DimensionError);
}

TEST_CASE("combine stacks applies each layer independently") {
  Rng rng(10);
  for (CombineMethod m : {CombineMethod::Basic, CombineMethod::ChildSum}) {
    CombinerLayers layers(m, 2, 3);
    for (Parameter* q : layers.parameters()) testing::randomize(*q, rng);
    const StateStack e1 = {random_state(2, 3, rng), random_state(2, 3, rng)};
    const StateStack e2 = {random_state(2, 3, rng), random_state(2, 3, rng)};
    const StateStack out = combine_stacks(nullptr, e1, e2, layers);
    REQUIRE(out.size() == 2);
    for (std::size_t l = 0; l < 2; ++l) {
      const LayerState direct =
          m == CombineMethod::Basic
              ? basic_combine(nullptr, e1[l], e2[l], layers.basic[l])
              : childsum_combine(nullptr, e1[l], e2[l], layers.childsum[l]);
      CHECK(out[l].h->value == direct.h->value);
      CHECK(out[l].c->value == direct.c->value);
    }
  }
  CombinerLayers basic(CombineMethod::Basic, 1, 2);
  const LayerState s = random_state(1, 2, rng);
  const StateStack doubled = combine_stacks(nullptr, {s}, {s}, basic);
  for (std::size_t j = 0; j < 2; ++j) CHECK(doubled[0].c->value[j] == 2.0 * s.c->value[j]);
}

TEST_CASE("combiner gradients") {
  Rng rng(12);
  Parameter h1("h1", 2, 4), c1("c1", 2, 4), h2("h2", 2, 4), c2("c2", 2, 4);
  for (Parameter* q : {&h1, &c1, &h2, &c2}) testing::randomize(*q, rng);
  BasicCombinerParams b("b", 4);
  ChildSumCombinerParams cs("cs", 4);
  for (Parameter* q : b.parameters()) testing::randomize(*q, rng);
  for (Parameter* q : cs.parameters()) testing::randomize(*q, rng);
  const Real eb = testing::tape_grad_error(
      [&](Tape* t, std::vector<Var>& in) {
        const LayerState s = basic_combine(t, {in[0], in[1]}, {in[2], in[3]}, b);
        return std::vector<Var>{s.h, s.c};
      },
      b.parameters(), {&h1, &c1, &h2, &c2}, 1);
  CHECK(eb < 1e-6);
  const Real ec = testing::tape_grad_error(
      [&](Tape* t, std::vector<Var>& in) {
        const LayerState s = childsum_combine(t, {in[0], in[1]}, {in[2], in[3]}, cs);
        return std::vector<Var>{s.h, s.c};
      },
      cs.parameters(), {&h1, &c1, &h2, &c2}, 2);
  CHECK(ec < 1e-6);
}

TEST_CASE("childsum gates stay in range") {
  Rng rng(14);
  ChildSumCombinerParams p("c", 6);
  for (Parameter* q : p.parameters()) testing::randomize(*q, rng, 3.0);
  for (int trial = 0; trial < 20; ++trial) {
    const LayerState a = random_state(2, 6, rng), b = random_state(2, 6, rng);
    const LayerState s = childsum_combine(nullptr, a, b, p);
    for (std::size_t i = 0; i < s.h->value.size(); ++i) {
      CHECK(std::abs(s.h->value[i]) < 1.0);
      // |c| <= |u| + |c1| + |c2| since every gate lies in (0, 1).
      CHECK(std::abs(s.c->value[i]) < 1.0 + std::abs(a.c->value[i]) + std::abs(b.c->value[i]));
    }
  }
}
