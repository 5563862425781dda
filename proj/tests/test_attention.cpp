#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "msnmt/attention.hpp"
#include "msnmt/errors.hpp"

using namespace msnmt;
using testing::random_tensor;

namespace {

AttentionParams random_attention(std::size_t d, Rng& rng, Real range = 1.0) {
  AttentionParams p("attn", d);
  for (Parameter* q : p.parameters()) testing::randomize(*q, rng, range);
  return p;
}

Real gauss(Real s, Real p, int radius) {
  const Real sigma = radius / 2.0;
  return std::exp(-(s - p) * (s - p) / (2.0 * sigma * sigma));
}

// Encoder output over explicit top-layer sequences given in original order.
EncoderOutput fake_encoder(const std::vector<Tensor>& seqs) {
  EncoderOutput enc;
  std::size_t width = 0;
  const std::size_t d = seqs.front().cols();
  for (const auto& s : seqs) {
    enc.lengths.push_back(s.rows());
    width = std::max(width, s.rows());
  }
  for (std::size_t j = 0; j < width; ++j) {
    Tensor t(seqs.size(), d);
    for (std::size_t b = 0; b < seqs.size(); ++b) {
      if (j >= seqs[b].rows()) continue;
      const std::size_t pos = seqs[b].rows() - 1 - j;
      for (std::size_t k = 0; k < d; ++k) t(b, k) = seqs[b](pos, k);
    }
    enc.top_steps.push_back(make_var(std::move(t)));
  }
  return enc;
}

}  // namespace

TEST_CASE("predict position") {
  Rng rng(1);
  AttentionParams p = random_attention(2, rng);
  const Tensor h = random_tensor(1, 2, rng);
  SUBCASE("v_p = 0 gives the midpoint") {
    p.v_p.value.set_zero();
    CHECK(predict_position(h, p, 7) == 3.5);
  }
  SUBCASE("S = 1 stays inside (0, 1)") {
    const Real pos = predict_position(h, p, 1);
    CHECK(pos > 0.0);
    CHECK(pos < 1.0);
  }
  SUBCASE("scalar oracle") {
    Real z = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
      Real a = 0.0;
      for (std::size_t j = 0; j < 2; ++j) a += p.w_p.value(i, j) * h[j];
      z += p.v_p.value[i] * std::tanh(a);
    }
    CHECK(std::abs(predict_position(h, p, 9) - 9.0 / (1.0 + std::exp(-z))) < 1e-12);
  }
}

TEST_CASE("window weights") {
  Rng rng(2);
  const Tensor h = random_tensor(1, 3, rng);
  const Tensor seq = random_tensor(12, 3, rng);
  SUBCASE("W_a = 0 gives a uniform alignment") {
    const AttentionTrace t = window_weights(h, seq, 5.3, 2, Tensor(3, 3));
    CHECK(t.first == 3);
    CHECK(t.last == 7);
    for (std::size_t k = 0; k < t.window_size(); ++k) {
      CHECK(t.align[k] == doctest::Approx(0.2).epsilon(1e-15));
      CHECK(std::abs(t.weights[k] - gauss(static_cast<Real>(t.first + k), 5.3, 2) / 5.0) < 1e-15);
    }
  }
  SUBCASE("integer position has unit Gaussian factor") {
    const Tensor wa = random_tensor(3, 3, rng);
    const AttentionTrace t = window_weights(h, seq, 4.0, 3, wa);
    const std::size_t k = 4 - t.first;
    CHECK(t.weights[k] == t.align[k]);
  }
  SUBCASE("short sentence clamps to the whole sentence") {
    const AttentionTrace t = window_weights(h, random_tensor(3, 3, rng), 1.2, 10,
                                            random_tensor(3, 3, rng));
    CHECK(t.first == 0);
    CHECK(t.last == 2);
  }
  SUBCASE("scores against a bilinear oracle") {
    const Tensor wa = random_tensor(3, 3, rng);
    const AttentionTrace t = window_weights(h, seq, 6.7, 2, wa);
    std::vector<Real> score;
    Real z = 0.0;
    for (std::size_t s = t.first; s <= t.last; ++s) {
      Real v = 0.0;
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) v += h[i] * wa(i, j) * seq(s, j);
      score.push_back(std::exp(v));
      z += score.back();
    }
    for (std::size_t k = 0; k < score.size(); ++k) {
      CHECK(std::abs(t.align[k] - score[k] / z) < 1e-12);
      CHECK(std::abs(t.weights[k] - t.align[k] * gauss(static_cast<Real>(t.first + k), 6.7, 2)) <
            1e-12);
    }
  }
  SUBCASE("radius below one is rejected") {
    CHECK_THROWS_AS(window_weights(h, seq, 3.0, 0, Tensor(3, 3)), ArgumentError);
  }
}

TEST_CASE("context vector") {
  Rng rng(3);
  const Tensor seq = random_tensor(5, 4, rng);
  AttentionTrace t;
  t.first = t.last = 2;
  t.weights = {0.3};
  t.align = {1.0};
  Tensor c = context_vector(t, seq);
  for (std::size_t j = 0; j < 4; ++j) CHECK(c[j] == 0.3 * seq(2, j));
  t.weights = {0.0};
  c = context_vector(t, seq);
  for (std::size_t j = 0; j < 4; ++j) CHECK(c[j] == 0.0);
  t.first = 1;
  t.last = 3;
  t.weights = {0.2, 0.5, 0.1};
  c = context_vector(t, seq);
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(std::abs(c[j] - (0.2 * seq(1, j) + 0.5 * seq(2, j) + 0.1 * seq(3, j))) < 1e-15);
  }
}

TEST_CASE("attentional hidden") {
  Rng rng(4);
  const Tensor h = random_tensor(1, 2, rng), c1 = random_tensor(1, 2, rng),
               c2 = random_tensor(1, 2, rng);
  OutputProjection dual("attn.Wc", 2, 2);
  SUBCASE("zero projection") {
    const Tensor cs[] = {c1, c2};
    const Tensor out = attentional_hidden(h, cs, dual);
    for (std::size_t j = 0; j < 2; ++j) CHECK(out[j] == 0.0);
  }
  testing::randomize(dual.w, rng);
  SUBCASE("zero contexts leave the h block") {
    const Tensor cs[] = {Tensor(1, 2), Tensor(1, 2)};
    const Tensor out = attentional_hidden(h, cs, dual);
    for (std::size_t j = 0; j < 2; ++j) {
      CHECK(std::abs(out[j] - std::tanh(dual.w.value(j, 0) * h[0] + dual.w.value(j, 1) * h[1])) <
            1e-15);
    }
  }
  SUBCASE("composition oracle") {
    const Tensor cs[] = {c1, c2};
    const Tensor out = attentional_hidden(h, cs, dual);
    const Tensor x = concat({h, c1, c2});
    for (std::size_t j = 0; j < 2; ++j) {
      Real s = 0.0;
      for (std::size_t k = 0; k < 6; ++k) s += dual.w.value(j, k) * x[k];
      CHECK(std::abs(out[j] - std::tanh(s)) < 1e-12);
    }
  }
  SUBCASE("dual form with a zero second block equals the single form") {
    OutputProjection single("attn.Wc", 2, 1);
    for (std::size_t j = 0; j < 2; ++j) {
      for (std::size_t k = 0; k < 4; ++k) single.w.value(j, k) = dual.w.value(j, k);
      dual.w.value(j, 4) = dual.w.value(j, 5) = 0.0;
    }
    const Tensor both[] = {c1, c2};
    const Tensor one[] = {c1};
    CHECK(attentional_hidden(h, both, dual) == attentional_hidden(h, one, single));
  }
  SUBCASE("context count must match the projection") {
    const Tensor one[] = {c1};
    CHECK_THROWS_AS(attentional_hidden(h, one, dual), DimensionError);
  }
}

TEST_CASE("multi attend") {
  Rng rng(5);
  AttentionParams p1 = random_attention(3, rng), p2 = random_attention(3, rng);
  OutputProjection proj("attn.Wc", 3, 2);
  testing::randomize(proj.w, rng);
  const Tensor h = random_tensor(1, 3, rng);
  const Tensor seq1 = random_tensor(4, 3, rng);
  const Tensor seq2 = random_tensor(6, 3, rng);
  SUBCASE("midpoints with v_p = 0") {
    p1.v_p.value.set_zero();
    p2.v_p.value.set_zero();
    const MultiAttendResult r = multi_attend(h, seq1, seq2, p1, p2, proj, 10);
    CHECK(r.trace1.position == 2.0);
    CHECK(r.trace2.position == 3.0);
  }
  SUBCASE("constant second sequence aligns uniformly") {
    Tensor flat(6, 3);
    for (std::size_t s = 0; s < 6; ++s)
      for (std::size_t j = 0; j < 3; ++j) flat(s, j) = 0.1 * static_cast<Real>(j + 1);
    const MultiAttendResult r = multi_attend(h, seq1, flat, p1, p2, proj, 10);
    for (Real a : r.trace2.align) CHECK(std::abs(a - 1.0 / 6.0) < 1e-15);
  }
  SUBCASE("equals two single-source computations") {
    const MultiAttendResult r = multi_attend(h, seq1, seq2, p1, p2, proj, 2);
    const Real pos1 = predict_position(h, p1, 4), pos2 = predict_position(h, p2, 6);
    const AttentionTrace t1 = window_weights(h, seq1, pos1, 2, p1.w_a.value);
    const AttentionTrace t2 = window_weights(h, seq2, pos2, 2, p2.w_a.value);
    const Tensor cs[] = {context_vector(t1, seq1), context_vector(t2, seq2)};
    const Tensor expect = attentional_hidden(h, cs, proj);
    CHECK(testing::max_abs_diff(r.h_tilde, expect) < 1e-12);
    CHECK(r.trace1.weights == t1.weights);
    CHECK(r.trace2.first == t2.first);
  }
}

TEST_CASE("batched attend matches the per-example functions") {
  Rng rng(6);
  AttentionParams p = random_attention(3, rng);
  const std::vector<Tensor> seqs = {random_tensor(5, 3, rng), random_tensor(2, 3, rng)};
  const EncoderOutput enc = fake_encoder(seqs);
  const Tensor h = random_tensor(2, 3, rng);
  std::vector<AttentionTrace> traces;
  const Var ctx = attend(nullptr, make_var(h), enc, p, 1, &traces);
  REQUIRE(traces.size() == 2);
  for (std::size_t b = 0; b < 2; ++b) {
    CHECK(enc.top_seq(b) == seqs[b]);
    const Tensor hb = Tensor::row(h.row_span(b));
    const Real pos = predict_position(hb, p, seqs[b].rows());
    const AttentionTrace t = window_weights(hb, seqs[b], pos, 1, p.w_a.value);
    const Tensor c = context_vector(t, seqs[b]);
    CHECK(traces[b].position == pos);
    for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(ctx->value(b, j) - c[j]) < 1e-15);
  }
}

TEST_CASE("attention gradients flow through the predicted position") {
  Rng rng(7);
  for (int radius : {10, 2}) {
    AttentionParams p = random_attention(4, rng);
    OutputProjection proj("attn.Wc", 4, 1);
    testing::randomize(proj.w, rng);
    Parameter h("h", 2, 4), s0("s0", 2, 4), s1("s1", 2, 4), s2("s2", 2, 4), s3("s3", 2, 4),
        s4("s4", 2, 4);
    std::vector<Parameter*> steps = {&s0, &s1, &s2, &s3, &s4};
    for (Parameter* q : steps) testing::randomize(*q, rng);
    testing::randomize(h, rng);
    std::vector<Parameter*> inputs = {&h};
    inputs.insert(inputs.end(), steps.begin(), steps.end());
    std::vector<Parameter*> weights = p.parameters();
    weights.push_back(&proj.w);
    const Real err = testing::tape_grad_error(
        [&](Tape* t, std::vector<Var>& in) {
          EncoderOutput enc;
          enc.lengths = {5, 3};
          enc.top_steps.assign(in.begin() + 1, in.end());
          const Var c = attend(t, in[0], enc, p, radius);
          return std::vector<Var>{attentional_hidden(t, in[0], {c}, proj)};
        },
        weights, inputs, 8);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("randomized attention invariants") {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t S = 1 + rng.below(40);
    const int radius = 1 + static_cast<int>(rng.below(10));
    const std::size_t d = 1 + rng.below(4);
    AttentionParams p = random_attention(d, rng, 2.0);
    const Tensor h = random_tensor(1, d, rng);
    const Tensor seq = random_tensor(S, d, rng);
    const Real pos = predict_position(h, p, S);
    CHECK(pos > 0.0);
    CHECK(pos < static_cast<Real>(S));
    const AttentionTrace t = window_weights(h, seq, pos, radius, p.w_a.value);
    Real sum = 0.0;
    for (std::size_t k = 0; k < t.window_size(); ++k) {
      sum += t.align[k];
      CHECK(t.weights[k] <= t.align[k]);
      CHECK(t.weights[k] >= 0.0);
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
    CHECK(t.last < S);
  }
}
