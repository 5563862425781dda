#include "msnmt/combiner.hpp"

#include <cmath>

#include "msnmt/errors.hpp"

namespace msnmt {

namespace {

void check_pair(const LayerState& s1, const LayerState& s2, std::size_t hidden, const char* op) {
  const Tensor& h1 = s1.h->value;
  const Tensor& h2 = s2.h->value;
  if (!h1.same_shape(h2) || !s1.c->value.same_shape(h1) || !s2.c->value.same_shape(h2) ||
      h1.cols() != hidden) {
    throw DimensionError(std::string(op) + ": states " + h1.shape_str() + " and " +
                         h2.shape_str() + " incompatible with hidden size " +
                         std::to_string(hidden));
  }
}

}  // namespace

ChildSumCombinerParams::ChildSumCombinerParams(const std::string& prefix, std::size_t hidden)
    : w1_i(prefix + ".W1_i", hidden, hidden),
      w2_i(prefix + ".W2_i", hidden, hidden),
      w1_f(prefix + ".W1_f", hidden, hidden),
      w2_f(prefix + ".W2_f", hidden, hidden),
      w1_o(prefix + ".W1_o", hidden, hidden),
      w2_o(prefix + ".W2_o", hidden, hidden),
      w1_u(prefix + ".W1_u", hidden, hidden),
      w2_u(prefix + ".W2_u", hidden, hidden) {}

LayerState basic_combine(Tape* tape, const LayerState& s1, const LayerState& s2,
                         BasicCombinerParams& p) {
  check_pair(s1, s2, p.w_c.value.rows(), "basic_combine");
  Var joined = concat_cols(tape, {s1.h, s2.h});
  Var h = tanh(tape, linear(tape, joined, p.w_c));
  Var c = add(tape, s1.c, s2.c);
  return {h, c};
}

LayerState childsum_combine(Tape* tape, const LayerState& s1, const LayerState& s2,
                            ChildSumCombinerParams& p) {
  const std::size_t d = p.w1_i.value.rows();
  check_pair(s1, s2, d, "childsum_combine");
  const Tensor& h1 = s1.h->value;
  const Tensor& h2 = s2.h->value;
  const std::size_t batch = h1.rows();

  // Products are summed after the fact, and the forget terms grouped, so that
  // swapping the encoders together with their weights is exact.
  auto pre = [&](Parameter& a, Parameter* b) {
    Tensor out, other;
    gemm(h1, false, a.value, true, out);
    if (b != nullptr) {
      gemm(h2, false, b->value, true, other);
      out += other;
    }
    return out;
  };
  Tensor i = ewise(Ewise::Sigmoid, pre(p.w1_i, &p.w2_i));
  Tensor o = ewise(Ewise::Sigmoid, pre(p.w1_o, &p.w2_o));
  Tensor u = ewise(Ewise::Tanh, pre(p.w1_u, &p.w2_u));
  Tensor f1 = ewise(Ewise::Sigmoid, pre(p.w1_f, nullptr));
  Tensor f2;
  gemm(h2, false, p.w2_f.value, true, f2);
  f2 = ewise(Ewise::Sigmoid, f2);

  Tensor c(batch, d);
  Tensor tc(batch, d);
  Tensor h(batch, d);
  for (std::size_t k = 0; k < c.size(); ++k) {
    c[k] = i[k] * u[k] + (f1[k] * s1.c->value[k] + f2[k] * s2.c->value[k]);
    tc[k] = std::tanh(c[k]);
    h[k] = o[k] * tc[k];
  }

  LayerState out{make_var(std::move(h)), make_var(std::move(c))};
  if (tape != nullptr) {
    tape->record([s1, s2, out, &p, i = std::move(i), o = std::move(o), u = std::move(u),
                  f1 = std::move(f1), f2 = std::move(f2), tc = std::move(tc), batch, d] {
      if (!out.h->has_grad() && !out.c->has_grad()) return;
      Tensor di(batch, d), df1(batch, d), df2(batch, d), dout(batch, d), du(batch, d);
      Tensor& dc1 = s1.c->grad_ref();
      Tensor& dc2 = s2.c->grad_ref();
      for (std::size_t k = 0; k < di.size(); ++k) {
        const Real dh = out.h->has_grad() ? out.h->grad[k] : 0.0;
        const Real dc = (out.c->has_grad() ? out.c->grad[k] : 0.0) +
                        dh * o[k] * (1.0 - tc[k] * tc[k]);
        dout[k] = dh * tc[k] * o[k] * (1.0 - o[k]);
        di[k] = dc * u[k] * i[k] * (1.0 - i[k]);
        du[k] = dc * i[k] * (1.0 - u[k] * u[k]);
        df1[k] = dc * s1.c->value[k] * f1[k] * (1.0 - f1[k]);
        df2[k] = dc * s2.c->value[k] * f2[k] * (1.0 - f2[k]);
        dc1[k] += dc * f1[k];
        dc2[k] += dc * f2[k];
      }
      Tensor& dh1 = s1.h->grad_ref();
      Tensor& dh2 = s2.h->grad_ref();
      auto back = [](const Tensor& dpre, const Tensor& hin, Parameter& w, Tensor& dh) {
        gemm(dpre, true, hin, false, w.grad, 1.0, true);
        gemm(dpre, false, w.value, false, dh, 1.0, true);
      };
      back(di, s1.h->value, p.w1_i, dh1);
      back(di, s2.h->value, p.w2_i, dh2);
      back(dout, s1.h->value, p.w1_o, dh1);
      back(dout, s2.h->value, p.w2_o, dh2);
      back(du, s1.h->value, p.w1_u, dh1);
      back(du, s2.h->value, p.w2_u, dh2);
      back(df1, s1.h->value, p.w1_f, dh1);
      back(df2, s2.h->value, p.w2_f, dh2);
    });
  }
  return out;
}

CombinerLayers::CombinerLayers(CombineMethod m, std::size_t layers, std::size_t hidden)
    : method(m) {
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string prefix = "comb.l" + std::to_string(l);
    if (m == CombineMethod::Basic) {
      basic.emplace_back(prefix, hidden);
    } else {
      childsum.emplace_back(prefix, hidden);
    }
  }
}

std::vector<Parameter*> CombinerLayers::parameters() {
  std::vector<Parameter*> out;
  for (auto& b : basic)
    for (Parameter* p : b.parameters()) out.push_back(p);
  for (auto& c : childsum)
    for (Parameter* p : c.parameters()) out.push_back(p);
  return out;
}

StateStack combine_stacks(Tape* tape, const StateStack& e1, const StateStack& e2,
                          CombinerLayers& params) {
  if (e1.size() != e2.size() || e1.size() != params.layers()) {
    throw DimensionError("combine_stacks: layer counts " + std::to_string(e1.size()) + ", " +
                         std::to_string(e2.size()) + " and " + std::to_string(params.layers()) +
                         " combiners disagree");
  }
  StateStack out;
  out.reserve(e1.size());
  for (std::size_t l = 0; l < e1.size(); ++l) {
    if (params.method == CombineMethod::Basic) {
      out.push_back(basic_combine(tape, e1[l], e2[l], params.basic[l]));
    } else {
      out.push_back(childsum_combine(tape, e1[l], e2[l], params.childsum[l]));
    }
  }
  return out;
}

}  // namespace msnmt
