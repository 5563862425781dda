#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "msnmt/numerics.hpp"
#include "msnmt/rng.hpp"
#include "msnmt/tape.hpp"

namespace testing {

using msnmt::Real;
using msnmt::Tensor;

inline Tensor random_tensor(std::size_t rows, std::size_t cols, msnmt::Rng& rng, Real lo = -1.0,
                            Real hi = 1.0) {
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline void randomize(msnmt::Parameter& p, msnmt::Rng& rng, Real range = 1.0) {
  p.value = random_tensor(p.value.rows(), p.value.cols(), rng, -range, range);
  p.zero_grad();
}

// Same measure as the gradcheck command.
inline Real max_rel_err(const Tensor& analytic, const Tensor& numeric) {
  Real worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const Real a = analytic[i], n = numeric[i];
    worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-3}));
  }
  return worst;
}

inline Real max_abs_diff(const Tensor& a, const Tensor& b) {
  Real worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

inline Real dot(const Tensor& a, const Tensor& b) {
  Real s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Worst relative error between tape gradients and central differences for
// loss = sum_k <out_k, r_k> with random r_k. `inputs` enter `build` as leaf
// activations; `weights` are used by it directly.
template <class Build>
Real tape_grad_error(Build build, std::vector<msnmt::Parameter*> weights,
                     std::vector<msnmt::Parameter*> inputs, std::uint64_t seed) {
  using msnmt::Var;
  auto run = [&](msnmt::Tape* tape, std::vector<Var>& leaves) {
    leaves.clear();
    for (auto* p : inputs) leaves.push_back(msnmt::make_var(p->value));
    return build(tape, leaves);
  };
  std::vector<msnmt::Parameter*> all = weights;
  all.insert(all.end(), inputs.begin(), inputs.end());
  for (auto* p : all) p->zero_grad();
  msnmt::Rng rng(seed);
  msnmt::Tape tape;
  std::vector<Var> leaves;
  const std::vector<Var> outs = run(&tape, leaves);
  std::vector<Tensor> rs;
  for (const auto& o : outs) {
    rs.push_back(random_tensor(o->value.rows(), o->value.cols(), rng));
    o->grad_ref() += rs.back();
  }
  tape.backward();
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (leaves[i]->has_grad()) inputs[i]->grad = leaves[i]->grad;
  }
  const auto num = msnmt::finite_difference_grad(
      [&] {
        std::vector<Var> l;
        const auto o = run(nullptr, l);
        Real s = 0.0;
        for (std::size_t k = 0; k < o.size(); ++k) s += dot(o[k]->value, rs[k]);
        return s;
      },
      all);
  Real worst = 0.0;
  for (std::size_t k = 0; k < all.size(); ++k) worst = std::max(worst, max_rel_err(all[k]->grad, num[k]));
  return worst;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("msnmt-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace testing
