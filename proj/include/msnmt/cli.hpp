#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "msnmt/model.hpp"

namespace msnmt {

// Runs one `msnmt <subcommand> ...` invocation and returns its exit status:
// 0 ok, 1 validation/usage, 2 I/O, 3 numeric, 4 compatibility.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

struct GradcheckOptions {
  ModelConfig model;          // vocabulary sizes and dims as given
  std::size_t length = 5;     // longest sequence (T)
  std::size_t batch = 2;
  Real init_range = 0.3;
  Real epsilon = 1e-5;
  Real tolerance = 1e-4;
  std::string corrupt;        // parameter whose analytic gradient is perturbed
  std::uint64_t seed = 1;
};

struct GradcheckEntry {
  std::string name;
  std::size_t size = 0;
  Real worst = 0.0;  // max over scalars of |a - n| / max(|a|, |n|, 1e-3)
};

struct GradcheckResult {
  std::vector<GradcheckEntry> entries;
  Real worst() const;
  std::vector<std::string> failures(Real tolerance) const;
};

GradcheckResult run_gradcheck(const GradcheckOptions& opts);

}  // namespace msnmt
