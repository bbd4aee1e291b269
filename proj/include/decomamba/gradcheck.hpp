#pragma once

#include <functional>
#include <string>
#include <vector>

#include "decomamba/tensor.hpp"

namespace dm {

struct GradCheckOptions {
  double eps = 1e-5;        // central-difference step
  double tolerance = 1e-4;  // max relative error
  double floor = 1e-3;      // |a - n| / max(|a|, |n|, floor)
  int64_t max_samples = 256;       // checked elements per input tensor
  int64_t max_param_samples = 16;  // per parameter tensor of a block
  uint64_t seed = 0;
};

/// A tensor the check differentiates with respect to. Perturbations are
/// applied to its storage in place, so parameters captured by the function
/// under test can be listed directly.
struct GradInput {
  std::string name;
  Tensor<double> tensor;
  int64_t max_samples = -1;  // -1: GradCheckOptions::max_samples
};

struct InputReport {
  std::string name;
  int64_t checked = 0;
  double max_rel_error = 0;
  int64_t worst_index = -1;
  double analytic = 0, numeric = 0;  // at worst_index
};

struct CheckReport {
  std::string name;
  bool passed = true;
  double max_rel_error = 0;
  std::string worst_input;
  std::vector<InputReport> inputs;
  std::string message;  // non-empty on errors such as non-finite values
  double seconds = 0;
};

/// Compares the reverse-mode gradient of <f(), R> (R a fixed random
/// projection) with central differences at sampled elements of each input.
CheckReport grad_check(const std::string& name, const std::function<Tensor<double>()>& f,
                       const std::vector<GradInput>& inputs, const GradCheckOptions& options = {});

struct GradCase {
  std::string name;
  std::string kind;  // "primitive", "block" or "loss"
  std::function<CheckReport(const GradCheckOptions&)> run;
};

/// Every primitive, composite block and loss term, with fixed seeds.
std::vector<GradCase> gradcheck_suite();

/// Runs the suite (or the cases whose name contains `filter`), one report line per case.
std::vector<CheckReport> run_gradcheck_suite(const GradCheckOptions& options,
                                             const std::function<void(const std::string&)>& line,
                                             const std::string& filter = "");

}  // namespace dm
