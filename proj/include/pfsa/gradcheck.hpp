#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pfsa/model.hpp"
#include "pfsa/tensor.hpp"

namespace pfsa {

/// |a − n| / max(|a|, |n|, 1): relative for entries above one in magnitude, absolute below.
double gradient_error(double analytic, double numeric) noexcept;

/// Largest gradient_error over all entries.
double max_gradient_error(const Tensor& analytic, const Tensor& numeric);

/// Central differences of a scalar function, one coordinate at a time.
Tensor central_difference(const std::function<double(const Tensor&)>& fn, const Tensor& at, double step);

struct GradcheckOptions {
  std::size_t trials = 100;  // random tensors per layer
  std::uint64_t seed = 1;
  double step = 1e-5;
  double layer_threshold = 1e-5;
  double model_threshold = 1e-4;
  /// Layer whose analytic gradient is negated before comparison; a negative control.
  std::string inject_fault;
};

struct GradcheckEntry {
  std::string layer;
  double max_error = 0.0;
  double threshold = 0.0;
  bool passed = false;
};

/// The small two-stage network used for the end-to-end check.
ModelConfig gradcheck_model_config();

/// Finite-difference check of every differentiable layer and of the tiny end-to-end model.
/// One entry per layer, ending with "model".
std::vector<GradcheckEntry> run_gradcheck(const GradcheckOptions& options);

}  // namespace pfsa
