#pragma once

#include <functional>
#include <vector>

#include "ampattn/tensor.hpp"

namespace ampattn {

/// Scalar-valued function of leaf tensors, rebuilt on a fresh graph per call.
using TensorFn = std::function<Tensor(Graph&, const std::vector<Tensor>&)>;

/// Max over all coordinates of all inputs of
///   |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
/// where numeric is the central difference (f(x+eps) - f(x-eps)) / (2 eps).
/// Callers keep f away from max/relu kinks at the evaluation point.
double grad_check(const TensorFn& f, const std::vector<Tensor>& inputs, double eps = 1e-5);

double grad_check(const TensorFn& f, const Tensor& x, double eps = 1e-5);

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0;
};

/// Finite-difference check of every differentiable op plus the composite
/// building blocks (focal bias, head calibration, attention variants, conv
/// block, batchnorm, BiLSTM) and a tiny end-to-end model. Inputs are seeded
/// and kept away from relu/max/clamp kinks.
std::vector<GradCheckResult> run_gradcheck_suite(uint64_t seed);

}  // namespace ampattn
