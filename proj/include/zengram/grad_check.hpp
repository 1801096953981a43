#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "zengram/numerics.hpp"

namespace zengram::num {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Builds a scalar loss on `tape` from the given parameter leaves.
using LossBuilder = std::function<Var(Tape& tape, std::span<const Var> params)>;

/// Tape gradients for every parameter of `loss`.
std::vector<Array> tape_gradients(const LossBuilder& loss, std::span<const Array> params);
double evaluate_loss(const LossBuilder& loss, std::span<const Array> params);

/// Central differences (f(x+eps e) - f(x-eps e)) / 2 eps against `analytic`,
/// with relative error |a - n| / max(1, |a|, |n|). Checks every coordinate
/// when there are at most `max_coords`, else a uniform sample of that many.
GradCheckResult compare_gradients(const LossBuilder& loss, std::vector<Array>& params,
                                  std::span<const Array> analytic, double eps, std::size_t max_coords,
                                  std::uint64_t seed);

GradCheckResult grad_check(const LossBuilder& loss, std::vector<Array>& params, double eps = 1e-5,
                           std::size_t max_coords = 200, std::uint64_t seed = 0);

}  // namespace zengram::num
