#include "zengram/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace zengram::num {

std::vector<Array> tape_gradients(const LossBuilder& loss, std::span<const Array> params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.parameter(p));
  const Var out = loss(tape, leaves);
  tape.backward(out);
  std::vector<Array> grads;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Array& g = tape.grad(leaves[i]);
    grads.push_back(g.size() ? g : Array(params[i].shape()));
  }
  return grads;
}

double evaluate_loss(const LossBuilder& loss, std::span<const Array> params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.constant(p));
  return loss(tape, leaves).value()[0];
}

GradCheckResult compare_gradients(const LossBuilder& loss, std::vector<Array>& params,
                                  std::span<const Array> analytic, double eps, std::size_t max_coords,
                                  std::uint64_t seed) {
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t p = 0; p < params.size(); ++p)
    for (std::size_t i = 0; i < params[p].size(); ++i) coords.emplace_back(p, i);
  if (coords.size() > max_coords) {
    Rng rng(seed);
    rng.shuffle(std::span(coords));
    coords.resize(max_coords);
    std::sort(coords.begin(), coords.end());
  }

  GradCheckResult result;
  for (const auto& [p, i] : coords) {
    const double saved = params[p][i];
    params[p][i] = saved + eps;
    const double up = evaluate_loss(loss, params);
    params[p][i] = saved - eps;
    const double down = evaluate_loss(loss, params);
    params[p][i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double a = analytic[p][i];
    const double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    if (rel >= result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_param = p;
      result.worst_index = i;
      result.worst_analytic = a;
      result.worst_numeric = numeric;
    }
    ++result.coords_checked;
  }
  return result;
}

GradCheckResult grad_check(const LossBuilder& loss, std::vector<Array>& params, double eps,
                           std::size_t max_coords, std::uint64_t seed) {
  const auto analytic = tape_gradients(loss, params);
  return compare_gradients(loss, params, analytic, eps, max_coords, seed);
}

}  // namespace zengram::num
