#pragma once

// Central-difference gradient oracle. Independent of the autodiff backward
// path: it only uses forward evaluation of a rebuilt graph.

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "ftv/autodiff.hpp"
#include "ftv/rng.hpp"
#include "ftv/tensor.hpp"

namespace ftv::test {

struct GradCheckResult {
  std::size_t checked = 0;
  std::size_t failed = 0;
  double worst_rel = 0;
  std::string first_failure;

  bool ok() const { return failed == 0 && checked > 0; }
};

// Compares analytic gradients of loss_fn() w.r.t. each leaf against central
// differences. loss_fn must rebuild the graph from the leaves' current values
// on every call. When max_per_leaf > 0, only that many elements per leaf are
// probed (chosen with the supplied seed).
inline GradCheckResult check_gradients(std::vector<Var> leaves,
                                       const std::function<Var()>& loss_fn,
                                       Real eps = 1e-5, Real rtol = 1e-6,
                                       Real atol = 1e-9,
                                       std::size_t max_per_leaf = 0,
                                       std::uint64_t seed = 7) {
  for (auto& l : leaves) l.zero_grad();
  Var loss = loss_fn();
  backward(loss);

  GradCheckResult result;
  Rng rng(seed);
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Var& leaf = leaves[li];
    Tensor analytic = leaf.grad();
    std::vector<std::size_t> picks;
    if (max_per_leaf == 0 || leaf.value().size() <= max_per_leaf) {
      for (std::size_t i = 0; i < leaf.value().size(); ++i) picks.push_back(i);
    } else {
      for (std::size_t k = 0; k < max_per_leaf; ++k)
        picks.push_back(static_cast<std::size_t>(
            rng.next_below(leaf.value().size())));
    }
    for (std::size_t i : picks) {
      const Real orig = leaf.mutable_value()[i];
      leaf.mutable_value()[i] = orig + eps;
      const Real up = loss_fn().value()[0];
      leaf.mutable_value()[i] = orig - eps;
      const Real dn = loss_fn().value()[0];
      leaf.mutable_value()[i] = orig;
      const Real numeric = (up - dn) / (2 * eps);
      const Real a = analytic[i];
      const Real err = std::abs(a - numeric);
      const Real tol = atol + rtol * std::max(std::abs(a), std::abs(numeric));
      const Real rel = err / std::max<Real>(1e-12, std::max(std::abs(a), std::abs(numeric)));
      result.checked++;
      result.worst_rel = std::max(result.worst_rel, rel);
      if (err > tol) {
        result.failed++;
        if (result.first_failure.empty()) {
          result.first_failure = "leaf " + std::to_string(li) + " elem " +
                                 std::to_string(i) + ": analytic " +
                                 std::to_string(a) + " numeric " +
                                 std::to_string(numeric);
        }
      }
    }
  }
  return result;
}

}  // namespace ftv::test
