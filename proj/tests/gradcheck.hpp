#pragma once

// Central finite-difference oracle for reverse-mode gradients. It evaluates
// the loss with a non-recording graph at perturbed points, so it shares no
// code with the backward rules it checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "vagnmt/tensor.hpp"

namespace vagnmt::testing {

using TensorD = ad::BasicTensor<double>;
using GraphD = ad::BasicGraph<double>;
using LossFn = std::function<TensorD(GraphD&)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // description of the worst entry

  bool ok(double tol) const { return max_rel_error <= tol; }
};

// Relative error with a denominator floor, so entries whose true gradient is
// numerically zero are judged on absolute error instead.
inline double relative_error(double analytic, double numeric, double floor = 1e-2) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline double finite_difference(TensorD& leaf, std::size_t i, const LossFn& loss, double step) {
  auto data = leaf.mutable_data();
  const double saved = data[i];
  data[i] = saved + step;
  GraphD plus(ad::GradMode::kNoGrad);
  const double f_plus = loss(plus).item();
  data[i] = saved - step;
  GraphD minus(ad::GradMode::kNoGrad);
  const double f_minus = loss(minus).item();
  data[i] = saved;
  return (f_plus - f_minus) / (2.0 * step);
}

// Checks every element of every leaf. Leaves must have requires_grad set.
inline GradCheckReport check_gradients(std::vector<TensorD> leaves, const LossFn& loss,
                                       double step = 1e-3) {
  for (auto& leaf : leaves) leaf.zero_grad();
  {
    GraphD g;
    g.backward(loss(g));
  }
  GradCheckReport report;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    auto& leaf = leaves[l];
    const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    for (std::size_t i = 0; i < leaf.size(); ++i) {
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double n = finite_difference(leaf, i, loss, step);
      const double err = relative_error(a, n);
      ++report.checked;
      if (err > report.max_rel_error || report.worst.empty()) {
        if (err >= report.max_rel_error) {
          report.max_rel_error = err;
          std::ostringstream out;
          out << "leaf " << l << " element " << i << ": analytic " << a << " numeric " << n;
          report.worst = out.str();
        }
      }
    }
  }
  return report;
}

}  // namespace vagnmt::testing
