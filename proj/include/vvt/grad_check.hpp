#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vvt/tensor.hpp"

namespace vvt {

struct GradCheckReport {
  std::string name;
  double max_rel_err = 0.0;
  int64_t coords_checked = 0;
  int64_t resampled = 0;  // entries redrawn away from ReLU kinks

  bool passed(double tol) const { return max_rel_err <= tol; }
};

/// Relative error floored at magnitude 1, so near-zero gradient pairs are
/// compared absolutely.
inline double grad_rel_err(double a, double b) {
  return std::abs(a - b) / std::max(1.0, std::abs(a) + std::abs(b));
}

/// Central-difference check of `analytic` against `loss`, perturbing every
/// element of every tensor in `inputs` (or a seeded subsample when
/// max_coords_per_tensor caps it). `loss` re-reads the tensors on each call.
template <typename T, typename LossFn>
GradCheckReport finite_difference_check(
    const std::vector<Tensor<T>*>& inputs,
    const std::vector<const Tensor<T>*>& analytic, LossFn&& loss,
    double step = 1e-5, int64_t max_coords_per_tensor = -1,
    uint64_t subsample_seed = 0) {
  VVT_CHECK(inputs.size() == analytic.size(),
            "one analytic gradient per perturbed tensor");
  GradCheckReport rep;
  Rng pick(subsample_seed);
  for (size_t t = 0; t < inputs.size(); ++t) {
    Tensor<T>& x = *inputs[t];
    const Tensor<T>& g = *analytic[t];
    VVT_CHECK(x.same_shape(g), "analytic gradient shape mismatch");
    std::vector<int64_t> coords;
    if (max_coords_per_tensor > 0 && x.numel() > max_coords_per_tensor) {
      coords.reserve(static_cast<size_t>(max_coords_per_tensor));
      for (int64_t i = 0; i < max_coords_per_tensor; ++i)
        coords.push_back(pick.integer(x.numel()));
    } else {
      coords.resize(static_cast<size_t>(x.numel()));
      for (int64_t i = 0; i < x.numel(); ++i) coords[static_cast<size_t>(i)] = i;
    }
    for (int64_t i : coords) {
      const T orig = x[i];
      x[i] = orig + static_cast<T>(step);
      const double lp = loss();
      x[i] = orig - static_cast<T>(step);
      const double lm = loss();
      x[i] = orig;
      const double fd = (lp - lm) / (2.0 * step);
      rep.max_rel_err = std::max(
          rep.max_rel_err, grad_rel_err(fd, static_cast<double>(g[i])));
      ++rep.coords_checked;
    }
  }
  return rep;
}

/// Gaussian sample with entries pushed away from the ReLU kink: any draw with
/// |x| < guard is redrawn (and counted), keeping the finite-difference stencil
/// on one side of the non-differentiable point.
template <typename T>
Tensor<T> sample_smooth_gaussian(int64_t rows, int64_t cols, Rng& rng,
                                 double guard, int64_t* resampled = nullptr) {
  Tensor<T> x({rows, cols});
  for (T& v : x.flat()) {
    double draw = rng.normal();
    while (std::abs(draw) < guard) {
      draw = rng.normal();
      if (resampled) ++*resampled;
    }
    v = static_cast<T>(draw);
  }
  return x;
}

/// Scalar probe loss: sum of outputs weighted by a fixed random matrix.
template <typename T>
double weighted_sum(const Tensor<T>& out, const Tensor<T>& weights) {
  VVT_CHECK(out.same_shape(weights), "probe weight shape mismatch");
  double acc = 0.0;
  for (int64_t i = 0; i < out.numel(); ++i)
    acc += static_cast<double>(out[i]) * static_cast<double>(weights[i]);
  return acc;
}

}  // namespace vvt
