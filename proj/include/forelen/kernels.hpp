#pragma once

// Data-parallel inner loops. Each kernel has a serial reference path and an
// OpenMP path; both reduce in index order, so their results are bit-identical
// and the serial path stays the test oracle for the parallel one.

#include <cstddef>
#include <exception>
#include <span>
#include <vector>

#include "forelen/head.hpp"
#include "forelen/pooling.hpp"

namespace forelen {

enum class Execution { kSerial, kParallel };

Execution default_execution();
void set_default_execution(Execution exec);

// Pooled feature of every record's prompt.
std::vector<RealVector> pool_features(const Dataset& dataset, PoolingMode mode, double alpha,
                                      Execution exec = default_execution());

namespace detail {

template <typename Fn>
void run_indexed(std::size_t count, Execution exec, Fn&& body) {
  if (exec == Execution::kSerial) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::exception_ptr error;
  const auto n = static_cast<std::ptrdiff_t>(count);
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(forelen_kernel_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

// Mean of per-example gradients: (1/count) Σ_i grad(i), summed in index
// order. `grad(i)` must be safe to call concurrently for distinct i.
template <typename GradFn>
HeadGradients mean_gradient(std::size_t count, std::size_t classes, std::size_t dim,
                            GradFn&& grad, Execution exec = default_execution()) {
  HeadGradients total = HeadGradients::zeros(classes, dim);
  if (count == 0) return total;
  const double scale = 1.0 / static_cast<double>(count);
  if (exec == Execution::kSerial) {
    for (std::size_t i = 0; i < count; ++i) total.accumulate(grad(i), scale);
    return total;
  }
  std::vector<HeadGradients> slots(count);
  detail::run_indexed(count, exec, [&](std::size_t i) { slots[i] = grad(i); });
  for (const auto& g : slots) total.accumulate(g, scale);
  return total;
}

// Static-head batch gradient over features[indices[i]] with matching lengths.
HeadGradients batch_gradient(const HeadParams& params, const BinLayout& bins,
                             std::span<const RealVector> features,
                             std::span<const double> lengths,
                             std::span<const std::size_t> indices,
                             Execution exec = default_execution());

// Head predictions (tokens, clamped to >= 1) for every feature vector.
std::vector<double> predict_all(const HeadParams& params, const BinLayout& bins,
                                std::span<const RealVector> features,
                                Execution exec = default_execution());

}  // namespace forelen
