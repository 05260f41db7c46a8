#include "forelen/kernels.hpp"

#include <algorithm>
#include <atomic>

#include "forelen/error.hpp"

namespace forelen {

namespace {
std::atomic<Execution> g_default{Execution::kParallel};
}

Execution default_execution() { return g_default.load(); }
void set_default_execution(Execution exec) { g_default.store(exec); }

std::vector<RealVector> pool_features(const Dataset& dataset, PoolingMode mode, double alpha,
                                      Execution exec) {
  std::vector<RealVector> out(dataset.size());
  detail::run_indexed(dataset.size(), exec, [&](std::size_t i) {
    out[i] = pool(dataset[i].prompt, mode, alpha).vector;
  });
  return out;
}

HeadGradients batch_gradient(const HeadParams& params, const BinLayout& bins,
                             std::span<const RealVector> features,
                             std::span<const double> lengths,
                             std::span<const std::size_t> indices, Execution exec) {
  require(features.size() == lengths.size(), ErrorKind::kDomain,
          "feature and length counts differ");
  return mean_gradient(
      indices.size(), params.classes(), params.input_dim(),
      [&](std::size_t i) {
        const std::size_t idx = indices[i];
        return loss_gradients(params, features[idx], lengths[idx], bins);
      },
      exec);
}

std::vector<double> predict_all(const HeadParams& params, const BinLayout& bins,
                                std::span<const RealVector> features, Execution exec) {
  std::vector<double> out(features.size());
  detail::run_indexed(features.size(), exec, [&](std::size_t i) {
    out[i] = std::max(1.0, predicted_length(forward(params, features[i], bins), params));
  });
  return out;
}

}  // namespace forelen
