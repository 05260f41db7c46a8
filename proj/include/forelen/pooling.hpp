#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "forelen/head.hpp"
#include "forelen/sequence.hpp"

namespace forelen {

enum class PoolingMode { kEgtp, kMean, kMax, kLast };

PoolingMode parse_pooling(std::string_view name);
std::string_view pooling_name(PoolingMode mode);

struct PooledFeature {
  RealVector vector;
  ProbVector weights;
  // False for max pooling, where `vector` is not weightsᵀ·states.
  bool affine = true;
};

// Entropy-guided pooling: w = softmax(H / alpha), vector = Σ w_t h_t.
PooledFeature egtp_pool(const HiddenSequence& seq, double alpha = 1.0);

// kMean, kMax or kLast; kEgtp is rejected with a usage error.
PooledFeature baseline_pool(const HiddenSequence& seq, PoolingMode mode);

// Dispatches on mode; alpha only matters for kEgtp.
PooledFeature pool(const HiddenSequence& seq, PoolingMode mode, double alpha = 1.0);

// Incremental EGTP over a growing prefix, O(d) per appended token. The running
// accumulators are rescaled whenever the max shift grows, so the result equals
// egtp_pool of the prefix up to rounding.
class PrefixPooler {
 public:
  PrefixPooler(std::size_t dim, double alpha);

  void push(std::span<const double> state, double entropy);
  std::size_t count() const { return count_; }
  // Zero vector while the prefix is empty.
  void current(std::span<double> out) const;

 private:
  double alpha_;
  std::size_t count_ = 0;
  double shift_ = 0.0;
  double weight_sum_ = 0.0;
  std::vector<double> acc_;
};

// I_t = ||d/dh_t (y - y_hat)^2||_2 with y_hat from head.forward(egtp_pool(seq)).
// Entropies, and therefore pooling weights, are held fixed, so the gradient
// through the pool is w_t times the gradient at the pooled vector.
RealVector token_importance(const HiddenSequence& seq, const HeadParams& head,
                            const BinLayout& bins, double y_true, double alpha);

struct EntropyImportanceReport {
  double pearson_r = 0.0;
  double entropy_min = 0.0;
  double entropy_max = 0.0;
  std::vector<double> bin_mean_importance;  // NaN for empty bins
  std::vector<std::size_t> bin_counts;
  std::size_t tokens = 0;
};

// Pearson r and equal-width entropy binning of paired token statistics.
EntropyImportanceReport summarize_entropy_importance(std::span<const double> entropies,
                                                     std::span<const double> importances,
                                                     std::size_t num_bins);

// Pools every (entropy, importance) pair of the prompts in `dataset` and bins
// them into `num_bins` equal-width entropy intervals.
EntropyImportanceReport entropy_importance_report(const Dataset& dataset, const HeadParams& head,
                                                  const BinLayout& bins, double alpha,
                                                  std::size_t num_bins = 5);

}  // namespace forelen
