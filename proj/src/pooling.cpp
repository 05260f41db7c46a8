#include "forelen/pooling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "forelen/error.hpp"

namespace forelen {

PoolingMode parse_pooling(std::string_view name) {
  if (name == "egtp") return PoolingMode::kEgtp;
  if (name == "mean") return PoolingMode::kMean;
  if (name == "max") return PoolingMode::kMax;
  if (name == "last") return PoolingMode::kLast;
  fail(ErrorKind::kUsage, "unknown pooling mode '" + std::string(name) + "'");
}

std::string_view pooling_name(PoolingMode mode) {
  switch (mode) {
    case PoolingMode::kEgtp: return "egtp";
    case PoolingMode::kMean: return "mean";
    case PoolingMode::kMax: return "max";
    case PoolingMode::kLast: return "last";
  }
  return "unknown";
}

namespace {

RealVector weighted_rows(const Matrix& states, const ProbVector& w) {
  RealVector out(states.cols, 0.0);
  for (std::size_t t = 0; t < states.rows; ++t) {
    const double wt = w[t];
    auto row = states.row(t);
    for (std::size_t j = 0; j < states.cols; ++j) out[j] += wt * row[j];
  }
  return out;
}

ProbVector uniform(std::size_t n) {
  return ProbVector(std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

}  // namespace

PooledFeature egtp_pool(const HiddenSequence& seq, double alpha) {
  seq.validate();
  require(std::isfinite(alpha) && alpha > 0.0, ErrorKind::kDomain, "alpha must be positive");
  PooledFeature f{.vector = {}, .weights = softmax(seq.entropies, alpha)};
  f.vector = weighted_rows(seq.states, f.weights);
  return f;
}

PooledFeature baseline_pool(const HiddenSequence& seq, PoolingMode mode) {
  seq.validate();
  const std::size_t n = seq.tokens();
  const std::size_t d = seq.dim();
  switch (mode) {
    case PoolingMode::kMean: {
      PooledFeature f{.vector = {}, .weights = uniform(n)};
      // Sum then divide, so constant-entropy EGTP and mean agree to rounding.
      f.vector.assign(d, 0.0);
      for (std::size_t t = 0; t < n; ++t) {
        auto row = seq.states.row(t);
        for (std::size_t j = 0; j < d; ++j) f.vector[j] += row[j];
      }
      for (double& x : f.vector) x /= static_cast<double>(n);
      return f;
    }
    case PoolingMode::kMax: {
      PooledFeature f{.vector = {}, .weights = uniform(n), .affine = false};
      auto first = seq.states.row(0);
      f.vector.assign(first.begin(), first.end());
      for (std::size_t t = 1; t < n; ++t) {
        auto row = seq.states.row(t);
        for (std::size_t j = 0; j < d; ++j) f.vector[j] = std::max(f.vector[j], row[j]);
      }
      return f;
    }
    case PoolingMode::kLast: {
      std::vector<double> w(n, 0.0);
      w[n - 1] = 1.0;
      auto last = seq.states.row(n - 1);
      return PooledFeature{.vector = RealVector(last.begin(), last.end()),
                           .weights = ProbVector(std::move(w))};
    }
    case PoolingMode::kEgtp:
      break;
  }
  fail(ErrorKind::kUsage, "baseline_pool accepts mean, max or last");
}

PooledFeature pool(const HiddenSequence& seq, PoolingMode mode, double alpha) {
  return mode == PoolingMode::kEgtp ? egtp_pool(seq, alpha) : baseline_pool(seq, mode);
}

PrefixPooler::PrefixPooler(std::size_t dim, double alpha) : alpha_(alpha), acc_(dim, 0.0) {
  require(std::isfinite(alpha) && alpha > 0.0, ErrorKind::kDomain, "alpha must be positive");
}

void PrefixPooler::push(std::span<const double> state, double entropy) {
  require(state.size() == acc_.size(), ErrorKind::kDomain, "prefix state has wrong dimension");
  const double scaled = entropy / alpha_;
  if (count_ == 0 || scaled > shift_) {
    const double rescale = count_ == 0 ? 0.0 : std::exp(shift_ - scaled);
    for (double& a : acc_) a *= rescale;
    weight_sum_ *= rescale;
    shift_ = scaled;
  }
  const double w = std::exp(scaled - shift_);
  weight_sum_ += w;
  for (std::size_t j = 0; j < acc_.size(); ++j) acc_[j] += w * state[j];
  ++count_;
}

void PrefixPooler::current(std::span<double> out) const {
  require(out.size() == acc_.size(), ErrorKind::kDomain, "prefix output has wrong dimension");
  if (count_ == 0) {
    std::fill(out.begin(), out.end(), 0.0);
    return;
  }
  for (std::size_t j = 0; j < acc_.size(); ++j) out[j] = acc_[j] / weight_sum_;
}

RealVector token_importance(const HiddenSequence& seq, const HeadParams& head,
                            const BinLayout& bins, double y_true, double alpha) {
  require(y_true >= 1.0, ErrorKind::kDomain, "true length must be at least 1");
  require(head.input_dim() == seq.dim(), ErrorKind::kDomain,
          "head input dimension does not match hidden dimension");
  const PooledFeature pooled = egtp_pool(seq, alpha);
  const HeadOutput out = forward(head, pooled.vector, bins);
  const double target = to_target(y_true, head.transform);
  // dL/du_i = -2 (y - y_hat) * p_i (c_i - y_hat); dL/dh = Wᵀ dL/du.
  const double outer = -2.0 * (target - out.y_hat);
  RealVector grad(seq.dim(), 0.0);
  for (std::size_t i = 0; i < head.classes(); ++i) {
    const double du = outer * out.p_hat[i] * (bins.centers[i] - out.y_hat);
    auto w = head.weights.row(i);
    for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += w[j] * du;
  }
  double norm = 0.0;
  for (double g : grad) norm += g * g;
  norm = std::sqrt(norm);
  RealVector importance(seq.tokens());
  for (std::size_t t = 0; t < importance.size(); ++t) importance[t] = pooled.weights[t] * norm;
  return importance;
}

EntropyImportanceReport entropy_importance_report(const Dataset& dataset, const HeadParams& head,
                                                  const BinLayout& bins, double alpha,
                                                  std::size_t num_bins) {
  require(!dataset.empty(), ErrorKind::kUsage, "attribution needs a non-empty dataset");
  require(num_bins >= 1, ErrorKind::kUsage, "entropy bin count must be positive");

  // Fixed reduction order: records sorted by id.
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dataset[a].id < dataset[b].id; });

  std::vector<RealVector> per_record(dataset.size());
  const auto count = static_cast<std::ptrdiff_t>(order.size());
  std::exception_ptr error;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      const auto& rec = dataset[order[static_cast<std::size_t>(i)]];
      per_record[static_cast<std::size_t>(i)] =
          token_importance(rec.prompt, head, bins, rec.length, alpha);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);

  std::vector<double> entropies, importances;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& rec = dataset[order[i]];
    entropies.insert(entropies.end(), rec.prompt.entropies.begin(), rec.prompt.entropies.end());
    importances.insert(importances.end(), per_record[i].begin(), per_record[i].end());
  }

  return summarize_entropy_importance(entropies, importances, num_bins);
}

EntropyImportanceReport summarize_entropy_importance(std::span<const double> entropies,
                                                     std::span<const double> importances,
                                                     std::size_t num_bins) {
  require(num_bins >= 1, ErrorKind::kUsage, "entropy bin count must be positive");
  EntropyImportanceReport report;
  report.tokens = entropies.size();
  report.pearson_r = pearson(entropies, importances);
  report.entropy_min = *std::min_element(entropies.begin(), entropies.end());
  report.entropy_max = *std::max_element(entropies.begin(), entropies.end());
  const double width = (report.entropy_max - report.entropy_min) / static_cast<double>(num_bins);
  std::vector<double> sums(num_bins, 0.0);
  report.bin_counts.assign(num_bins, 0);
  for (std::size_t i = 0; i < entropies.size(); ++i) {
    auto b = static_cast<std::size_t>((entropies[i] - report.entropy_min) / width);
    b = std::min(b, num_bins - 1);
    sums[b] += importances[i];
    ++report.bin_counts[b];
  }
  report.bin_mean_importance.resize(num_bins);
  for (std::size_t b = 0; b < num_bins; ++b) {
    report.bin_mean_importance[b] = report.bin_counts[b] == 0
                                        ? std::numeric_limits<double>::quiet_NaN()
                                        : sums[b] / static_cast<double>(report.bin_counts[b]);
  }
  return report;
}

}  // namespace forelen
