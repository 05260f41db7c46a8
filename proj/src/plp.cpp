#include "forelen/plp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "forelen/error.hpp"
#include "forelen/kernels.hpp"

namespace forelen {

PlpExamples make_plp_examples(const Dataset& dataset, double alpha) {
  PlpExamples out;
  for (const auto& rec : dataset) {
    if (!rec.response || rec.response->tokens() == 0) {
      ++out.skipped;
      continue;
    }
    out.examples.push_back({rec.id, egtp_pool(rec.prompt, alpha).vector, *rec.response});
  }
  return out;
}

namespace {

void write_z(std::span<const double> prompt, const PrefixPooler& pooler, RealVector& z) {
  const std::size_t d = prompt.size();
  z.resize(2 * d);
  std::copy(prompt.begin(), prompt.end(), z.begin());
  pooler.current(std::span<double>(z.data() + d, d));
}

void check_example(const PlpExample& ex) {
  require(ex.total() >= 1, ErrorKind::kDomain, "PLP example " + ex.id + " has no response");
  require(ex.generated.dim() == ex.prompt_feature.size(), ErrorKind::kDomain,
          "PLP example " + ex.id + " prompt and response dimensions differ");
}

// Visits z_t for each requested prefix length in ascending order.
template <typename Visit>
void walk_steps(const PlpExample& ex, double alpha, std::span<const std::size_t> steps,
                Visit&& visit) {
  PrefixPooler pooler(ex.generated.dim(), alpha);
  RealVector z;
  std::size_t fed = 0;
  for (std::size_t t : steps) {
    require(t < ex.total(), ErrorKind::kDomain, "prefix length beyond the response");
    while (fed < t) {
      pooler.push(ex.generated.states.row(fed), ex.generated.entropies[fed]);
      ++fed;
    }
    write_z(ex.prompt_feature, pooler, z);
    visit(t, z);
  }
}

std::vector<std::size_t> all_steps(std::size_t total) {
  std::vector<std::size_t> steps(total);
  std::iota(steps.begin(), steps.end(), std::size_t{0});
  return steps;
}

}  // namespace

RealVector aggregate(std::span<const double> prompt_feature, const HiddenSequence& generated,
                     std::size_t prefix_len, double alpha) {
  const std::size_t d = prompt_feature.size();
  require(prefix_len <= generated.tokens(), ErrorKind::kDomain, "prefix longer than response");
  require(prefix_len == 0 || generated.dim() == d, ErrorKind::kDomain,
          "prompt feature and generated states differ in dimension");
  RealVector z(2 * d, 0.0);
  std::copy(prompt_feature.begin(), prompt_feature.end(), z.begin());
  if (prefix_len > 0) {
    HiddenSequence prefix;
    prefix.states = Matrix(prefix_len, d);
    std::copy_n(generated.states.data.begin(), prefix_len * d, prefix.states.data.begin());
    prefix.entropies.assign(generated.entropies.begin(),
                            generated.entropies.begin() + static_cast<std::ptrdiff_t>(prefix_len));
    const auto g = egtp_pool(prefix, alpha).vector;
    std::copy(g.begin(), g.end(), z.begin() + static_cast<std::ptrdiff_t>(d));
  }
  return z;
}

std::uint32_t remaining_target(std::size_t total, std::size_t prefix_len) {
  require(prefix_len < total, ErrorKind::kDomain,
          "step " + std::to_string(prefix_len) + " is not before the end of a " +
              std::to_string(total) + "-token response");
  return static_cast<std::uint32_t>(total - prefix_len);
}

PlpLoss plp_sequence_loss(const PlpExample& example, const HeadParams& params,
                          const BinLayout& bins, double alpha,
                          std::span<const std::size_t> prefix_lengths,
                          const FeatureScaler* scaler) {
  check_example(example);
  require(params.input_dim() == 2 * example.prompt_feature.size(), ErrorKind::kDomain,
          "PLP head input must be twice the hidden dimension");
  std::vector<std::size_t> owned;
  if (prefix_lengths.empty()) {
    owned = all_steps(example.total());
    prefix_lengths = owned;
  }
  PlpLoss out;
  out.grads = HeadGradients::zeros(params.classes(), params.input_dim());
  const double scale = 1.0 / static_cast<double>(prefix_lengths.size());
  walk_steps(example, alpha, prefix_lengths, [&](std::size_t t, const RealVector& z) {
    const double target = remaining_target(example.total(), t);
    const HeadGradients g = scaler ? loss_gradients(params, scaler->apply(z), target, bins)
                                   : loss_gradients(params, z, target, bins);
    out.grads.accumulate(g, scale);
  });
  out.loss = out.grads.loss;
  out.steps = prefix_lengths.size();
  return out;
}

std::vector<std::size_t> stratified_steps(std::size_t total, std::size_t count, SeededRng& rng) {
  if (total <= count) return all_steps(total);
  std::vector<std::size_t> steps(count);
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t lo = s * total / count;
    const std::size_t hi = (s + 1) * total / count - 1;
    steps[s] = static_cast<std::size_t>(rng.uniform_int(lo, hi));
  }
  return steps;
}

namespace {

// Moments of z over every step of every example.
FeatureScaler fit_step_scaler(const std::vector<PlpExample>& examples, double alpha) {
  const std::size_t dim = 2 * examples.front().prompt_feature.size();
  std::vector<double> sum(dim, 0.0), sq(dim, 0.0);
  double count = 0.0;
  for (const auto& ex : examples) {
    const auto steps = all_steps(ex.total());
    walk_steps(ex, alpha, steps, [&](std::size_t, const RealVector& z) {
      for (std::size_t j = 0; j < dim; ++j) {
        sum[j] += z[j];
        sq[j] += z[j] * z[j];
      }
      count += 1.0;
    });
  }
  FeatureScaler s = FeatureScaler::identity(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    s.mean[j] = sum[j] / count;
    const double var = std::max(0.0, sq[j] / count - s.mean[j] * s.mean[j]);
    const double sd = std::sqrt(var);
    s.scale[j] = sd > 1e-12 ? sd : 1.0;
  }
  return s;
}

}  // namespace

TrainResult plp_train(const Dataset& train_set, const Dataset& val_set, const TrainConfig& config) {
  config.validate();
  const PlpExamples train_ex = make_plp_examples(train_set, config.alpha);
  require(!train_ex.examples.empty(), ErrorKind::kUsage,
          "PLP training set has no records with responses");
  const PlpExamples val_ex = make_plp_examples(val_set, config.alpha);
  const auto& select = val_ex.examples.empty() ? train_ex.examples : val_ex.examples;

  std::vector<double> targets;
  double max_target = 0.0;
  for (const auto& ex : train_ex.examples) {
    for (std::size_t r = 1; r <= ex.total(); ++r) {
      targets.push_back(to_target(static_cast<double>(r), config.transform));
    }
    max_target = std::max(max_target, to_target(static_cast<double>(ex.total()), config.transform));
  }
  TrainResult result;
  result.bins = fit_bins(targets, config.bins, config.scheme);
  targets.clear();
  targets.shrink_to_fit();
  const double norm = config.normalize_mse && max_target > 0.0 ? max_target : 1.0;
  const std::size_t dim = 2 * train_ex.examples.front().prompt_feature.size();
  const FeatureScaler scaler = config.standardize ? fit_step_scaler(train_ex.examples, config.alpha)
                                                  : FeatureScaler::identity(dim);

  HeadParams params =
      HeadParams::zeros(result.bins.size(), dim, config.lambda, norm, config.transform);
  OptimizerState state = OptimizerState::for_params(params);
  double best_mae = std::numeric_limits<double>::infinity();

  const std::size_t n = train_ex.examples.size();
  std::vector<std::size_t> order(n);
  std::vector<std::vector<std::size_t>> steps(n);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    SeededRng rng(config.seed + epoch);
    rng.shuffle(order);
    for (std::size_t i : order) {
      steps[i] = stratified_steps(train_ex.examples[i].total(), kPlpMaxStepsPerSequence, rng);
    }

    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size, ++batch_index) {
      const std::size_t stop = std::min(n, start + config.batch_size);
      const HeadGradients g = mean_gradient(
          stop - start, params.classes(), dim,
          [&](std::size_t i) {
            const std::size_t idx = order[start + i];
            return plp_sequence_loss(train_ex.examples[idx], params, result.bins, config.alpha,
                                     steps[idx], &scaler)
                .grads;
          });
      const std::string where =
          "epoch " + std::to_string(epoch + 1) + " batch " + std::to_string(batch_index);
      if (!std::isfinite(g.loss)) fail(ErrorKind::kDivergence, "non-finite loss at " + where);
      try {
        adamw_step(params, state, g, config);
      } catch (const Error& e) {
        fail(e.kind(), std::string(e.what()) + " at " + where);
      }
      loss_sum += g.loss * static_cast<double>(stop - start);
    }

    const HeadParams raw = scaler.fold(params);
    const double mae = plp_mean_step_mae(raw, result.bins, select, config.alpha);
    result.history.push_back({epoch + 1, loss_sum / static_cast<double>(n), mae});
    if (mae < best_mae) {
      best_mae = mae;
      result.params = raw;
      result.best_epoch = epoch + 1;
    }
  }
  return result;
}

RemainingPredictor head_predictor(const HeadParams& params, const BinLayout& bins) {
  return [&params, &bins](const PlpExample&, std::size_t, std::span<const double> z) {
    return std::max(1.0, predicted_length(forward(params, z, bins), params));
  };
}

PlpCurve plp_eval_curve(const RemainingPredictor& predict, const std::vector<PlpExample>& dataset,
                        std::span<const double> fractions, double alpha) {
  require(!dataset.empty(), ErrorKind::kUsage, "PLP evaluation needs a non-empty dataset");
  require(!fractions.empty(), ErrorKind::kUsage, "PLP evaluation needs at least one fraction");
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    require(fractions[i] >= 0.0 && fractions[i] < 1.0, ErrorKind::kUsage,
            "PLP fractions must lie in [0, 1)");
    require(i == 0 || fractions[i] > fractions[i - 1], ErrorKind::kUsage,
            "PLP fractions must be strictly increasing");
  }
  std::vector<std::vector<double>> errors(dataset.size());
  detail::run_indexed(dataset.size(), default_execution(), [&](std::size_t i) {
    const auto& ex = dataset[i];
    check_example(ex);
    std::vector<std::size_t> steps;
    for (double f : fractions) {
      steps.push_back(static_cast<std::size_t>(std::floor(f * static_cast<double>(ex.total()))));
    }
    errors[i].reserve(steps.size());
    walk_steps(ex, alpha, steps, [&](std::size_t t, const RealVector& z) {
      const double truth = remaining_target(ex.total(), t);
      errors[i].push_back(std::abs(predict(ex, t, z) - truth));
    });
  });
  PlpCurve curve;
  for (std::size_t k = 0; k < fractions.size(); ++k) {
    double sum = 0.0;
    for (const auto& e : errors) sum += e[k];
    curve.push_back({fractions[k], sum / static_cast<double>(dataset.size())});
  }
  return curve;
}

PlpCurve plp_eval_curve(const HeadParams& params, const BinLayout& bins,
                        const std::vector<PlpExample>& dataset, std::span<const double> fractions,
                        double alpha) {
  return plp_eval_curve(head_predictor(params, bins), dataset, fractions, alpha);
}

double plp_mean_step_mae(const HeadParams& params, const BinLayout& bins,
                         const std::vector<PlpExample>& dataset, double alpha) {
  require(!dataset.empty(), ErrorKind::kUsage, "PLP evaluation needs a non-empty dataset");
  std::vector<double> per_seq(dataset.size());
  detail::run_indexed(dataset.size(), default_execution(), [&](std::size_t i) {
    const auto& ex = dataset[i];
    check_example(ex);
    const auto steps = all_steps(ex.total());
    double sum = 0.0;
    walk_steps(ex, alpha, steps, [&](std::size_t t, const RealVector& z) {
      const double pred = std::max(1.0, predicted_length(forward(params, z, bins), params));
      sum += std::abs(pred - remaining_target(ex.total(), t));
    });
    per_seq[i] = sum / static_cast<double>(ex.total());
  });
  return std::accumulate(per_seq.begin(), per_seq.end(), 0.0) /
         static_cast<double>(dataset.size());
}

void write_curve_csv(std::ostream& out, const PlpCurve& curve) {
  out << "fraction,mae\n";
  for (const auto& p : curve) out << format_real(p.fraction) << ',' << format_real(p.mae) << '\n';
}

}  // namespace forelen
