#include "forelen/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "forelen/error.hpp"

namespace forelen {

void TrainConfig::validate() const {
  require(std::isfinite(learning_rate) && learning_rate >= 0.0, ErrorKind::kUsage,
          "learning rate must be nonnegative");
  require(epochs >= 1, ErrorKind::kUsage, "epochs must be at least 1");
  require(batch_size >= 1, ErrorKind::kUsage, "batch size must be at least 1");
  require(lambda >= 0.0 && lambda <= 1.0, ErrorKind::kUsage, "lambda must lie in [0, 1]");
  require(bins >= 1, ErrorKind::kUsage, "K must be at least 1");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ErrorKind::kUsage,
          "AdamW betas must lie in [0, 1)");
  require(epsilon > 0.0, ErrorKind::kUsage, "AdamW epsilon must be positive");
  require(weight_decay >= 0.0, ErrorKind::kUsage, "weight decay must be nonnegative");
  require(std::isfinite(alpha) && alpha > 0.0, ErrorKind::kUsage, "alpha must be positive");
}

std::string TrainConfig::describe() const {
  std::ostringstream s;
  s << "lr=" << format_real(learning_rate) << " epochs=" << epochs << " batch_size=" << batch_size
    << " seed=" << seed << " lambda=" << format_real(lambda) << " K=" << bins
    << " beta1=" << format_real(beta1) << " beta2=" << format_real(beta2)
    << " epsilon=" << format_real(epsilon) << " weight_decay=" << format_real(weight_decay)
    << " pooling=" << pooling_name(pooling) << " alpha=" << format_real(alpha)
    << " bin_scheme=" << (scheme == BinScheme::kQuantile ? "quantile" : "equal-width")
    << " mse_normalized=" << (normalize_mse ? "true" : "false")
    << " target=" << (transform == TargetTransform::kLog ? "log" : "linear")
    << " standardize=" << (standardize ? "true" : "false");
  return s.str();
}

OptimizerState OptimizerState::for_params(const HeadParams& params) {
  OptimizerState s;
  s.m_weights = Matrix(params.weights.rows, params.weights.cols);
  s.v_weights = s.m_weights;
  s.m_bias.assign(params.bias.size(), 0.0);
  s.v_bias = s.m_bias;
  return s;
}

namespace {

void adamw_update(std::span<double> theta, std::span<double> m, std::span<double> v,
                  std::span<const double> g, const TrainConfig& c, double bc1, double bc2) {
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    theta[i] -= c.learning_rate * (m_hat / (std::sqrt(v_hat) + c.epsilon) +
                                   c.weight_decay * theta[i]);
  }
}

}  // namespace

void adamw_step(HeadParams& params, OptimizerState& state, const HeadGradients& grads,
                const TrainConfig& config) {
  require(grads.d_weights.rows == params.weights.rows &&
              grads.d_weights.cols == params.weights.cols &&
              grads.d_bias.size() == params.bias.size() &&
              state.m_weights.data.size() == params.weights.data.size() &&
              state.m_bias.size() == params.bias.size(),
          ErrorKind::kDomain, "optimizer shapes do not match the head");
  for (double g : grads.d_weights.data) {
    if (!std::isfinite(g)) fail(ErrorKind::kDivergence, "non-finite weight gradient");
  }
  for (double g : grads.d_bias) {
    if (!std::isfinite(g)) fail(ErrorKind::kDivergence, "non-finite bias gradient");
  }
  ++state.step;
  const auto t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  adamw_update(params.weights.data, state.m_weights.data, state.v_weights.data,
               grads.d_weights.data, config, bc1, bc2);
  adamw_update(params.bias, state.m_bias, state.v_bias, grads.d_bias, config, bc1, bc2);
}

void write_history_csv(std::ostream& out, const std::vector<EpochStats>& history) {
  out << "epoch,train_loss,val_mae\n";
  for (const auto& e : history) {
    out << e.epoch << ',' << format_real(e.train_loss) << ',' << format_real(e.val_mae) << '\n';
  }
}

FeatureScaler FeatureScaler::identity(std::size_t dim) {
  return FeatureScaler{std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
}

FeatureScaler FeatureScaler::fit(std::span<const RealVector> features) {
  require(!features.empty(), ErrorKind::kUsage, "cannot standardize an empty feature set");
  const std::size_t d = features.front().size();
  FeatureScaler s = identity(d);
  const auto n = static_cast<double>(features.size());
  for (const auto& x : features) {
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += x[j];
  }
  for (double& m : s.mean) m /= n;
  std::vector<double> var(d, 0.0);
  for (const auto& x : features) {
    for (std::size_t j = 0; j < d; ++j) {
      const double dx = x[j] - s.mean[j];
      var[j] += dx * dx;
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    const double sd = std::sqrt(var[j] / n);
    s.scale[j] = sd > 1e-12 ? sd : 1.0;
  }
  return s;
}

RealVector FeatureScaler::apply(std::span<const double> x) const {
  RealVector out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - mean[j]) / scale[j];
  return out;
}

HeadParams FeatureScaler::fold(const HeadParams& scaled) const {
  HeadParams raw = scaled;
  for (std::size_t i = 0; i < raw.classes(); ++i) {
    auto w = raw.weights.row(i);
    double shift = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      w[j] = scaled.weights(i, j) / scale[j];
      shift += w[j] * mean[j];
    }
    raw.bias[i] = scaled.bias[i] - shift;
  }
  return raw;
}

PredictionReport make_report(std::vector<PredictionEntry> entries) {
  require(!entries.empty(), ErrorKind::kUsage, "cannot report on an empty dataset");
  PredictionReport r;
  double abs_sum = 0.0, sq_sum = 0.0;
  for (const auto& e : entries) {
    const double err = e.y_true - e.y_hat;
    abs_sum += std::abs(err);
    sq_sum += err * err;
  }
  const auto n = static_cast<double>(entries.size());
  r.mae = abs_sum / n;
  r.rmse = std::sqrt(sq_sum / n);
  r.entries = std::move(entries);
  return r;
}

PredictionReport evaluate(const HeadParams& params, const BinLayout& bins, const Dataset& dataset,
                          PoolingMode pooling, double alpha) {
  require(!dataset.empty(), ErrorKind::kUsage, "cannot evaluate on an empty dataset");
  const auto features = pool_features(dataset, pooling, alpha);
  const auto predictions = predict_all(params, bins, features);
  std::vector<PredictionEntry> entries;
  entries.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    entries.push_back({dataset[i].id, static_cast<double>(dataset[i].length), predictions[i]});
  }
  return make_report(std::move(entries));
}

void write_predictions_csv(std::ostream& out, const PredictionReport& report) {
  out << "id,y_true,y_hat\n";
  for (const auto& e : report.entries) {
    out << e.id << ',' << format_real(e.y_true) << ',' << format_real(e.y_hat) << '\n';
  }
}

namespace {

double mean_abs_error(std::span<const double> predictions, std::span<const double> truths) {
  double s = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) s += std::abs(predictions[i] - truths[i]);
  return s / static_cast<double>(predictions.size());
}

}  // namespace

TrainResult train(const Dataset& train_set, const Dataset& val_set, const TrainConfig& config) {
  config.validate();
  require(!train_set.empty(), ErrorKind::kUsage, "training set is empty");

  std::vector<double> lengths(train_set.size()), targets(train_set.size());
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    lengths[i] = train_set[i].length;
    targets[i] = to_target(lengths[i], config.transform);
  }
  TrainResult result;
  result.bins = fit_bins(targets, config.bins, config.scheme);
  const double max_target = *std::max_element(targets.begin(), targets.end());
  const double norm = config.normalize_mse && max_target > 0.0 ? max_target : 1.0;

  const auto raw_train = pool_features(train_set, config.pooling, config.alpha);
  const FeatureScaler scaler = config.standardize
                                   ? FeatureScaler::fit(raw_train)
                                   : FeatureScaler::identity(raw_train.front().size());
  std::vector<RealVector> train_x(raw_train.size());
  for (std::size_t i = 0; i < raw_train.size(); ++i) train_x[i] = scaler.apply(raw_train[i]);

  // Model selection falls back to training MAE when no validation set is given.
  const Dataset& select_set = val_set.empty() ? train_set : val_set;
  const auto select_x = val_set.empty() ? raw_train
                                        : pool_features(val_set, config.pooling, config.alpha);
  std::vector<double> select_y(select_set.size());
  for (std::size_t i = 0; i < select_set.size(); ++i) select_y[i] = select_set[i].length;

  HeadParams params = HeadParams::zeros(result.bins.size(), train_x.front().size(), config.lambda,
                                        norm, config.transform);
  OptimizerState state = OptimizerState::for_params(params);
  double best_mae = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    SeededRng rng(config.seed + epoch);
    rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, stop - start);
      const HeadGradients g = batch_gradient(params, result.bins, train_x, lengths, batch);
      const std::string where =
          "epoch " + std::to_string(epoch + 1) + " batch " + std::to_string(batch_index);
      if (!std::isfinite(g.loss)) fail(ErrorKind::kDivergence, "non-finite loss at " + where);
      try {
        adamw_step(params, state, g, config);
      } catch (const Error& e) {
        fail(e.kind(), std::string(e.what()) + " at " + where);
      }
      loss_sum += g.loss * static_cast<double>(batch.size());
    }

    const HeadParams raw = scaler.fold(params);
    const auto predictions = predict_all(raw, result.bins, select_x);
    const double mae = mean_abs_error(predictions, select_y);
    result.history.push_back({epoch + 1, loss_sum / static_cast<double>(order.size()), mae});
    if (mae < best_mae) {
      best_mae = mae;
      result.params = raw;
      result.best_epoch = epoch + 1;
    }
  }
  return result;
}

}  // namespace forelen
