#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "forelen/head.hpp"
#include "forelen/kernels.hpp"
#include "forelen/pooling.hpp"

namespace forelen {

struct TrainConfig {
  double learning_rate = 2e-5;
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  std::uint64_t seed = 42;
  double lambda = 0.95;
  std::size_t bins = 20;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
  PoolingMode pooling = PoolingMode::kEgtp;
  double alpha = 1.0;
  BinScheme scheme = BinScheme::kQuantile;
  // Divide the regression error by the largest training target.
  bool normalize_mse = true;
  TargetTransform transform = TargetTransform::kLinear;
  // Optimize in z-scored feature space; the returned head is folded back to
  // act on raw features.
  bool standardize = true;

  void validate() const;
  // One-line "key=value ..." echo of every field.
  std::string describe() const;
};

struct OptimizerState {
  Matrix m_weights, v_weights;
  std::vector<double> m_bias, v_bias;
  std::uint64_t step = 0;

  static OptimizerState for_params(const HeadParams& params);
};

// Bias-corrected AdamW with decoupled weight decay on every parameter.
// Throws kDivergence on a non-finite gradient.
void adamw_step(HeadParams& params, OptimizerState& state, const HeadGradients& grads,
                const TrainConfig& config);

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_mae = 0.0;
};

struct TrainResult {
  HeadParams params;
  BinLayout bins;
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;
};

// epoch,train_loss,val_mae rows with LF endings.
void write_history_csv(std::ostream& out, const std::vector<EpochStats>& history);

TrainResult train(const Dataset& train_set, const Dataset& val_set, const TrainConfig& config);

struct PredictionEntry {
  std::string id;
  double y_true = 0.0;
  double y_hat = 0.0;
};

struct PredictionReport {
  std::vector<PredictionEntry> entries;
  double mae = 0.0;
  double rmse = 0.0;
};

PredictionReport make_report(std::vector<PredictionEntry> entries);

PredictionReport evaluate(const HeadParams& params, const BinLayout& bins, const Dataset& dataset,
                          PoolingMode pooling, double alpha);

// id,y_true,y_hat rows followed by nothing else; callers add comment lines.
void write_predictions_csv(std::ostream& out, const PredictionReport& report);

// Feature standardization helpers shared with the PLP trainer.
struct FeatureScaler {
  std::vector<double> mean;
  std::vector<double> scale;  // 1 for constant columns

  static FeatureScaler identity(std::size_t dim);
  static FeatureScaler fit(std::span<const RealVector> features);
  RealVector apply(std::span<const double> x) const;
  // Head acting on raw x equivalent to `scaled` acting on apply(x).
  HeadParams fold(const HeadParams& scaled) const;
};

}  // namespace forelen
