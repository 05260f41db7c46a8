#pragma once

#include <cstddef>
#include <functional>
#include <ostream>
#include <span>
#include <vector>

#include "forelen/head.hpp"
#include "forelen/pooling.hpp"
#include "forelen/trainer.hpp"

namespace forelen {

// Progressive length prediction. Step t (0-based prefix length t in [0, T))
// sees response tokens 1..t and targets the T - t tokens still to come, so
// t = 0 is the pre-generation prediction.
struct PlpExample {
  std::string id;
  RealVector prompt_feature;  // EGTP-pooled prompt, length d
  HiddenSequence generated;   // T response tokens

  std::size_t total() const { return generated.tokens(); }
};

struct PlpExamples {
  std::vector<PlpExample> examples;
  std::size_t skipped = 0;  // records without a response
};

PlpExamples make_plp_examples(const Dataset& dataset, double alpha);

// concat(prompt_feature, egtp_pool(first prefix_len generated tokens)); the
// second half is zero for an empty prefix.
RealVector aggregate(std::span<const double> prompt_feature, const HiddenSequence& generated,
                     std::size_t prefix_len, double alpha);

std::uint32_t remaining_target(std::size_t total, std::size_t prefix_len);

struct PlpLoss {
  double loss = 0.0;
  HeadGradients grads;  // averaged over the evaluated steps
  std::size_t steps = 0;
};

// Mean joint loss over the given prefix lengths (all T steps when empty), and
// the mean of the per-step gradients. `scaler` maps raw z to head input.
PlpLoss plp_sequence_loss(const PlpExample& example, const HeadParams& params,
                          const BinLayout& bins, double alpha,
                          std::span<const std::size_t> prefix_lengths = {},
                          const FeatureScaler* scaler = nullptr);

// Seeded stratified subsample: one prefix length drawn uniformly from each of
// `count` equal strata of [0, T). Returns all of [0, T) when T <= count.
std::vector<std::size_t> stratified_steps(std::size_t total, std::size_t count, SeededRng& rng);

inline constexpr std::size_t kPlpMaxStepsPerSequence = 256;

TrainResult plp_train(const Dataset& train_set, const Dataset& val_set, const TrainConfig& config);

struct PlpCurvePoint {
  double fraction = 0.0;
  double mae = 0.0;
};

using PlpCurve = std::vector<PlpCurvePoint>;

// Remaining-length predictor: (example, prefix length, z) -> tokens.
using RemainingPredictor =
    std::function<double(const PlpExample&, std::size_t, std::span<const double>)>;

RemainingPredictor head_predictor(const HeadParams& params, const BinLayout& bins);

PlpCurve plp_eval_curve(const RemainingPredictor& predict, const std::vector<PlpExample>& dataset,
                        std::span<const double> fractions, double alpha);
PlpCurve plp_eval_curve(const HeadParams& params, const BinLayout& bins,
                        const std::vector<PlpExample>& dataset, std::span<const double> fractions,
                        double alpha);

// Mean over sequences of the per-step remaining-length MAE, every step.
double plp_mean_step_mae(const HeadParams& params, const BinLayout& bins,
                         const std::vector<PlpExample>& dataset, double alpha);

// fraction,mae rows.
void write_curve_csv(std::ostream& out, const PlpCurve& curve);

}  // namespace forelen
