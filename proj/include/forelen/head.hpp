#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "forelen/numerics.hpp"

namespace forelen {

enum class BinScheme : std::uint32_t { kEqualWidth = 0, kQuantile = 1 };

// Regression target space. In log mode the head bins, labels, and regresses
// ln(y) instead of y.
enum class TargetTransform : std::uint32_t { kLinear = 0, kLog = 1 };

double to_target(double length, TargetTransform transform);
double from_target(double target, TargetTransform transform);

// K right-closed bins: bin i covers (edges[i], edges[i + 1]], with values at
// or below edges[0] assigned to bin 0 and values above edges[K] clamped into
// bin K - 1.
struct BinLayout {
  std::vector<double> edges;    // K + 1, strictly increasing, edges[0] = 0
  std::vector<double> centers;  // K midpoints
  BinScheme scheme = BinScheme::kQuantile;

  std::size_t size() const { return centers.size(); }
  void validate() const;

  struct Lookup {
    std::size_t index;
    bool clamped;
  };
  Lookup locate(double value) const;

  bool operator==(const BinLayout&) const = default;
};

// Fits bins to target values (already transformed). Quantile edges sit at
// order statistics floor(k N / K) - 1 of the sorted sample; duplicate edges
// are merged, which lowers K.
BinLayout fit_bins(std::span<const double> values, std::size_t k, BinScheme scheme);
BinLayout fit_bins(std::span<const std::uint32_t> lengths, std::size_t k, BinScheme scheme);

// p_j proportional to exp(-|j - i|) around the bin i holding `value`.
ProbVector soft_label(double value, const BinLayout& bins);

struct HeadParams {
  Matrix weights;             // K x d_in
  std::vector<double> bias;   // K
  double lambda = 0.95;
  double norm_scale = 1.0;
  TargetTransform transform = TargetTransform::kLinear;

  std::size_t classes() const { return bias.size(); }
  std::size_t input_dim() const { return weights.cols; }
  void validate() const;

  static HeadParams zeros(std::size_t k, std::size_t d_in, double lambda, double norm_scale,
                          TargetTransform transform = TargetTransform::kLinear);

  bool operator==(const HeadParams&) const = default;
};

struct HeadOutput {
  ProbVector p_hat;
  RealVector log_p_hat;
  double y_hat = 0.0;  // expected bin center, in target space
};

HeadOutput forward(const HeadParams& params, std::span<const double> h, const BinLayout& bins);

// Predicted length in tokens (undoes the target transform).
double predicted_length(const HeadOutput& out, const HeadParams& params);

// lambda * CE(p, p_hat) + (1 - lambda) * ((t - y_hat) / norm_scale)^2 where t
// is the transformed length. CE uses the stored log-softmax.
double joint_loss(const ProbVector& p, const HeadOutput& out, double length,
                  const HeadParams& params);

struct HeadGradients {
  Matrix d_weights;
  std::vector<double> d_bias;
  std::vector<double> d_input;
  double loss = 0.0;
  double y_hat = 0.0;

  static HeadGradients zeros(std::size_t k, std::size_t d_in);
  void accumulate(const HeadGradients& other, double scale);
};

HeadGradients loss_gradients(const HeadParams& params, std::span<const double> h,
                             double length, const BinLayout& bins);

// Portable model file, see docs/format.md.
std::vector<std::uint8_t> encode_head(const HeadParams& params, const BinLayout& bins);
void decode_head(std::span<const std::uint8_t> bytes, HeadParams& params, BinLayout& bins);
void save_head(const std::filesystem::path& path, const HeadParams& params, const BinLayout& bins);
void load_head(const std::filesystem::path& path, HeadParams& params, BinLayout& bins);

}  // namespace forelen
