#include "forelen/head.hpp"

#include <algorithm>
#include <cmath>

#include "forelen/detail/bytes.hpp"
#include "forelen/error.hpp"

namespace forelen {

double to_target(double length, TargetTransform transform) {
  return transform == TargetTransform::kLog ? std::log(length) : length;
}

double from_target(double target, TargetTransform transform) {
  return transform == TargetTransform::kLog ? std::exp(target) : target;
}

void BinLayout::validate() const {
  require(!centers.empty(), ErrorKind::kDomain, "bin layout has no bins");
  require(edges.size() == centers.size() + 1, ErrorKind::kDomain,
          "bin layout needs K + 1 edges");
  require(edges[0] >= 0.0, ErrorKind::kDomain, "bin edges must be nonnegative");
  for (std::size_t i = 0; i < centers.size(); ++i) {
    require(edges[i] < edges[i + 1], ErrorKind::kDomain, "bin edges must strictly increase");
    require(centers[i] > edges[i] && centers[i] < edges[i + 1], ErrorKind::kDomain,
            "bin center outside its bin");
  }
}

BinLayout::Lookup BinLayout::locate(double value) const {
  const std::size_t k = size();
  if (value > edges[k]) return {k - 1, true};
  // First upper edge >= value.
  auto it = std::lower_bound(edges.begin() + 1, edges.end(), value);
  return {static_cast<std::size_t>(it - (edges.begin() + 1)), false};
}

namespace {

BinLayout from_edges(std::vector<double> edges, BinScheme scheme) {
  BinLayout bins;
  bins.scheme = scheme;
  bins.edges.push_back(edges.front());
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (edges[i] > bins.edges.back()) bins.edges.push_back(edges[i]);
  }
  for (std::size_t i = 0; i + 1 < bins.edges.size(); ++i) {
    bins.centers.push_back(0.5 * (bins.edges[i] + bins.edges[i + 1]));
  }
  return bins;
}

}  // namespace

BinLayout fit_bins(std::span<const double> values, std::size_t k, BinScheme scheme) {
  require(!values.empty(), ErrorKind::kUsage, "cannot fit bins to an empty sample");
  require(k >= 1, ErrorKind::kUsage, "bin count must be at least 1");
  require_finite(values, "bin sample");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  require(sorted.front() >= 0.0, ErrorKind::kDomain, "bin sample must be nonnegative");
  const double hi = sorted.back();
  if (scheme == BinScheme::kQuantile && k > 1 && sorted.front() == hi) {
    fail(ErrorKind::kDegenerateBins, "all values identical; quantile bins collapse");
  }
  require(hi > 0.0, ErrorKind::kDegenerateBins, "largest value is 0; bins would be empty");

  std::vector<double> edges{0.0};
  const std::size_t n = sorted.size();
  for (std::size_t i = 1; i < k; ++i) {
    if (scheme == BinScheme::kEqualWidth) {
      edges.push_back(hi * static_cast<double>(i) / static_cast<double>(k));
    } else {
      const std::size_t rank = std::max<std::size_t>(i * n / k, 1);
      edges.push_back(sorted[rank - 1]);
    }
  }
  edges.push_back(hi);
  BinLayout bins = from_edges(std::move(edges), scheme);
  bins.validate();
  return bins;
}

BinLayout fit_bins(std::span<const std::uint32_t> lengths, std::size_t k, BinScheme scheme) {
  std::vector<double> values(lengths.begin(), lengths.end());
  return fit_bins(values, k, scheme);
}

ProbVector soft_label(double value, const BinLayout& bins) {
  const std::size_t k = bins.size();
  const auto true_bin = static_cast<double>(bins.locate(value).index);
  std::vector<double> p(k);
  double sum = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    p[j] = std::exp(-std::abs(static_cast<double>(j) - true_bin));
    sum += p[j];
  }
  for (double& x : p) x /= sum;
  return ProbVector(std::move(p));
}

void HeadParams::validate() const {
  require(!bias.empty(), ErrorKind::kDomain, "head has no classes");
  require(weights.rows == bias.size(), ErrorKind::kDomain, "head weight rows must equal K");
  require(weights.cols >= 1, ErrorKind::kDomain, "head input dimension must be positive");
  require(weights.data.size() == weights.rows * weights.cols, ErrorKind::kDomain,
          "head weight storage has wrong size");
  require(lambda >= 0.0 && lambda <= 1.0, ErrorKind::kDomain, "lambda must lie in [0, 1]");
  require(std::isfinite(norm_scale) && norm_scale > 0.0, ErrorKind::kDomain,
          "norm_scale must be positive");
  require_finite(weights.data, "head weights");
  require_finite(bias, "head bias");
}

HeadParams HeadParams::zeros(std::size_t k, std::size_t d_in, double lambda, double norm_scale,
                             TargetTransform transform) {
  HeadParams p;
  p.weights = Matrix(k, d_in);
  p.bias.assign(k, 0.0);
  p.lambda = lambda;
  p.norm_scale = norm_scale;
  p.transform = transform;
  return p;
}

namespace {

void check_shapes(const HeadParams& params, std::span<const double> h, const BinLayout& bins) {
  require(h.size() == params.input_dim(), ErrorKind::kDomain,
          "feature length " + std::to_string(h.size()) + " does not match head input " +
              std::to_string(params.input_dim()));
  require(bins.size() == params.classes(), ErrorKind::kDomain,
          "bin count does not match head classes");
}

}  // namespace

HeadOutput forward(const HeadParams& params, std::span<const double> h, const BinLayout& bins) {
  check_shapes(params, h, bins);
  const std::size_t k = params.classes();
  std::vector<double> logits(k);
  for (std::size_t i = 0; i < k; ++i) logits[i] = dot(params.weights.row(i), h) + params.bias[i];
  HeadOutput out;
  out.p_hat = softmax(logits);
  out.log_p_hat = log_softmax(logits);
  out.y_hat = 0.0;
  for (std::size_t i = 0; i < k; ++i) out.y_hat += out.p_hat[i] * bins.centers[i];
  return out;
}

double predicted_length(const HeadOutput& out, const HeadParams& params) {
  return from_target(out.y_hat, params.transform);
}

double joint_loss(const ProbVector& p, const HeadOutput& out, double length,
                  const HeadParams& params) {
  require(p.size() == out.log_p_hat.size(), ErrorKind::kDomain,
          "label and prediction differ in bin count");
  double ce = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) ce -= p[i] * out.log_p_hat[i];
  }
  const double err = (to_target(length, params.transform) - out.y_hat) / params.norm_scale;
  return params.lambda * ce + (1.0 - params.lambda) * err * err;
}

HeadGradients HeadGradients::zeros(std::size_t k, std::size_t d_in) {
  HeadGradients g;
  g.d_weights = Matrix(k, d_in);
  g.d_bias.assign(k, 0.0);
  g.d_input.assign(d_in, 0.0);
  return g;
}

void HeadGradients::accumulate(const HeadGradients& other, double scale) {
  for (std::size_t i = 0; i < d_weights.data.size(); ++i) {
    d_weights.data[i] += scale * other.d_weights.data[i];
  }
  for (std::size_t i = 0; i < d_bias.size(); ++i) d_bias[i] += scale * other.d_bias[i];
  for (std::size_t i = 0; i < d_input.size(); ++i) d_input[i] += scale * other.d_input[i];
  loss += scale * other.loss;
}

HeadGradients loss_gradients(const HeadParams& params, std::span<const double> h,
                             double length, const BinLayout& bins) {
  const HeadOutput out = forward(params, h, bins);
  const double target = to_target(length, params.transform);
  const ProbVector p = soft_label(target, bins);
  const std::size_t k = params.classes();
  const std::size_t d = params.input_dim();

  HeadGradients g = HeadGradients::zeros(k, d);
  g.loss = joint_loss(p, out, length, params);
  g.y_hat = out.y_hat;
  const double lam = params.lambda;
  const double mse_coeff =
      (1.0 - lam) * 2.0 * (out.y_hat - target) / (params.norm_scale * params.norm_scale);
  for (std::size_t i = 0; i < k; ++i) {
    const double du = lam * (out.p_hat[i] - p[i]) +
                      mse_coeff * out.p_hat[i] * (bins.centers[i] - out.y_hat);
    g.d_bias[i] = du;
    auto dw = g.d_weights.row(i);
    auto w = params.weights.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      dw[j] = du * h[j];
      g.d_input[j] += w[j] * du;
    }
  }
  return g;
}

// --- model file -------------------------------------------------------------

namespace {
constexpr std::string_view kHeadMagic = "FLHD";
constexpr std::uint32_t kHeadVersion = 1;
}  // namespace

std::vector<std::uint8_t> encode_head(const HeadParams& params, const BinLayout& bins) {
  params.validate();
  bins.validate();
  require(bins.size() == params.classes(), ErrorKind::kConsistency,
          "bin count does not match head classes");
  detail::ByteWriter w;
  w.raw(kHeadMagic);
  w.u32(kHeadVersion);
  w.u32(static_cast<std::uint32_t>(params.classes()));
  w.u32(static_cast<std::uint32_t>(params.input_dim()));
  w.f64(params.lambda);
  w.f64(params.norm_scale);
  w.u32(static_cast<std::uint32_t>(bins.scheme));
  w.u32(static_cast<std::uint32_t>(params.transform));
  for (double e : bins.edges) w.f64(e);
  for (double c : bins.centers) w.f64(c);
  for (double x : params.weights.data) w.f64(x);
  for (double x : params.bias) w.f64(x);
  return std::move(w.bytes());
}

void decode_head(std::span<const std::uint8_t> bytes, HeadParams& params, BinLayout& bins) {
  detail::ByteReader r(bytes);
  const std::string magic = r.raw(4, "model magic");
  if (magic != kHeadMagic) {
    fail(ErrorKind::kMagicMismatch, "expected FLHD, found " + detail::describe_magic(magic));
  }
  const std::uint32_t version = r.u32("model version");
  if (version != kHeadVersion) {
    fail(ErrorKind::kVersionMismatch, "unsupported model version " + std::to_string(version));
  }
  const std::uint32_t k = r.u32("K");
  const std::uint32_t d_in = r.u32("d_in");
  require(k >= 1 && d_in >= 1, ErrorKind::kMalformed, "model has zero K or d_in");
  HeadParams p;
  p.lambda = r.f64("lambda");
  p.norm_scale = r.f64("norm_scale");
  const std::uint32_t scheme = r.u32("scheme");
  const std::uint32_t transform = r.u32("transform");
  require(scheme <= 1 && transform <= 1, ErrorKind::kMalformed, "unknown scheme or transform");
  r.need((static_cast<std::size_t>(k) * (d_in + 3) + 1) * 8, "model payload");
  BinLayout b;
  b.scheme = static_cast<BinScheme>(scheme);
  p.transform = static_cast<TargetTransform>(transform);
  b.edges.resize(k + 1);
  for (double& e : b.edges) e = r.f64("edges");
  b.centers.resize(k);
  for (double& c : b.centers) c = r.f64("centers");
  p.weights = Matrix(k, d_in);
  for (double& x : p.weights.data) x = r.f64("weights");
  p.bias.resize(k);
  for (double& x : p.bias) x = r.f64("bias");
  require(r.remaining() == 0, ErrorKind::kMalformed, "trailing bytes after model payload");
  try {
    b.validate();
    p.validate();
  } catch (const Error& e) {
    fail(ErrorKind::kMalformed, e.what());
  }
  params = std::move(p);
  bins = std::move(b);
}

void save_head(const std::filesystem::path& path, const HeadParams& params,
               const BinLayout& bins) {
  detail::write_file(path.string(), encode_head(params, bins));
}

void load_head(const std::filesystem::path& path, HeadParams& params, BinLayout& bins) {
  const auto bytes = detail::read_file(path.string());
  decode_head(bytes, params, bins);
}

}  // namespace forelen
