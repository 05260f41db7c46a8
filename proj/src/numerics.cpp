#include "forelen/numerics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>

#include "forelen/error.hpp"

namespace forelen {

std::string_view kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDomain: return "domain-error";
    case ErrorKind::kUsage: return "usage-error";
    case ErrorKind::kUndefinedCorrelation: return "undefined-correlation";
    case ErrorKind::kDegenerateBins: return "degenerate-bins";
    case ErrorKind::kConsistency: return "consistency-error";
    case ErrorKind::kDivergence: return "divergence";
    case ErrorKind::kIo: return "io-error";
    case ErrorKind::kMagicMismatch: return "magic-mismatch";
    case ErrorKind::kVersionMismatch: return "version-mismatch";
    case ErrorKind::kTruncated: return "truncated-file";
    case ErrorKind::kOffsetOutOfRange: return "offset-out-of-range";
    case ErrorKind::kEmptyPrompt: return "empty-prompt";
    case ErrorKind::kMalformed: return "malformed-record";
  }
  return "unknown-error";
}

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) fail(ErrorKind::kDomain, std::string(what) + " contains a non-finite value");
  }
}

ProbVector::ProbVector(std::vector<double> values) : values_(std::move(values)) {
  require(!values_.empty(), ErrorKind::kDomain, "probability vector is empty");
  double sum = 0.0;
  for (double p : values_) {
    require(std::isfinite(p) && p >= 0.0 && p <= 1.0, ErrorKind::kDomain,
            "probability entry outside [0, 1]");
    sum += p;
  }
  require(std::abs(sum - 1.0) <= kSumTolerance, ErrorKind::kDomain,
          "probabilities sum to " + format_real(sum));
}

ProbVector softmax(std::span<const double> v, double temperature) {
  require(!v.empty(), ErrorKind::kDomain, "softmax of empty vector");
  require(std::isfinite(temperature) && temperature > 0.0, ErrorKind::kDomain,
          "softmax temperature must be positive");
  require_finite(v, "softmax input");
  std::vector<double> out(v.size());
  double shift = v[0] / temperature;
  for (double x : v) shift = std::max(shift, x / temperature);
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] / temperature - shift);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return ProbVector(std::move(out), ProbVector::Trusted{});
}

RealVector log_softmax(std::span<const double> v) {
  require(!v.empty(), ErrorKind::kDomain, "log_softmax of empty vector");
  require_finite(v, "log_softmax input");
  double shift = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double x : v) sum += std::exp(x - shift);
  const double log_norm = shift + std::log(sum);
  RealVector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] - log_norm;
  return out;
}

double entropy(const ProbVector& p) {
  double h = 0.0;
  for (double x : p) {
    if (x > 0.0) h -= x * std::log(x);
  }
  return std::max(h, 0.0);
}

double pearson(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), ErrorKind::kDomain, "pearson inputs differ in length");
  require(x.size() >= 2, ErrorKind::kDomain, "pearson needs at least two samples");
  require_finite(x, "pearson x");
  require_finite(y, "pearson y");
  const auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double a) { return a == v.front(); });
  };
  if (constant(x) || constant(y)) {
    fail(ErrorKind::kUndefinedCorrelation, "correlation undefined for constant input");
  }
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    fail(ErrorKind::kUndefinedCorrelation, "correlation undefined for constant input");
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

SeededRng::SeededRng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t sm = seed;
  for (auto& word : s_) word = splitmix64(sm);
}

std::uint64_t SeededRng::next() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double SeededRng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

std::uint64_t SeededRng::uniform_int(std::uint64_t lo, std::uint64_t hi) {
  require(lo <= hi, ErrorKind::kDomain, "uniform_int with lo > hi");
  const std::uint64_t span = hi - lo;
  if (span == UINT64_MAX) return next();
  const std::uint64_t range = span + 1;
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % range);
  std::uint64_t x;
  do {
    x = next();
  } while (x >= limit);
  return lo + x % range;
}

double SeededRng::normal(double mean, double stddev) {
  // 1 - uniform() lies in (0, 1], so the log is finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  return mean + stddev * z;
}

double SeededRng::lognormal(double mu, double sigma) { return std::exp(normal(mu, sigma)); }

double SeededRng::exponential(double rate) { return -std::log(1.0 - uniform()) / rate; }

std::string format_real(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

}  // namespace forelen
