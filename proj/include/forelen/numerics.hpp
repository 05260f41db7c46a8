#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace forelen {

using RealVector = std::vector<double>;

// Dense row-major matrix. Row r occupies data[r * cols, (r + 1) * cols).
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }

  bool operator==(const Matrix&) const = default;
};

// A probability vector: entries in [0, 1] summing to 1 within 1e-9.
class ProbVector {
 public:
  static constexpr double kSumTolerance = 1e-9;

  ProbVector() = default;
  // Validates; throws kDomain on any violation.
  explicit ProbVector(std::vector<double> values);

  std::span<const double> values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }

 private:
  friend ProbVector softmax(std::span<const double>, double);
  struct Trusted {};
  ProbVector(std::vector<double> values, Trusted) : values_(std::move(values)) {}

  std::vector<double> values_;
};

void require_finite(std::span<const double> v, const char* what);

// Max-shifted softmax of v / temperature.
ProbVector softmax(std::span<const double> v, double temperature = 1.0);

// log(softmax(v)) computed with log-sum-exp; finite for any finite input.
RealVector log_softmax(std::span<const double> v);

// Shannon entropy in nats, with 0 ln 0 = 0.
double entropy(const ProbVector& p);

// Sample Pearson correlation. Throws kUndefinedCorrelation when either
// input has zero variance.
double pearson(std::span<const double> x, std::span<const double> y);

double dot(std::span<const double> a, std::span<const double> b);

// xoshiro256** with state seeded by four successive splitmix64 outputs of
// `seed`. Reals are (next() >> 11) * 2^-53. Normals use Box-Muller with the
// cosine branch only (one uniform pair per draw) so the stream position is a
// fixed function of the number of draws.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed);

  std::uint64_t next();
  // Uniform on [0, 1).
  double uniform();
  // Uniform integer on [lo, hi] via rejection (unbiased).
  std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi);
  double normal(double mean = 0.0, double stddev = 1.0);
  double lognormal(double mu, double sigma);
  double exponential(double rate);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    // Fisher-Yates, high index to low.
    for (std::size_t i = items.size(); i > 1; --i) {
      auto j = static_cast<std::size_t>(uniform_int(0, i - 1));
      std::swap(items[i - 1], items[j]);
    }
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
};

// Shortest round-trip decimal representation; locale independent.
std::string format_real(double value);

}  // namespace forelen
