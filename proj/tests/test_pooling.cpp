#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "forelen/error.hpp"
#include "forelen/pooling.hpp"
#include "oracles.hpp"

using namespace forelen;

namespace {

HiddenSequence make_seq(std::vector<std::vector<double>> rows, std::vector<double> entropies) {
  HiddenSequence s;
  s.states = Matrix(rows.size(), rows.front().size());
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (std::size_t j = 0; j < rows[t].size(); ++j) s.states(t, j) = rows[t][j];
  s.entropies = std::move(entropies);
  return s;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an exception");
  return ErrorKind::kIo;
}

}  // namespace

TEST_CASE("egtp examples") {
  const auto s = make_seq({{1.0, 0.0}, {0.0, 1.0}}, {0.0, std::log(2.0)});
  const auto f = egtp_pool(s, 1.0);
  CHECK(f.weights[0] == doctest::Approx(1.0 / 3.0));
  CHECK(f.weights[1] == doctest::Approx(2.0 / 3.0));
  CHECK(f.vector[0] == doctest::Approx(1.0 / 3.0));
  CHECK(f.vector[1] == doctest::Approx(2.0 / 3.0));

  const auto single = make_seq({{4.0, -2.0, 7.0}}, {1.3});
  const auto g = egtp_pool(single, 0.5);
  CHECK(g.weights[0] == 1.0);
  CHECK(g.vector == std::vector<double>{4.0, -2.0, 7.0});
}

TEST_CASE("constant entropy reduces egtp to mean pooling") {
  SeededRng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    auto s = oracle::random_sequence(rng, rng.uniform_int(1, 40), 8);
    std::fill(s.entropies.begin(), s.entropies.end(), 3.0 * rng.uniform());
    const auto e = egtp_pool(s, 0.1 + rng.uniform());
    const auto m = baseline_pool(s, PoolingMode::kMean);
    for (std::size_t j = 0; j < s.dim(); ++j) CHECK(std::abs(e.vector[j] - m.vector[j]) <= 1e-12);
  }
}

TEST_CASE("small alpha concentrates on the highest entropy token") {
  SeededRng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    auto s = oracle::random_sequence(rng, rng.uniform_int(2, 20), 5);
    const auto top = static_cast<std::size_t>(
        std::max_element(s.entropies.begin(), s.entropies.end()) - s.entropies.begin());
    // Guarantee a unique maximum.
    s.entropies[top] += 0.01;
    const auto f = egtp_pool(s, 1e-6);
    for (std::size_t j = 0; j < s.dim(); ++j)
      CHECK(f.vector[j] == doctest::Approx(s.states(top, j)).epsilon(1e-9));
  }
}

TEST_CASE("large alpha approaches the mean") {
  SeededRng rng(3);
  const auto s = oracle::random_sequence(rng, 12, 4);
  const auto e = egtp_pool(s, 1e9);
  const auto m = baseline_pool(s, PoolingMode::kMean);
  for (std::size_t j = 0; j < 4; ++j) CHECK(e.vector[j] == doctest::Approx(m.vector[j]).epsilon(1e-6));
}

TEST_CASE("egtp output lies in the per-coordinate hull of the states") {
  SeededRng rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    const auto s = oracle::random_sequence(rng, rng.uniform_int(1, 30), 6);
    const auto f = egtp_pool(s, 0.05 + 2.0 * rng.uniform());
    double wsum = 0.0;
    for (double w : f.weights) {
      CHECK(w >= 0.0);
      wsum += w;
    }
    CHECK(std::abs(wsum - 1.0) <= 1e-9);
    for (std::size_t j = 0; j < s.dim(); ++j) {
      double lo = 1e300, hi = -1e300;
      for (std::size_t t = 0; t < s.tokens(); ++t) {
        lo = std::min(lo, s.states(t, j));
        hi = std::max(hi, s.states(t, j));
      }
      CHECK(f.vector[j] >= lo - 1e-12);
      CHECK(f.vector[j] <= hi + 1e-12);
    }
  }
}

TEST_CASE("baseline pooling") {
  const auto s = make_seq({{1.0, 5.0}, {3.0, -1.0}, {2.0, 0.0}}, {0.1, 0.2, 0.3});
  CHECK(baseline_pool(s, PoolingMode::kMean).vector == std::vector<double>{2.0, 4.0 / 3.0});
  const auto mx = baseline_pool(s, PoolingMode::kMax);
  CHECK(mx.vector == std::vector<double>{3.0, 5.0});
  CHECK_FALSE(mx.affine);
  CHECK(baseline_pool(s, PoolingMode::kLast).vector == std::vector<double>{2.0, 0.0});
  CHECK(kind_of([&] { baseline_pool(s, PoolingMode::kEgtp); }) == ErrorKind::kUsage);
  CHECK(pool(s, PoolingMode::kEgtp, 1.0).vector == egtp_pool(s, 1.0).vector);
}

TEST_CASE("pooling mode names round trip") {
  for (auto m : {PoolingMode::kEgtp, PoolingMode::kMean, PoolingMode::kMax, PoolingMode::kLast})
    CHECK(parse_pooling(pooling_name(m)) == m);
  CHECK(kind_of([] { parse_pooling("median"); }) == ErrorKind::kUsage);
}

TEST_CASE("pooling rejects invalid input") {
  HiddenSequence empty;
  empty.states = Matrix(0, 3);
  CHECK_THROWS_AS(egtp_pool(empty, 1.0), Error);
  auto s = make_seq({{1.0}}, {0.5});
  CHECK(kind_of([&] { egtp_pool(s, 0.0); }) == ErrorKind::kDomain);
  s.entropies[0] = NAN;
  CHECK_THROWS_AS(egtp_pool(s, 1.0), Error);
}

TEST_CASE("prefix pooler matches pooling each prefix from scratch") {
  SeededRng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    auto s = oracle::random_sequence(rng, rng.uniform_int(1, 60), 7);
    // Rising entropies force repeated rescaling.
    for (std::size_t t = 0; t < s.tokens(); ++t) s.entropies[t] += 0.2 * double(t);
    const double alpha = 0.05 + rng.uniform();
    PrefixPooler pp(s.dim(), alpha);
    std::vector<double> out(s.dim());
    pp.current(out);
    for (double x : out) CHECK(x == 0.0);
    for (std::size_t t = 0; t < s.tokens(); ++t) {
      pp.push(s.states.row(t), s.entropies[t]);
      HiddenSequence prefix;
      prefix.states = Matrix(t + 1, s.dim());
      std::copy_n(s.states.data.begin(), (t + 1) * s.dim(), prefix.states.data.begin());
      prefix.entropies.assign(s.entropies.begin(), s.entropies.begin() + t + 1);
      const auto ref = egtp_pool(prefix, alpha);
      pp.current(out);
      CHECK(pp.count() == t + 1);
      for (std::size_t j = 0; j < s.dim(); ++j) CHECK(std::abs(out[j] - ref.vector[j]) <= 1e-12);
    }
  }
}

TEST_CASE("token importance is zero when the head cannot move the prediction") {
  SeededRng rng(6);
  const auto bins = oracle::random_bins(rng, 5, 100.0);
  const auto s = oracle::random_sequence(rng, 9, 4);
  // Zero weights: y_hat does not depend on h.
  auto head = oracle::random_head(rng, 5, 4);
  for (double& w : head.weights.data) w = 0.0;
  for (double v : token_importance(s, head, bins, 37.0, 1.0)) CHECK(v == 0.0);
  // Exact prediction: the squared error has a stationary point.
  head = oracle::random_head(rng, 5, 4);
  const auto f = egtp_pool(s, 1.0);
  const double y = forward(head, f.vector, bins).y_hat;
  for (double v : token_importance(s, head, bins, y, 1.0)) CHECK(std::abs(v) <= 1e-9);
}

TEST_CASE("token importance matches finite differences of the squared error") {
  SeededRng rng(7);
  int checked = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t d = rng.uniform_int(2, 6);
    const std::size_t k = rng.uniform_int(2, 8);
    const auto bins = oracle::random_bins(rng, k, 200.0);
    auto head = oracle::random_head(rng, k, d, 0.8);
    auto s = oracle::random_sequence(rng, rng.uniform_int(1, 8), d);
    const double alpha = 0.2 + rng.uniform();
    const double y = 1.0 + 199.0 * rng.uniform();
    const auto analytic = token_importance(s, head, bins, y, alpha);
    const auto loss = [&] {
      // Weights fixed: entropies are untouched while states move.
      const auto w = softmax(s.entropies, alpha);
      std::vector<double> pooled(d, 0.0);
      for (std::size_t t = 0; t < s.tokens(); ++t)
        for (std::size_t j = 0; j < d; ++j) pooled[j] += w[t] * s.states(t, j);
      const double e = y - forward(head, pooled, bins).y_hat;
      return e * e;
    };
    const auto grad = oracle::central_differences(s.states.data, loss, 1e-6);
    for (std::size_t t = 0; t < s.tokens(); ++t) {
      double norm = 0.0;
      for (std::size_t j = 0; j < d; ++j) norm += grad[t * d + j] * grad[t * d + j];
      norm = std::sqrt(norm);
      CHECK(std::abs(analytic[t] - norm) <= 1e-5 * std::max(1.0, norm));
      ++checked;
    }
  }
  CHECK(checked >= 100);
}

TEST_CASE("summary of affine importances has unit correlation and rising bins") {
  SeededRng rng(8);
  std::vector<double> h, imp;
  for (int i = 0; i < 1000; ++i) {
    h.push_back(3.0 * rng.uniform());
    imp.push_back(2.0 * h.back() + 0.5);
  }
  const auto r = summarize_entropy_importance(h, imp, 5);
  CHECK(r.pearson_r == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.tokens == 1000);
  std::size_t total = 0;
  for (std::size_t b = 0; b < 5; ++b) {
    total += r.bin_counts[b];
    if (b > 0) CHECK(r.bin_mean_importance[b] > r.bin_mean_importance[b - 1]);
  }
  CHECK(total == 1000);
  CHECK(r.entropy_min == *std::min_element(h.begin(), h.end()));
  CHECK(r.entropy_max == *std::max_element(h.begin(), h.end()));
}

TEST_CASE("summary binning on a hand example") {
  const std::vector<double> h{0.0, 0.5, 1.0, 9.0, 10.0};
  const std::vector<double> imp{1.0, 3.0, 5.0, 7.0, 9.0};
  const auto r = summarize_entropy_importance(h, imp, 5);
  CHECK(r.bin_counts == std::vector<std::size_t>{3, 0, 0, 0, 2});
  CHECK(r.bin_mean_importance[0] == doctest::Approx(3.0));
  CHECK(std::isnan(r.bin_mean_importance[2]));
  CHECK(r.bin_mean_importance[4] == doctest::Approx(8.0));
}

TEST_CASE("constant entropies make the correlation undefined") {
  const std::vector<double> h(10, 0.7);
  std::vector<double> imp(10);
  for (int i = 0; i < 10; ++i) imp[i] = i;
  CHECK(kind_of([&] { summarize_entropy_importance(h, imp, 5); }) ==
        ErrorKind::kUndefinedCorrelation);
}

TEST_CASE("report over a dataset agrees with direct summary") {
  SeededRng rng(9);
  const auto bins = oracle::random_bins(rng, 4, 50.0);
  const auto head = oracle::random_head(rng, 4, 3);
  Dataset ds;
  std::vector<double> h, imp;
  for (int i = 0; i < 6; ++i) {
    ActivationRecord r;
    r.id = "r" + std::to_string(5 - i);
    r.prompt = oracle::random_sequence(rng, rng.uniform_int(2, 10), 3);
    r.length = static_cast<std::uint32_t>(rng.uniform_int(1, 50));
    ds.push_back(r);
  }
  // Expected concatenation order is by id.
  for (int i = 5; i >= 0; --i) {
    const auto& r = ds[i];
    const auto v = token_importance(r.prompt, head, bins, r.length, 1.0);
    h.insert(h.end(), r.prompt.entropies.begin(), r.prompt.entropies.end());
    imp.insert(imp.end(), v.begin(), v.end());
  }
  const auto direct = summarize_entropy_importance(h, imp, 5);
  const auto rep = entropy_importance_report(ds, head, bins, 1.0, 5);
  CHECK(rep.pearson_r == direct.pearson_r);
  CHECK(rep.bin_counts == direct.bin_counts);
}
