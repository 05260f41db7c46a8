// Acceptance suite. Prints one [PASS]/[FAIL] line per criterion and exits
// nonzero if any criterion fails. Tolerances are pinned here, not tuned at
// run time.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "forelen/dataio.hpp"
#include "forelen/error.hpp"
#include "forelen/head.hpp"
#include "forelen/plp.hpp"
#include "forelen/pooling.hpp"
#include "forelen/schedsim.hpp"
#include "forelen/trainer.hpp"
#include "oracles.hpp"

using namespace forelen;

namespace {

constexpr double kGradTolerance = 1e-4;
constexpr double kPoolingMargin = 0.05;
constexpr double kMinPearson = 0.3;
constexpr double kPlpGain = 0.9;
constexpr double kPlpNoise = 0.02;
constexpr double kOraclePaddingFactor = 0.5;
// Learning rate used for every trained model below. The published 2e-5 does
// not move a zero-initialized head in 10 epochs at this data scale.
constexpr double kDeskLearningRate = 0.03;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

// Shared pipeline state, built once.
struct Pipeline {
  Dataset all;
  DataSplit parts;
  TrainConfig config;
  TrainResult egtp;
  double test_mae_egtp = 0.0;
  double train_seconds = 0.0;
};

Pipeline& pipeline() {
  static Pipeline p = [] {
    Pipeline s;
    const auto start = Clock::now();
    SynthConfig sc;  // seed 42, 2500 records
    s.all = decode_dump(encode_dump(synth_generate(sc)));
    s.parts = split(s.all, {3, 1, 1}, 42);
    s.config.learning_rate = kDeskLearningRate;
    s.egtp = train(s.parts.train, s.parts.val, s.config);
    s.test_mae_egtp = evaluate(s.egtp.params, s.egtp.bins, s.parts.test, PoolingMode::kEgtp,
                               s.config.alpha)
                          .mae;
    s.train_seconds = seconds_since(start);
    return s;
  }();
  return p;
}

Outcome gradient_correctness() {
  Outcome o;
  const auto start = Clock::now();
  SeededRng rng(1001);
  double worst_head = 0.0, worst_plp = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = rng.uniform_int(1, 20);
    const std::size_t d = rng.uniform_int(1, 8);
    const auto bins = oracle::random_bins(rng, k, 500.0);
    auto head = oracle::random_head(rng, k, d);
    std::vector<double> h(d);
    for (double& x : h) x = rng.normal();
    const double len = 1.0 + 499.0 * rng.uniform();
    const auto g = loss_gradients(head, h, len, bins);
    const auto f = [&] { return oracle::joint_loss_direct(head, h, len, bins); };
    worst_head = std::max({worst_head,
                           oracle::relative_l2_error(g.d_weights.data,
                                                     oracle::central_differences(head.weights.data, f)),
                           oracle::relative_l2_error(g.d_bias, oracle::central_differences(head.bias, f)),
                           oracle::relative_l2_error(g.d_input, oracle::central_differences(h, f))});
  }
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t total = rng.uniform_int(1, 20);
    const std::size_t d = rng.uniform_int(1, 5);
    const std::size_t k = rng.uniform_int(1, 10);
    PlpExample ex;
    ex.id = "g";
    ex.prompt_feature.resize(d);
    for (double& x : ex.prompt_feature) x = rng.normal();
    ex.generated = oracle::random_sequence(rng, total, d);
    const auto bins = oracle::random_bins(rng, k, double(total) + 1.0);
    auto head = oracle::random_head(rng, k, 2 * d);
    const auto r = plp_sequence_loss(ex, head, bins, 1.0);
    const auto f = [&] {
      double s = 0.0;
      for (std::size_t t = 0; t < total; ++t)
        s += oracle::joint_loss_direct(head, aggregate(ex.prompt_feature, ex.generated, t, 1.0),
                                       double(total - t), bins);
      return s / double(total);
    };
    worst_plp = std::max(
        {worst_plp,
         oracle::relative_l2_error(r.grads.d_weights.data,
                                   oracle::central_differences(head.weights.data, f)),
         oracle::relative_l2_error(r.grads.d_bias, oracle::central_differences(head.bias, f))});
  }
  const double elapsed = seconds_since(start);
  o.check(worst_head < kGradTolerance, "head rel L2 " + fmt(worst_head));
  o.check(worst_plp < kGradTolerance, "PLP rel L2 " + fmt(worst_plp));
  o.check(elapsed < 60.0, "runtime " + fmt(elapsed) + " s");
  o.note("worst head " + fmt(worst_head) + ", worst PLP " + fmt(worst_plp) + ", " + fmt(elapsed) +
         " s");
  return o;
}

Outcome distribution_invariants() {
  Outcome o;
  SeededRng rng(1002);
  std::size_t bad_sum = 0, bad_argmax = 0, bad_symmetry = 0, bad_yhat = 0, symmetric_cases = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t k = rng.uniform_int(1, 50);
    const auto bins = oracle::random_bins(rng, k, 1000.0);
    const double y = 1000.0 * rng.uniform();
    const auto truth = bins.locate(y).index;
    const auto p = soft_label(y, bins);
    double sum = 0.0;
    for (double x : p) sum += x;
    bad_sum += std::abs(sum - 1.0) > 1e-12;
    bad_argmax += std::size_t(std::max_element(p.begin(), p.end()) - p.begin()) != truth;
    if (2 * truth + 1 == k) {
      ++symmetric_cases;
      for (std::size_t j = 0; j < k; ++j) bad_symmetry += std::abs(p[j] - p[k - 1 - j]) > 1e-15;
    }
    const auto head = oracle::random_head(rng, k, 3, 2.0);
    const std::vector<double> h{rng.normal(), rng.normal(), rng.normal()};
    const auto out = forward(head, h, bins);
    double expect = 0.0;
    for (std::size_t i = 0; i < k; ++i) expect += out.p_hat[i] * bins.centers[i];
    bad_yhat += std::abs(out.y_hat - expect) > 1e-9;
  }
  o.check(bad_sum == 0, std::to_string(bad_sum) + " sums off");
  o.check(bad_argmax == 0, std::to_string(bad_argmax) + " argmax misses");
  o.check(bad_symmetry == 0, std::to_string(bad_symmetry) + " asymmetric entries");
  o.check(symmetric_cases > 0, "no central-bin cases drawn");
  o.check(bad_yhat == 0, std::to_string(bad_yhat) + " y_hat mismatches");
  o.note("10000 pairs, " + std::to_string(symmetric_cases) + " central");
  return o;
}

Outcome pooling_ablation() {
  Outcome o;
  auto& p = pipeline();
  const auto start = Clock::now();
  double worst_ratio = 0.0;
  std::string detail = "egtp " + fmt(p.test_mae_egtp);
  for (auto mode : {PoolingMode::kMean, PoolingMode::kMax, PoolingMode::kLast}) {
    auto c = p.config;
    c.pooling = mode;
    const auto r = train(p.parts.train, p.parts.val, c);
    const double mae = evaluate(r.params, r.bins, p.parts.test, mode, c.alpha).mae;
    const double ratio = p.test_mae_egtp / mae;
    worst_ratio = std::max(worst_ratio, ratio);
    o.check(p.test_mae_egtp <= (1.0 - kPoolingMargin) * mae,
            std::string(pooling_name(mode)) + " margin too small");
    detail += ", " + std::string(pooling_name(mode)) + " " + fmt(mae);
  }
  const double elapsed = seconds_since(start) + p.train_seconds;
  o.check(elapsed < 300.0, "runtime " + fmt(elapsed) + " s");
  o.note("test MAE " + detail + ", " + fmt(elapsed) + " s");
  return o;
}

Outcome entropy_importance() {
  Outcome o;
  auto& p = pipeline();
  const auto r = entropy_importance_report(p.parts.test, p.egtp.params, p.egtp.bins,
                                           p.config.alpha, 5);
  o.check(r.pearson_r > kMinPearson, "r = " + fmt(r.pearson_r));
  // Empty entropy bins carry no mean; ordering is checked across populated bins.
  double previous = -INFINITY;
  std::string means;
  for (std::size_t b = 0; b < r.bin_mean_importance.size(); ++b) {
    means += (b ? "/" : "") + (r.bin_counts[b] ? fmt(r.bin_mean_importance[b]) : std::string("-"));
    if (r.bin_counts[b] == 0) continue;
    o.check(r.bin_mean_importance[b] >= previous, "bin " + std::to_string(b + 1) + " decreases");
    previous = r.bin_mean_importance[b];
  }
  o.note("r = " + fmt(r.pearson_r) + ", bin means " + means);
  return o;
}

Outcome plp_improvement() {
  Outcome o;
  auto& p = pipeline();
  const auto r = plp_train(p.parts.train, p.parts.val, p.config);
  const auto test = make_plp_examples(p.parts.test, p.config.alpha).examples;
  const std::vector<double> fractions{0.0, 0.25, 0.5, 0.75};
  const auto curve = plp_eval_curve(r.params, r.bins, test, fractions, p.config.alpha);
  o.check(curve[3].mae <= kPlpGain * curve[0].mae, "0.75 point not below 0.9 x start");
  std::string pts;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    pts += (i ? ", " : "") + fmt(curve[i].mae);
    if (i > 0)
      o.check(curve[i].mae <= (1.0 + kPlpNoise) * curve[i - 1].mae,
              "rise at fraction " + fmt(curve[i].fraction));
  }
  o.note("MAE at 0/0.25/0.5/0.75: " + pts);
  return o;
}

Outcome scheduler_ordering() {
  Outcome o;
  auto& p = pipeline();
  SynthConfig sc;
  sc.num_records = 512;
  sc.seed = 7;
  sc.with_response = false;
  const Dataset workload = decode_dump(encode_dump(synth_generate(sc)));
  const auto preds = evaluate(p.egtp.params, p.egtp.bins, workload, PoolingMode::kEgtp,
                              p.config.alpha);
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < workload.size(); ++i) {
    jobs.push_back({workload[i].id, static_cast<std::uint32_t>(workload[i].prompt.tokens()),
                    workload[i].length,
                    static_cast<std::uint32_t>(std::max(1.0, std::round(preds.entries[i].y_hat))),
                    0.0});
  }
  const auto reports = compare_policies(
      jobs, {parse_policy("fcfs"), parse_policy("sjf_oracle"), parse_policy("sjf_predicted")}, 16,
      CostModel{});
  const auto& fcfs = reports[0];
  const auto& oracle = reports[1];
  const auto& predicted = reports[2];
  o.check(oracle.padding_ratio <= kOraclePaddingFactor * fcfs.padding_ratio,
          "oracle padding not below half of fcfs");
  o.check(predicted.padding_ratio >= oracle.padding_ratio &&
              predicted.padding_ratio <= fcfs.padding_ratio,
          "predicted padding outside [oracle, fcfs]");
  // Metric orderings must follow the padding ordering, oracle first.
  const auto agree = [&](auto metric, bool lower_is_better, const char* name) {
    const auto better = [&](const SimReport& a, const SimReport& b) {
      return lower_is_better ? metric(a) <= metric(b) : metric(a) >= metric(b);
    };
    o.check(better(oracle, predicted) && better(predicted, fcfs),
            std::string(name) + " ordering disagrees");
  };
  agree([](const SimReport& r) { return r.mean_jct; }, true, "JCT");
  agree([](const SimReport& r) { return r.throughput; }, false, "throughput");
  o.note("padding fcfs " + fmt(fcfs.padding_ratio) + ", oracle " + fmt(oracle.padding_ratio) +
         ", predicted " + fmt(predicted.padding_ratio) + "; throughput " + fmt(fcfs.throughput) +
         "/" + fmt(oracle.throughput) + "/" + fmt(predicted.throughput));
  return o;
}

Outcome loss_reductions() {
  Outcome o;
  SeededRng rng(1007);
  double worst_ce = 0.0, worst_mse = 0.0, lowest_gap = INFINITY;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = rng.uniform_int(1, 30);
    const std::size_t d = rng.uniform_int(1, 6);
    const auto bins = oracle::random_bins(rng, k, 300.0);
    auto head = oracle::random_head(rng, k, d, 1.5);
    std::vector<double> h(d);
    for (double& x : h) x = rng.normal();
    const double len = 1.0 + 299.0 * rng.uniform();
    const auto out = forward(head, h, bins);
    const auto label = soft_label(len, bins);

    // Pure softmax cross entropy and its gradient.
    head.lambda = 1.0;
    auto g = loss_gradients(head, h, len, bins);
    double ce = 0.0;
    for (std::size_t i = 0; i < k; ++i) ce -= label[i] * out.log_p_hat[i];
    worst_ce = std::max(worst_ce, std::abs(g.loss - ce));
    for (std::size_t i = 0; i < k; ++i) {
      const double du = out.p_hat[i] - label[i];
      worst_ce = std::max(worst_ce, std::abs(g.d_bias[i] - du));
      for (std::size_t j = 0; j < d; ++j)
        worst_ce = std::max(worst_ce, std::abs(g.d_weights(i, j) - du * h[j]));
    }

    // Pure normalized squared error and its gradient.
    head.lambda = 0.0;
    g = loss_gradients(head, h, len, bins);
    const double s = head.norm_scale;
    const double e = (len - out.y_hat) / s;
    worst_mse = std::max(worst_mse, std::abs(g.loss - e * e));
    for (std::size_t i = 0; i < k; ++i) {
      const double du = 2.0 * (out.y_hat - len) / (s * s) * out.p_hat[i] * (bins.centers[i] - out.y_hat);
      worst_mse = std::max(worst_mse, std::abs(g.d_bias[i] - du));
    }

    head.lambda = rng.uniform();
    const double l = joint_loss(label, out, len, head);
    lowest_gap = std::min(lowest_gap, l - head.lambda * entropy(label));
  }
  o.check(worst_ce <= 1e-12, "CE mismatch " + fmt(worst_ce));
  o.check(worst_mse <= 1e-12, "MSE mismatch " + fmt(worst_mse));
  o.check(lowest_gap >= -1e-9, "L - lambda H(p) = " + fmt(lowest_gap));
  o.note("max CE dev " + fmt(worst_ce) + ", max MSE dev " + fmt(worst_mse) + ", min gap " +
         fmt(lowest_gap));
  return o;
}

Outcome adamw_unit() {
  Outcome o;
  TrainConfig c;
  c.learning_rate = 0.01;
  auto p = HeadParams::zeros(1, 1, 0.5, 1.0);
  auto s = OptimizerState::for_params(p);
  auto g = HeadGradients::zeros(1, 1);
  g.d_weights(0, 0) = 1.0;
  adamw_step(p, s, g, c);
  // m_hat = 1, v_hat = 1, decay term vanishes at theta = 0.
  const double expect = -0.01 / (1.0 + c.epsilon);
  const double first = p.weights(0, 0);
  o.check(std::abs(first - expect) <= 1e-9, "first step " + fmt(first));

  c.learning_rate = 0.1;
  c.weight_decay = 0.01;
  p = HeadParams::zeros(1, 1, 0.5, 1.0);
  p.weights(0, 0) = 3.0;
  p.bias[0] = -2.0;
  s = OptimizerState::for_params(p);
  g = HeadGradients::zeros(1, 1);
  double w = 3.0, b = -2.0, worst = 0.0;
  for (int step = 0; step < 20; ++step) {
    adamw_step(p, s, g, c);
    w *= 1.0 - c.learning_rate * c.weight_decay;
    b *= 1.0 - c.learning_rate * c.weight_decay;
    worst = std::max({worst, std::abs(p.weights(0, 0) - w) / std::abs(w),
                      std::abs(p.bias[0] - b) / std::abs(b)});
  }
  o.check(worst <= 1e-14, "decay deviates by " + fmt(worst));
  o.note("first step " + fmt(first) + ", decay rel dev " + fmt(worst));
  return o;
}

template <typename Fn>
ErrorKind caught_kind(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::kIo;
}

Outcome determinism_and_format() {
  Outcome o;
  auto& p = pipeline();
  SynthConfig sc;
  sc.num_records = 300;
  sc.seed = 99;
  const auto dump_a = encode_dump(synth_generate(sc));
  const auto dump_b = encode_dump(synth_generate(sc));
  o.check(dump_a == dump_b, "synth dumps differ");
  o.check(encode_dump(decode_dump(dump_a)) == dump_a, "dump round trip not byte-identical");

  const Dataset small = decode_dump(dump_a);
  const auto parts = split(small, {3, 1, 1}, 42);
  auto c = p.config;
  c.epochs = 3;
  const auto csv = [](auto writer) {
    std::ostringstream s;
    writer(s);
    return s.str();
  };
  const auto stage = [&] {
    std::vector<std::string> outputs;
    const auto model = train(parts.train, parts.val, c);
    const auto bytes = encode_head(model.params, model.bins);
    outputs.emplace_back(bytes.begin(), bytes.end());
    outputs.push_back(csv([&](std::ostream& s) { write_history_csv(s, model.history); }));
    const auto preds = evaluate(model.params, model.bins, parts.test, c.pooling, c.alpha);
    outputs.push_back(csv([&](std::ostream& s) { write_predictions_csv(s, preds); }));
    const auto plp = plp_train(parts.train, parts.val, c);
    const auto pb = encode_head(plp.params, plp.bins);
    outputs.emplace_back(pb.begin(), pb.end());
    const auto curve = plp_eval_curve(plp.params, plp.bins,
                                      make_plp_examples(parts.test, c.alpha).examples,
                                      std::vector<double>{0.0, 0.25, 0.5, 0.75}, c.alpha);
    outputs.push_back(csv([&](std::ostream& s) { write_curve_csv(s, curve); }));
    std::vector<Job> jobs;
    for (std::size_t i = 0; i < parts.test.size(); ++i)
      jobs.push_back({parts.test[i].id, std::uint32_t(parts.test[i].prompt.tokens()),
                      parts.test[i].length,
                      std::uint32_t(std::max(1.0, std::round(preds.entries[i].y_hat))), 0.0});
    const auto reports = compare_policies(
        jobs, {parse_policy("fcfs"), parse_policy("random"), parse_policy("sjf_predicted")}, 16,
        CostModel{});
    outputs.push_back(csv([&](std::ostream& s) { write_comparison_csv(s, reports); }));
    return outputs;
  };
  o.check(stage() == stage(), "rerun outputs differ");

  auto bad = dump_a;
  bad[0] = 'X';
  o.check(caught_kind([&] { decode_dump(bad); }) == ErrorKind::kMagicMismatch, "magic kind");
  bad = dump_a;
  bad[4] = 7;
  o.check(caught_kind([&] { decode_dump(bad); }) == ErrorKind::kVersionMismatch, "version kind");
  bad.assign(dump_a.begin(), dump_a.end() - 5);
  o.check(caught_kind([&] { decode_dump(bad); }) == ErrorKind::kTruncated, "truncation kind");
  bad = dump_a;
  bad[12] = bad[13] = bad[14] = bad[15] = 0;
  o.check(caught_kind([&] { decode_dump(bad); }) == ErrorKind::kEmptyPrompt, "empty prompt kind");
  auto model = encode_head(p.egtp.params, p.egtp.bins);
  model[1] = '?';
  HeadParams hp;
  BinLayout hb;
  o.check(caught_kind([&] { decode_head(model, hp, hb); }) == ErrorKind::kMagicMismatch,
          "model magic kind");
  try {
    decode_head(model, hp, hb);
  } catch (const Error& e) {
    o.check(std::string(e.what()).rfind(std::string(kind_name(ErrorKind::kMagicMismatch)), 0) == 0,
            "message does not lead with the kind");
  }
  o.note("6 stage outputs rerun identical, 5 corruption kinds named");
  return o;
}

Outcome split_contract() {
  Outcome o;
  SynthConfig sc;
  sc.num_records = 100;
  sc.with_response = false;
  const auto ds = synth_generate(sc);
  const auto s = split(ds, {3, 1, 1}, 42);
  o.check(s.train.size() == 60 && s.val.size() == 20 && s.test.size() == 20,
          "sizes " + std::to_string(s.train.size()) + "/" + std::to_string(s.val.size()) + "/" +
              std::to_string(s.test.size()));
  std::set<std::string> ids;
  bool disjoint = true;
  for (const auto* part : {&s.train, &s.val, &s.test})
    for (const auto& r : *part) disjoint &= ids.insert(r.id).second;
  o.check(disjoint, "parts overlap");
  o.check(ids.size() == 100, "parts do not cover all records");
  o.note(std::to_string(s.train.size()) + "/" + std::to_string(s.val.size()) + "/" +
         std::to_string(s.test.size()));
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"distribution invariants", distribution_invariants},
      {"pooling ablation ordering", pooling_ablation},
      {"entropy-importance correlation", entropy_importance},
      {"progressive prediction improvement", plp_improvement},
      {"scheduler ordering", scheduler_ordering},
      {"loss reductions", loss_reductions},
      {"AdamW unit check", adamw_unit},
      {"determinism and format", determinism_and_format},
      {"split contract", split_contract},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failures += !o.pass;
    std::printf("[%s] %2zu %s (%s) [%.1f s]\n", o.pass ? "PASS" : "FAIL", i + 1,
                criteria[i].first.c_str(), o.detail.c_str(), seconds_since(start));
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
