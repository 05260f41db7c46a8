#include "forelen/schedsim.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include "forelen/error.hpp"
#include "forelen/numerics.hpp"

namespace forelen {

void CostModel::validate() const {
  require(std::isfinite(prefill_per_token) && prefill_per_token > 0.0 &&
              std::isfinite(decode_per_step) && decode_per_step > 0.0,
          ErrorKind::kUsage, "cost model constants must be positive");
}

std::string Policy::name() const {
  switch (kind) {
    case PolicyKind::kFcfs: return "fcfs";
    case PolicyKind::kRandom: return "random:" + std::to_string(seed);
    case PolicyKind::kSjfOracle: return "sjf_oracle";
    case PolicyKind::kSjfPredicted: return "sjf_predicted";
  }
  return "unknown";
}

Policy parse_policy(std::string_view text, std::uint64_t default_seed) {
  if (text == "fcfs") return {PolicyKind::kFcfs, default_seed};
  if (text == "sjf_oracle") return {PolicyKind::kSjfOracle, default_seed};
  if (text == "sjf_predicted") return {PolicyKind::kSjfPredicted, default_seed};
  if (text == "random") return {PolicyKind::kRandom, default_seed};
  if (text.starts_with("random:")) {
    std::uint64_t seed = 0;
    const auto digits = text.substr(7);
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), seed);
    if (ec == std::errc() && ptr == digits.data() + digits.size() && !digits.empty()) {
      return {PolicyKind::kRandom, seed};
    }
  }
  fail(ErrorKind::kUsage, "unknown policy '" + std::string(text) + "'");
}

BatchPlan plan_batches(const std::vector<Job>& jobs, const Policy& policy,
                       std::size_t batch_size) {
  require(batch_size >= 1, ErrorKind::kUsage, "batch size must be at least 1");
  require(!jobs.empty(), ErrorKind::kUsage, "no jobs to schedule");
  std::vector<std::size_t> order(jobs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto by_key = [&](auto key) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const auto ka = key(jobs[a]), kb = key(jobs[b]);
      if (ka != kb) return ka < kb;
      return jobs[a].id < jobs[b].id;
    });
  };
  switch (policy.kind) {
    case PolicyKind::kFcfs:
      break;
    case PolicyKind::kRandom: {
      SeededRng rng(policy.seed);
      rng.shuffle(order);
      break;
    }
    case PolicyKind::kSjfOracle:
      by_key([](const Job& j) { return j.true_out; });
      break;
    case PolicyKind::kSjfPredicted:
      by_key([](const Job& j) { return j.predicted_out; });
      break;
  }
  BatchPlan plan;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t stop = std::min(order.size(), start + batch_size);
    plan.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                      order.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  return plan;
}

SimReport simulate(const BatchPlan& plan, const std::vector<Job>& jobs, const CostModel& cost) {
  cost.validate();
  require(!jobs.empty(), ErrorKind::kUsage, "no jobs to simulate");
  std::vector<int> seen(jobs.size(), 0);
  for (const auto& batch : plan) {
    require(!batch.empty(), ErrorKind::kConsistency, "plan contains an empty batch");
    for (std::size_t idx : batch) {
      require(idx < jobs.size(), ErrorKind::kConsistency, "plan references an unknown job");
      ++seen[idx];
    }
  }
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    require(seen[i] == 1, ErrorKind::kConsistency,
            "job " + jobs[i].id + " appears " + std::to_string(seen[i]) + " times in the plan");
  }

  SimReport r;
  r.plan = plan;
  r.jobs.resize(jobs.size());
  double clock = 0.0;
  double jct_sum = 0.0;
  for (const auto& batch : plan) {
    std::uint32_t max_prompt = 0, max_out = 0;
    double ready = clock;
    for (std::size_t idx : batch) {
      max_prompt = std::max(max_prompt, jobs[idx].prompt_len);
      max_out = std::max(max_out, jobs[idx].true_out);
      ready = std::max(ready, jobs[idx].submit_time);
    }
    clock = ready + cost.prefill_per_token * max_prompt + cost.decode_per_step * max_out;
    for (std::size_t idx : batch) {
      r.jobs[idx] = {jobs[idx].id, clock, clock - jobs[idx].submit_time};
      jct_sum += clock - jobs[idx].submit_time;
      r.allocated_tokens += max_out;
      r.actual_tokens += jobs[idx].true_out;
    }
  }
  const auto n = static_cast<double>(jobs.size());
  r.total_time = clock;
  r.throughput = n / clock;
  r.mean_jct = jct_sum / n;
  r.padding_ratio = static_cast<double>(r.allocated_tokens - r.actual_tokens) /
                    static_cast<double>(r.actual_tokens);
  return r;
}

std::vector<SimReport> compare_policies(const std::vector<Job>& jobs,
                                        const std::vector<Policy>& policies,
                                        std::size_t batch_size, const CostModel& cost) {
  require(!policies.empty(), ErrorKind::kUsage, "no policies to compare");
  std::vector<SimReport> out;
  for (const auto& p : policies) {
    SimReport r = simulate(plan_batches(jobs, p, batch_size), jobs, cost);
    r.policy = p.name();
    out.push_back(std::move(r));
  }
  return out;
}

void assign_poisson_arrivals(std::vector<Job>& jobs, double rate, std::uint64_t seed) {
  require(std::isfinite(rate) && rate > 0.0, ErrorKind::kUsage, "arrival rate must be positive");
  SeededRng rng(seed);
  double t = 0.0;
  for (auto& j : jobs) {
    t += rng.exponential(rate);
    j.submit_time = t;
  }
}

namespace {

template <typename T>
T parse_field(std::string_view s, const char* what, std::size_t line_no) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    fail(ErrorKind::kMalformed, std::string("jobs CSV line ") + std::to_string(line_no) +
                                    ": bad " + what + " '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? comma : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

std::vector<Job> read_jobs_csv(std::istream& in) {
  std::vector<Job> jobs;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto cols = split_csv(line);
    if (!header_seen) {
      header_seen = true;
      if (cols.front() == "id") continue;
    }
    require(cols.size() == 4 || cols.size() == 5, ErrorKind::kMalformed,
            "jobs CSV line " + std::to_string(line_no) + " needs 4 or 5 columns");
    Job j;
    j.id = std::string(cols[0]);
    j.prompt_len = parse_field<std::uint32_t>(cols[1], "prompt_len", line_no);
    j.true_out = parse_field<std::uint32_t>(cols[2], "true_out", line_no);
    j.predicted_out = std::max<std::uint32_t>(
        1, parse_field<std::uint32_t>(cols[3], "predicted_out", line_no));
    if (cols.size() == 5) j.submit_time = parse_field<double>(cols[4], "submit_time", line_no);
    require(j.prompt_len >= 1 && j.true_out >= 1, ErrorKind::kMalformed,
            "jobs CSV line " + std::to_string(line_no) + " has a zero length");
    jobs.push_back(std::move(j));
  }
  return jobs;
}

void write_jobs_csv(std::ostream& out, const std::vector<Job>& jobs) {
  out << "id,prompt_len,true_out,predicted_out,submit_time\n";
  for (const auto& j : jobs) {
    out << j.id << ',' << j.prompt_len << ',' << j.true_out << ',' << j.predicted_out << ','
        << format_real(j.submit_time) << '\n';
  }
}

void write_comparison_csv(std::ostream& out, const std::vector<SimReport>& reports) {
  out << "policy,throughput,mean_jct,padding_ratio\n";
  for (const auto& r : reports) {
    out << r.policy << ',' << format_real(r.throughput) << ',' << format_real(r.mean_jct) << ','
        << format_real(r.padding_ratio) << '\n';
  }
}

}  // namespace forelen
