#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace forelen {

struct Job {
  std::string id;
  std::uint32_t prompt_len = 1;
  std::uint32_t true_out = 1;
  std::uint32_t predicted_out = 1;
  double submit_time = 0.0;
};

struct CostModel {
  double prefill_per_token = 1e-4;  // seconds
  double decode_per_step = 2e-3;    // seconds

  void validate() const;
};

enum class PolicyKind { kFcfs, kRandom, kSjfOracle, kSjfPredicted };

struct Policy {
  PolicyKind kind = PolicyKind::kFcfs;
  std::uint64_t seed = 42;  // kRandom only

  std::string name() const;
};

// "fcfs", "random", "random:<seed>", "sjf_oracle", "sjf_predicted".
Policy parse_policy(std::string_view text, std::uint64_t default_seed = 42);

// A batch lists indices into the job vector.
using Batch = std::vector<std::size_t>;
using BatchPlan = std::vector<Batch>;

BatchPlan plan_batches(const std::vector<Job>& jobs, const Policy& policy, std::size_t batch_size);

struct JobOutcome {
  std::string id;
  double completion_time = 0.0;
  double jct = 0.0;
};

struct SimReport {
  std::string policy;
  std::vector<JobOutcome> jobs;
  BatchPlan plan;
  double total_time = 0.0;
  double throughput = 0.0;  // jobs / second
  double mean_jct = 0.0;
  double padding_ratio = 0.0;
  std::uint64_t allocated_tokens = 0;
  std::uint64_t actual_tokens = 0;
};

// Batches run back to back; a batch starts once the previous one finished and
// all of its jobs have been submitted, takes prefill * max prompt + decode *
// max true_out, and completes all its jobs together.
SimReport simulate(const BatchPlan& plan, const std::vector<Job>& jobs, const CostModel& cost);

std::vector<SimReport> compare_policies(const std::vector<Job>& jobs,
                                        const std::vector<Policy>& policies,
                                        std::size_t batch_size, const CostModel& cost);

// Poisson arrivals at `rate` jobs/second in input order (optional mode).
void assign_poisson_arrivals(std::vector<Job>& jobs, double rate, std::uint64_t seed);

// id,prompt_len,true_out,predicted_out[,submit_time]; '#' lines are skipped.
std::vector<Job> read_jobs_csv(std::istream& in);
void write_jobs_csv(std::ostream& out, const std::vector<Job>& jobs);

// policy,throughput,mean_jct,padding_ratio
void write_comparison_csv(std::ostream& out, const std::vector<SimReport>& reports);

}  // namespace forelen
