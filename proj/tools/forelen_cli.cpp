// forelen: synthesize activation dumps, train and evaluate length predictors,
// and compare batch scheduling policies.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "CLI11.hpp"
#include "forelen/dataio.hpp"
#include "forelen/error.hpp"
#include "forelen/kernels.hpp"
#include "forelen/plp.hpp"
#include "forelen/schedsim.hpp"
#include "forelen/trainer.hpp"

namespace {

using namespace forelen;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct DataFlags {
  std::string data;
  std::vector<double> ratios{3, 1, 1};
  std::uint64_t split_seed = 42;
  std::string part = "test";
};

void add_data_flags(CLI::App* cmd, DataFlags& f, bool with_part) {
  cmd->add_option("--data", f.data, "Activation dump (FLEN)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--split", f.ratios, "train,val,test ratios (published ratio 3:1:1)")
      ->delimiter(',')
      ->expected(3)
      ->capture_default_str();
  cmd->add_option("--split-seed", f.split_seed, "Seed of the split shuffle")->capture_default_str();
  if (with_part) {
    cmd->add_option("--part", f.part, "Split part to use")
        ->check(CLI::IsMember({"train", "val", "test", "all"}))
        ->capture_default_str();
  }
}

struct TrainFlags {
  TrainConfig config;
  std::string pooling = "egtp";
  std::string scheme = "quantile";
  bool raw_mse = false;
  bool log_target = false;
  bool no_standardize = false;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f, bool with_pooling) {
  auto& c = f.config;
  cmd->add_option("--lr", c.learning_rate, "AdamW learning rate (published recipe: 2e-5)")
      ->capture_default_str();
  cmd->add_option("--epochs", c.epochs, "Maximum epochs; best-validation epoch is kept (published recipe: 10)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--batch-size", c.batch_size, "Mini-batch size (published recipe: 16)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--seed", c.seed, "Shuffle seed; epoch e uses seed + e (published recipe: 42)")
      ->capture_default_str();
  cmd->add_option("--lambda", c.lambda, "CE weight in the joint loss (published recipe: 0.95)")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  cmd->add_option("--bins", c.bins, "Number of length bins K (published recipe: 20)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--beta1", c.beta1, "AdamW beta1")->capture_default_str();
  cmd->add_option("--beta2", c.beta2, "AdamW beta2")->capture_default_str();
  cmd->add_option("--epsilon", c.epsilon, "AdamW epsilon")->capture_default_str();
  cmd->add_option("--weight-decay", c.weight_decay, "AdamW decoupled weight decay")
      ->capture_default_str();
  cmd->add_option("--alpha", c.alpha, "EGTP softmax temperature")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  if (with_pooling) {
    cmd->add_option("--pooling", f.pooling, "Prompt pooling")
        ->check(CLI::IsMember({"egtp", "mean", "max", "last"}))
        ->capture_default_str();
  }
  cmd->add_option("--bin-scheme", f.scheme, "Bin placement")
      ->check(CLI::IsMember({"quantile", "equal-width"}))
      ->capture_default_str();
  cmd->add_flag("--raw-mse", f.raw_mse,
                "Do not divide the regression error by the largest training length");
  cmd->add_flag("--log-target", f.log_target, "Bin and regress ln(length)");
  cmd->add_flag("--no-standardize", f.no_standardize,
                "Optimize on raw pooled features instead of z-scored ones");
}

TrainConfig resolve(const TrainFlags& f) {
  TrainConfig c = f.config;
  c.pooling = parse_pooling(f.pooling);
  c.scheme = f.scheme == "quantile" ? BinScheme::kQuantile : BinScheme::kEqualWidth;
  c.normalize_mse = !f.raw_mse;
  c.transform = f.log_target ? TargetTransform::kLog : TargetTransform::kLinear;
  c.standardize = !f.no_standardize;
  c.validate();
  return c;
}

// "# forelen <cmd> key=value ..." with every option's resolved value.
std::string config_echo(const CLI::App* cmd) {
  std::ostringstream s;
  s << "# forelen " << cmd->get_name();
  for (const CLI::Option* opt : cmd->get_options()) {
    if (opt->get_lnames().empty() || opt->get_lnames().front() == "help") continue;
    std::string value;
    if (opt->count() > 0) {
      const auto& res = opt->results();
      for (std::size_t i = 0; i < res.size(); ++i) value += (i ? "," : "") + res[i];
      if (opt->get_expected_max() == 0) value = "true";
    } else {
      value = opt->get_expected_max() == 0 ? "false" : opt->get_default_str();
    }
    s << ' ' << opt->get_lnames().front() << '=' << value;
  }
  if (const auto* raw = cmd->get_option_no_throw("--raw-mse")) {
    s << " mse_normalization=" << (raw->count() ? "off" : "on");
  }
  return s.str();
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot open " + path + " for writing");
  return out;
}

void close_out(std::ofstream& out, const std::string& path) {
  out.close();
  if (!out) fail(ErrorKind::kIo, "write failed for " + path);
}

DataSplit load_split(const DataFlags& f) {
  Dataset records = read_dump(f.data);
  return split(records, {f.ratios[0], f.ratios[1], f.ratios[2]}, f.split_seed);
}

Dataset select_part(const DataFlags& f) {
  if (f.part == "all") return read_dump(f.data);
  DataSplit s = load_split(f);
  if (f.part == "train") return std::move(s.train);
  if (f.part == "val") return std::move(s.val);
  return std::move(s.test);
}

void print_length_stats(const Dataset& records) {
  std::vector<double> y;
  for (const auto& r : records) y.push_back(r.length);
  std::sort(y.begin(), y.end());
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  const std::size_t m = y.size() / 2;
  const double median = y.size() % 2 ? y[m] : 0.5 * (y[m - 1] + y[m]);
  std::cout << "records: " << records.size() << "\n"
            << "length mean: " << format_real(mean) << " median: " << format_real(median)
            << " min: " << format_real(y.front()) << " max: " << format_real(y.back()) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Output-length prediction from hidden-state activations, and batch scheduling"};
  app.require_subcommand(1);
  app.set_config("--config", "", "INI/TOML file supplying flag values (flags override it)");
  bool serial = false;
  app.add_flag("--serial", serial, "Run kernels on the serial reference path");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a planted-signal activation dump");
  SynthConfig sc;
  std::string synth_out, synth_note;
  synth->add_option("--out", synth_out, "Output dump path (manifest written alongside)")
      ->required();
  synth->add_option("--num-records", sc.num_records, "Number of records")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  synth->add_option("--d", sc.dim, "Hidden dimension")->check(CLI::PositiveNumber)->capture_default_str();
  synth->add_option("--prompt-min", sc.prompt_min, "Minimum prompt tokens")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  synth->add_option("--prompt-max", sc.prompt_max, "Maximum prompt tokens")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  synth->add_option("--length-mu", sc.length_mu, "Lognormal mu of response length")->capture_default_str();
  synth->add_option("--length-sigma", sc.length_sigma, "Lognormal sigma of response length")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  synth->add_option("--length-max", sc.length_max, "Truncation bound L_max")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  synth->add_option("--signal-fraction", sc.signal_fraction, "Fraction of informative prompt tokens")
      ->check(CLI::Range(1e-12, 1.0))
      ->capture_default_str();
  synth->add_option("--entropy-hi", sc.signal_entropy_hi, "Entropy of informative tokens")->capture_default_str();
  synth->add_option("--entropy-lo", sc.signal_entropy_lo, "Entropy of other tokens")->capture_default_str();
  synth->add_option("--noise-sigma", sc.noise_sigma, "Noise on planted coordinates")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  synth->add_option("--seed", sc.seed, "Generator seed (published recipe: 42)")->capture_default_str();
  synth->add_option("--note", synth_note, "Free-form note stored in the manifest header");
  bool no_response = false;
  synth->add_flag("--no-response", no_response, "Write a static-only dump (T = 0)");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a static length predictor");
  DataFlags train_data;
  TrainFlags train_flags;
  std::string train_model, train_history;
  add_data_flags(train_cmd, train_data, false);
  add_train_flags(train_cmd, train_flags, true);
  train_cmd->add_option("--model", train_model, "Output model file (FLHD)")->required();
  train_cmd->add_option("--history", train_history, "Per-epoch history CSV");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a static predictor (MAE, RMSE)");
  DataFlags eval_data;
  std::string eval_model, eval_out, eval_pooling = "egtp";
  double eval_alpha = 1.0;
  add_data_flags(eval_cmd, eval_data, true);
  eval_cmd->add_option("--model", eval_model, "Model file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--pooling", eval_pooling, "Pooling applied at evaluation")
      ->check(CLI::IsMember({"egtp", "mean", "max", "last"}))
      ->capture_default_str();
  eval_cmd->add_option("--alpha", eval_alpha, "EGTP softmax temperature")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  eval_cmd->add_option("--out", eval_out, "Per-example predictions CSV");

  // plp-train
  auto* plp_train_cmd = app.add_subcommand("plp-train", "Train a progressive (remaining-length) predictor");
  DataFlags plp_train_data;
  TrainFlags plp_flags;
  std::string plp_model, plp_history;
  add_data_flags(plp_train_cmd, plp_train_data, false);
  add_train_flags(plp_train_cmd, plp_flags, false);
  plp_train_cmd->add_option("--model", plp_model, "Output model file (FLHD, d_in = 2d)")->required();
  plp_train_cmd->add_option("--history", plp_history, "Per-epoch history CSV");

  // plp-eval
  auto* plp_eval_cmd = app.add_subcommand("plp-eval", "Remaining-length MAE at fractions of each response");
  DataFlags plp_eval_data;
  std::string plp_eval_model, plp_eval_out;
  std::vector<double> fractions{0.0, 0.25, 0.5, 0.75};
  double plp_alpha = 1.0;
  add_data_flags(plp_eval_cmd, plp_eval_data, true);
  plp_eval_cmd->add_option("--model", plp_eval_model, "PLP model file")->required()->check(CLI::ExistingFile);
  plp_eval_cmd->add_option("--fractions", fractions, "Increasing fractions in [0, 1)")
      ->delimiter(',')
      ->capture_default_str();
  plp_eval_cmd->add_option("--alpha", plp_alpha, "EGTP softmax temperature")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  plp_eval_cmd->add_option("--out", plp_eval_out, "Curve CSV (fraction,mae)");

  // attribute
  auto* attr_cmd = app.add_subcommand("attribute", "Token entropy vs. gradient importance analysis");
  DataFlags attr_data;
  std::string attr_model, attr_out;
  double attr_alpha = 1.0;
  std::size_t attr_bins = 5;
  add_data_flags(attr_cmd, attr_data, true);
  attr_cmd->add_option("--model", attr_model, "Static EGTP model file")->required()->check(CLI::ExistingFile);
  attr_cmd->add_option("--alpha", attr_alpha, "EGTP softmax temperature")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  attr_cmd->add_option("--entropy-bins", attr_bins, "Equal-width entropy bins")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  attr_cmd->add_option("--out", attr_out, "Binned report CSV");

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "Compare batch scheduling policies");
  std::string sim_jobs, sim_data, sim_model, sim_out, sim_jobs_out, sim_pooling = "egtp";
  std::vector<std::string> sim_policies{"fcfs", "random", "sjf_oracle", "sjf_predicted"};
  std::size_t sim_batch = 16;
  CostModel cost;
  std::uint64_t sim_seed = 42;
  double sim_alpha = 1.0, poisson_rate = 0.0;
  auto* jobs_opt = sim_cmd->add_option("--jobs", sim_jobs, "Jobs CSV (id,prompt_len,true_out,predicted_out)")
                       ->check(CLI::ExistingFile);
  auto* data_opt = sim_cmd->add_option("--data", sim_data, "Dump whose records become jobs")
                       ->check(CLI::ExistingFile)
                       ->excludes(jobs_opt);
  sim_cmd->add_option("--model", sim_model, "Static model supplying predicted_out")
      ->check(CLI::ExistingFile)
      ->needs(data_opt);
  sim_cmd->add_option("--pooling", sim_pooling, "Pooling used with --model")
      ->check(CLI::IsMember({"egtp", "mean", "max", "last"}))
      ->capture_default_str();
  sim_cmd->add_option("--alpha", sim_alpha, "EGTP softmax temperature")->capture_default_str();
  sim_cmd->add_option("--policies", sim_policies, "fcfs, random[:seed], sjf_oracle, sjf_predicted")
      ->delimiter(',')
      ->capture_default_str();
  sim_cmd->add_option("--batch-size", sim_batch, "Jobs per batch")->check(CLI::PositiveNumber)->capture_default_str();
  sim_cmd->add_option("--prefill", cost.prefill_per_token, "Seconds per prompt token of the longest prompt")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sim_cmd->add_option("--decode", cost.decode_per_step, "Seconds per decode step of the longest output")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sim_cmd->add_option("--seed", sim_seed, "Seed for the random policy and arrivals")->capture_default_str();
  sim_cmd->add_option("--poisson-rate", poisson_rate, "Poisson arrivals at this rate (jobs/s); 0 = offline")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  sim_cmd->add_option("--out", sim_out, "Comparison CSV");
  sim_cmd->add_option("--jobs-out", sim_jobs_out, "Write the resolved jobs CSV");

  // inspect
  auto* inspect_cmd = app.add_subcommand("inspect", "Show a dump header and manifest, or a model header");
  std::string inspect_path;
  inspect_cmd->add_option("path", inspect_path, "Dump or model file")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }
  if (serial) set_default_execution(Execution::kSerial);

  try {
    if (*synth) {
      sc.with_response = !no_response;
      Dataset records = synth_generate(sc);
      write_dump(records, synth_out, synth_note);
      print_length_stats(records);
    } else if (*train_cmd) {
      const TrainConfig config = resolve(train_flags);
      const DataSplit s = load_split(train_data);
      const TrainResult r = train(s.train, s.val, config);
      save_head(train_model, r.params, r.bins);
      if (!train_history.empty()) {
        auto out = open_out(train_history);
        out << config_echo(train_cmd) << '\n';
        write_history_csv(out, r.history);
        close_out(out, train_history);
      }
      const PredictionReport test = evaluate(r.params, r.bins, s.test, config.pooling, config.alpha);
      std::cout << "best epoch: " << r.best_epoch << "\n"
                << "val MAE: " << format_real(r.history[r.best_epoch - 1].val_mae) << "\n"
                << "test MAE: " << format_real(test.mae) << " RMSE: " << format_real(test.rmse)
                << "\n";
    } else if (*eval_cmd) {
      HeadParams params;
      BinLayout bins;
      load_head(eval_model, params, bins);
      const Dataset part = select_part(eval_data);
      const PredictionReport rep =
          evaluate(params, bins, part, parse_pooling(eval_pooling), eval_alpha);
      if (!eval_out.empty()) {
        auto out = open_out(eval_out);
        out << config_echo(eval_cmd) << '\n';
        write_predictions_csv(out, rep);
        close_out(out, eval_out);
      }
      std::cout << "examples: " << rep.entries.size() << "\n"
                << "MAE: " << format_real(rep.mae) << " RMSE: " << format_real(rep.rmse) << "\n";
    } else if (*plp_train_cmd) {
      const TrainConfig config = resolve(plp_flags);
      const DataSplit s = load_split(plp_train_data);
      const TrainResult r = plp_train(s.train, s.val, config);
      save_head(plp_model, r.params, r.bins);
      if (!plp_history.empty()) {
        auto out = open_out(plp_history);
        out << config_echo(plp_train_cmd) << '\n';
        write_history_csv(out, r.history);
        close_out(out, plp_history);
      }
      std::cout << "best epoch: " << r.best_epoch << "\n"
                << "val step MAE: " << format_real(r.history[r.best_epoch - 1].val_mae) << "\n";
    } else if (*plp_eval_cmd) {
      HeadParams params;
      BinLayout bins;
      load_head(plp_eval_model, params, bins);
      const PlpExamples ex = make_plp_examples(select_part(plp_eval_data), plp_alpha);
      if (ex.skipped > 0) {
        std::cerr << "warning: skipped " << ex.skipped << " records without a response\n";
      }
      const PlpCurve curve = plp_eval_curve(params, bins, ex.examples, fractions, plp_alpha);
      if (!plp_eval_out.empty()) {
        auto out = open_out(plp_eval_out);
        out << config_echo(plp_eval_cmd) << '\n';
        write_curve_csv(out, curve);
        close_out(out, plp_eval_out);
      }
      write_curve_csv(std::cout, curve);
    } else if (*attr_cmd) {
      HeadParams params;
      BinLayout bins;
      load_head(attr_model, params, bins);
      const auto rep = entropy_importance_report(select_part(attr_data), params, bins, attr_alpha,
                                                 attr_bins);
      std::ostringstream csv;
      csv << "# pearson_r=" << format_real(rep.pearson_r) << " tokens=" << rep.tokens << '\n'
          << "bin,entropy_lo,entropy_hi,count,mean_importance\n";
      const double width = (rep.entropy_max - rep.entropy_min) / static_cast<double>(attr_bins);
      for (std::size_t b = 0; b < attr_bins; ++b) {
        csv << b + 1 << ',' << format_real(rep.entropy_min + width * static_cast<double>(b)) << ','
            << format_real(rep.entropy_min + width * static_cast<double>(b + 1)) << ','
            << rep.bin_counts[b] << ',' << format_real(rep.bin_mean_importance[b]) << '\n';
      }
      if (!attr_out.empty()) {
        auto out = open_out(attr_out);
        out << config_echo(attr_cmd) << '\n' << csv.str();
        close_out(out, attr_out);
      }
      std::cout << csv.str();
    } else if (*sim_cmd) {
      std::vector<Job> jobs;
      if (!sim_jobs.empty()) {
        std::ifstream in(sim_jobs);
        if (!in) fail(ErrorKind::kIo, "cannot open " + sim_jobs);
        jobs = read_jobs_csv(in);
      } else if (!sim_data.empty()) {
        const Dataset records = read_dump(sim_data);
        std::vector<double> predicted(records.size(), 1.0);
        if (!sim_model.empty()) {
          HeadParams params;
          BinLayout bins;
          load_head(sim_model, params, bins);
          predicted = predict_all(params, bins,
                                  pool_features(records, parse_pooling(sim_pooling), sim_alpha));
        }
        for (std::size_t i = 0; i < records.size(); ++i) {
          jobs.push_back({records[i].id, static_cast<std::uint32_t>(records[i].prompt.tokens()),
                          records[i].length,
                          static_cast<std::uint32_t>(std::max(1.0, std::round(predicted[i]))),
                          0.0});
        }
      } else {
        fail(ErrorKind::kUsage, "simulate needs --jobs or --data");
      }
      if (poisson_rate > 0.0) assign_poisson_arrivals(jobs, poisson_rate, sim_seed);
      std::vector<Policy> policies;
      for (const auto& p : sim_policies) policies.push_back(parse_policy(p, sim_seed));
      const auto reports = compare_policies(jobs, policies, sim_batch, cost);
      if (!sim_jobs_out.empty()) {
        auto out = open_out(sim_jobs_out);
        write_jobs_csv(out, jobs);
        close_out(out, sim_jobs_out);
      }
      if (!sim_out.empty()) {
        auto out = open_out(sim_out);
        out << config_echo(sim_cmd) << '\n';
        write_comparison_csv(out, reports);
        close_out(out, sim_out);
      }
      write_comparison_csv(std::cout, reports);
    } else if (*inspect_cmd) {
      std::ifstream in(inspect_path, std::ios::binary);
      char magic[4] = {};
      in.read(magic, 4);
      if (std::string_view(magic, 4) == "FLHD") {
        HeadParams params;
        BinLayout bins;
        load_head(inspect_path, params, bins);
        std::cout << "model: K=" << params.classes() << " d_in=" << params.input_dim()
                  << " lambda=" << format_real(params.lambda)
                  << " norm_scale=" << format_real(params.norm_scale) << " scheme="
                  << (bins.scheme == BinScheme::kQuantile ? "quantile" : "equal-width")
                  << " target=" << (params.transform == TargetTransform::kLog ? "log" : "linear")
                  << "\nedges:";
        for (double e : bins.edges) std::cout << ' ' << format_real(e);
        std::cout << '\n';
      } else {
        const Dataset records = read_dump(inspect_path);
        std::cout << "dump: FLEN version " << kDumpVersion << " d=" << records.front().prompt.dim()
                  << '\n';
        if (std::filesystem::exists(manifest_path(inspect_path))) {
          const auto m = read_manifest(inspect_path);
          if (!m.note.empty()) std::cout << "note: " << m.note << '\n';
        }
        std::size_t with_response = 0;
        for (const auto& r : records) with_response += r.response ? 1 : 0;
        std::cout << "records with response: " << with_response << '\n';
        print_length_stats(records);
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.kind() == ErrorKind::kUsage ? kExitUsage : kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}
