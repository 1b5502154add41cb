#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "auxdistill/checkpoint.hpp"
#include "auxdistill/config.hpp"
#include "auxdistill/environment.hpp"
#include "auxdistill/expert.hpp"
#include "auxdistill/harness.hpp"
#include "auxdistill/plot.hpp"

namespace ad = auxdistill;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitAborted = 3;
constexpr int kExitPartial = 4;

struct CommonOpts {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::int64_t budget = -1;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("-c,--config", o.config, "experiment config (JSON)");
  cmd->add_option("-s,--seeds", o.seeds, "seed list, overrides the config");
  cmd->add_option("-o,--out", o.out, "output directory, overrides the config");
  cmd->add_option("-b,--budget", o.budget, "env-step budget, overrides train.total_steps");
}

ad::ExperimentConfig build_config(const CommonOpts& o) {
  ad::ExperimentConfig ec = o.config.empty() ? ad::ExperimentConfig{} : ad::load_experiment(o.config);
  if (!o.seeds.empty()) ec.seeds = o.seeds;
  if (!o.out.empty()) ec.output_dir = o.out;
  if (o.budget >= 0) ec.train.total_steps = o.budget;
  try {
    ec.validate();
  } catch (const std::invalid_argument& e) {
    throw ad::ConfigError(e.what());
  }
  return ec;
}

void save_config(const ad::ExperimentConfig& ec) {
  std::filesystem::create_directories(ec.output_dir);
  std::ofstream(std::filesystem::path(ec.output_dir) / "config.json") << ad::experiment_to_json(ec).dump(2) << '\n';
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

int exit_code(const ad::ExperimentResult& r) {
  if (r.all_aborted()) return kExitAborted;
  if (r.any_failed()) return kExitPartial;
  return kExitOk;
}

void print_summary(const ad::ExperimentResult& r) {
  std::cout << ad::method_name(r.config.method) << " (" << r.summary.count << "/" << r.seeds.size() << " seeds)\n";
  for (std::size_t c = 0; c < ad::kReportColumns.size(); ++c)
    std::printf("  %-11s %.3f +/- %.3f\n", ad::kReportColumns[c], r.summary.mean[c], r.summary.std[c]);
}

int cmd_train(const CommonOpts& o, const std::string& method) {
  ad::ExperimentConfig ec = build_config(o);
  if (!method.empty()) ec.method = ad::method_from_name(method);
  save_config(ec);
  const ad::MiniRearrange env;
  const auto r = ad::run_experiment(env, ec, log_line);
  print_summary(r);
  return exit_code(r);
}

int cmd_eval(const std::string& checkpoint, int episodes) {
  const ad::MiniRearrange env;
  const ad::Checkpoint ck = ad::load_checkpoint(checkpoint);
  const auto report = ad::evaluate_report(env, ad::greedy_policy(env, ck.params), episodes);
  const auto vals = ad::report_values(report);
  for (std::size_t c = 0; c < vals.size(); ++c) std::printf("%-11s %.4f\n", ad::kReportColumns[c], vals[c]);
  return kExitOk;
}

int cmd_sweep(const CommonOpts& o, const std::vector<double>& lambdas) {
  ad::ExperimentConfig ec = build_config(o);
  ec.method = ad::Method::auxdistill;
  save_config(ec);
  const ad::MiniRearrange env;
  const auto rows = ad::sweep_lambda(env, ec, lambdas, log_line);
  int code = kExitOk;
  for (const auto& row : rows) {
    std::printf("lambda=%g eval_hard=%.3f +/- %.3f (n=%d)\n", row.lambda, row.result.summary.mean[4],
                row.result.summary.std[4], row.result.summary.count);
    code = std::max(code, exit_code(row.result));
  }
  return code;
}

int cmd_ablate(const CommonOpts& o) {
  ad::ExperimentConfig base = build_config(o);
  base.method = ad::Method::auxdistill;
  save_config(base);
  const ad::MiniRearrange env;
  std::ofstream csv(std::filesystem::path(base.output_dir) / "ablation.csv");
  csv << "subset,completed,eval_easy_mean,eval_easy_std,eval_hard_mean,eval_hard_std\n";
  int code = kExitOk;
  for (const auto& [name, mask] : ad::ablation_subsets()) {
    ad::ExperimentConfig ec = base;
    ec.aux_subset = mask;
    ec.output_dir = (std::filesystem::path(base.output_dir) / name).string();
    const auto r = ad::run_experiment(env, ec, log_line);
    csv << name << ',' << r.summary.count << ',' << r.summary.mean[3] << ',' << r.summary.std[3] << ','
        << r.summary.mean[4] << ',' << r.summary.std[4] << '\n';
    std::printf("%-24s eval_hard=%.3f +/- %.3f\n", name.c_str(), r.summary.mean[4], r.summary.std[4]);
    code = std::max(code, exit_code(r));
  }
  return code;
}

int cmd_plot(const std::vector<std::string>& files, const std::string& out) {
  const auto f = ad::export_curves(files, out);
  std::cout << f.success_svg.string() << '\n' << f.losses_svg.string() << '\n' << f.tidy_csv.string() << '\n';
  return kExitOk;
}

int cmd_expert(int episodes) {
  const ad::MiniRearrange env;
  const auto policy = ad::expert_policy(env);
  bool all = true;
  for (int t = 0; t < ad::kNumTasks; ++t)
    for (ad::Difficulty d : {ad::Difficulty::easy, ad::Difficulty::hard}) {
      const ad::TaskId task{t};
      const auto eps = ad::evaluation_episodes(env, ad::Split::train, d, episodes);
      if (!env.compatible(task, eps.front())) continue;
      const auto cell = ad::run_episodes(env, policy, task, eps);
      std::printf("%-20s %-4s %d/%d\n", std::string(ad::task_name(task)).c_str(),
                  std::string(ad::difficulty_name(d)).c_str(), cell.successes, cell.episodes);
      all = all && cell.successes == cell.episodes;
    }
  return all ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task PPO with relevance-weighted auxiliary distillation on MiniRearrange"};
  app.require_subcommand(1);

  CommonOpts train_opts, sweep_opts, ablate_opts;
  std::string method;
  auto* train = app.add_subcommand("train", "train and evaluate one method over a seed list");
  add_common(train, train_opts);
  train->add_option("-m,--method", method, "auxdistill | monolithic | no_distill | curriculum");

  std::string checkpoint;
  int eval_episodes = 200;
  auto* eval = app.add_subcommand("eval", "greedy evaluation of a checkpoint");
  eval->add_option("checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("-n,--episodes", eval_episodes, "episodes per split and difficulty");

  std::vector<double> lambdas{0.01, 0.05, 0.1, 0.5, 1.0};
  auto* sweep = app.add_subcommand("sweep-lambda", "one experiment per distillation weight");
  add_common(sweep, sweep_opts);
  sweep->add_option("-l,--lambdas", lambdas, "distillation weights");

  auto* ablate = app.add_subcommand("ablate-aux", "auxiliary task selection ablation");
  add_common(ablate, ablate_opts);

  std::vector<std::string> metrics_files;
  std::string plot_out = "plots";
  auto* plot = app.add_subcommand("plot", "learning curves from metrics CSV files");
  plot->add_option("metrics", metrics_files, "metrics.csv files")->required();
  plot->add_option("-o,--out", plot_out, "output directory");

  int expert_episodes = 200;
  auto* expert = app.add_subcommand("expert-validate", "run the scripted expert on every task");
  expert->add_option("-n,--episodes", expert_episodes, "episodes per task and difficulty");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train) return cmd_train(train_opts, method);
    if (*eval) return cmd_eval(checkpoint, eval_episodes);
    if (*sweep) return cmd_sweep(sweep_opts, lambdas);
    if (*ablate) return cmd_ablate(ablate_opts);
    if (*plot) return cmd_plot(metrics_files, plot_out);
    if (*expert) return cmd_expert(expert_episodes);
  } catch (const ad::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ad::TrainingAborted& e) {
    std::cerr << "training aborted: " << e.what() << '\n';
    return kExitAborted;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}
