#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "auxdistill/checkpoint.hpp"
#include "auxdistill/environment.hpp"
#include "auxdistill/expert.hpp"
#include "auxdistill/metrics.hpp"
#include "auxdistill/nn.hpp"
#include "auxdistill/ppo.hpp"

namespace auxdistill {

enum class Method { auxdistill, monolithic, no_distill, curriculum };

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::auxdistill: return "auxdistill";
    case Method::monolithic: return "monolithic";
    case Method::no_distill: return "no_distill";
    case Method::curriculum: return "curriculum";
  }
  return "?";
}

inline Method method_from_name(std::string_view s) {
  for (Method m : {Method::auxdistill, Method::monolithic, Method::no_distill, Method::curriculum})
    if (method_name(m) == s) return m;
  throw std::invalid_argument("unknown method '" + std::string(s) + "'");
}

inline constexpr double kCurriculumPhase1Fraction = 0.4;

struct ExperimentConfig {
  Method method = Method::auxdistill;
  // Indexed by task; entry 0 (main) is ignored.
  std::array<bool, kNumTasks> aux_subset{false, true, true, true, true};
  TrainConfig train;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  int eval_episodes = 200;  // per split and difficulty
  std::string output_dir = "runs";
  int checkpoint_every = 0;  // updates between checkpoints; 0 keeps only the final one

  void validate() const {
    train.validate();
    if (seeds.empty()) throw std::invalid_argument("at least one seed is required");
    if (eval_episodes < 1) throw std::invalid_argument("eval_episodes must be >= 1");
    if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be >= 0");
    if (method == Method::curriculum && train.slots[TaskId::kMain] == 0)
      throw std::invalid_argument("curriculum needs main-task slots for phase 2");
  }

  // Auxiliary tasks that participate, after applying the subset.
  int aux_count() const {
    int n = 0;
    for (int i = 1; i < kNumTasks; ++i) n += aux_subset[i] && train.slots[i] > 0 ? 1 : 0;
    return n;
  }
};

namespace detail {

inline TrainConfig with_subset(const ExperimentConfig& ec, std::uint64_t seed) {
  TrainConfig cfg = ec.train;
  cfg.seed = seed;
  for (int i = 1; i < kNumTasks; ++i) {
    if (!ec.aux_subset[i]) cfg.slots[i] = 0;
    if (cfg.slots[i] == 0) cfg.distill_from[i] = false;
  }
  return cfg;
}

// Spreads `total` slots over the tasks flagged in `take`, earliest tasks
// receiving the remainder.
inline void spread_slots(TrainConfig& cfg, int total, const std::array<bool, kNumTasks>& take) {
  const int k = static_cast<int>(std::count(take.begin(), take.end(), true));
  int given = 0;
  for (int i = 0; i < kNumTasks; ++i) {
    if (!take[i]) {
      cfg.slots[i] = 0;
      continue;
    }
    cfg.slots[i] = total / k + (given < total % k ? 1 : 0);
    ++given;
  }
}

}  // namespace detail

// The training configuration a single-phase method runs with.
inline TrainConfig resolve_train_config(const ExperimentConfig& ec, std::uint64_t seed) {
  TrainConfig cfg = detail::with_subset(ec, seed);
  switch (ec.method) {
    case Method::auxdistill:
    case Method::curriculum:
      break;
    case Method::no_distill:
      cfg.lambda = 0.0;
      break;
    case Method::monolithic:
      detail::spread_slots(cfg, cfg.total_slots(), {true, false, false, false, false});
      cfg.lambda = 0.0;
      cfg.distill_from.fill(false);
      break;
  }
  return cfg;
}

// Phase 1: auxiliary tasks only, lambda 0, the main task's slots shared out
// among them. Phase 2: main task only on every slot, fresh LR schedule.
inline std::pair<TrainConfig, TrainConfig> curriculum_phases(const ExperimentConfig& ec, std::uint64_t seed) {
  const TrainConfig base = detail::with_subset(ec, seed);
  const int total = base.total_slots();
  TrainConfig p1 = base;
  std::array<bool, kNumTasks> aux{};
  for (int i = 1; i < kNumTasks; ++i) aux[i] = base.slots[i] > 0;
  if (std::none_of(aux.begin(), aux.end(), [](bool b) { return b; }))
    throw std::invalid_argument("curriculum needs at least one auxiliary task");
  detail::spread_slots(p1, total, aux);
  p1.lambda = 0.0;
  p1.distill_from.fill(false);
  const std::int64_t p1_updates =
      static_cast<std::int64_t>(kCurriculumPhase1Fraction * static_cast<double>(base.total_steps)) / p1.steps_per_update();
  p1.total_steps = p1_updates * p1.steps_per_update();

  TrainConfig p2 = base;
  detail::spread_slots(p2, total, {true, false, false, false, false});
  p2.lambda = 0.0;
  p2.distill_from.fill(false);
  p2.total_steps = base.total_steps - p1.total_steps;
  p2.seed = detail::splitmix64(seed ^ 0x5EC0DULL);
  return {p1, p2};
}

// ---- evaluation --------------------------------------------------------------

using Policy = std::function<int(const EnvState&)>;

inline Policy greedy_policy(const MiniRearrange& env, const nn::PolicyParams& params) {
  return [&env, &params](const EnvState& s) {
    const auto flat = env.observe(s).flatten();
    nn::Tensor2 obs(1, Observation::kDim);
    for (int c = 0; c < Observation::kDim; ++c) obs(0, c) = flat[static_cast<std::size_t>(c)];
    const auto out = nn::forward(params, obs);
    return nn::argmax(nn::row(out.logits, 0));
  };
}

inline Policy expert_policy(const MiniRearrange& env) {
  return [&env](const EnvState& s) { return expert_action(env, s); };
}

// Deterministic episode list: the first `n` episodes of the requested
// difficulty in the split's seed range.
inline std::vector<EpisodeConfig> evaluation_episodes(const MiniRearrange& env, Split split, Difficulty difficulty,
                                                      int n) {
  std::vector<EpisodeConfig> eps;
  const std::uint64_t range = split == Split::train ? kTrainSeedCount : kEvalSeedCount;
  for (std::uint64_t k = 0; k < range && static_cast<int>(eps.size()) < n; ++k) {
    EpisodeConfig ep = env.generate_episode(k, split);
    if (ep.difficulty == difficulty) eps.push_back(ep);
  }
  if (static_cast<int>(eps.size()) < n) throw std::invalid_argument("split has too few episodes of that difficulty");
  return eps;
}

struct EvalCell {
  int episodes = 0;
  int successes = 0;
  double rate() const { return episodes > 0 ? static_cast<double>(successes) / episodes : std::nan(""); }
};

inline EvalCell run_episodes(const MiniRearrange& env, const Policy& policy, TaskId task,
                             const std::vector<EpisodeConfig>& eps) {
  EvalCell cell;
  for (const auto& ep : eps) {
    if (!env.compatible(task, ep)) continue;
    EnvState s = env.reset(task, ep);
    while (!env.terminal(s)) s = env.step(s, policy(s)).next_state;
    ++cell.episodes;
    cell.successes += env.success(s) ? 1 : 0;
  }
  return cell;
}

inline EvalCell evaluate(const MiniRearrange& env, const Policy& policy, Split split, Difficulty difficulty,
                         int n_episodes, TaskId task = TaskId{TaskId::kMain}) {
  if (n_episodes < 1) throw std::invalid_argument("n_episodes must be >= 1");
  return run_episodes(env, policy, task, evaluation_episodes(env, split, difficulty, n_episodes));
}

// Main-task success for one policy, indexed [split][difficulty].
struct EvalReport {
  std::array<std::array<EvalCell, 2>, 2> cells{};

  const EvalCell& cell(Split s, Difficulty d) const {
    return cells[static_cast<std::size_t>(s)][static_cast<std::size_t>(d)];
  }
  EvalCell& cell(Split s, Difficulty d) { return cells[static_cast<std::size_t>(s)][static_cast<std::size_t>(d)]; }

  double rate(Split s, Difficulty d) const { return cell(s, d).rate(); }

  // Episode-weighted combination of easy and hard.
  double all(Split s) const {
    const auto& e = cell(s, Difficulty::easy);
    const auto& h = cell(s, Difficulty::hard);
    const int n = e.episodes + h.episodes;
    return n > 0 ? static_cast<double>(e.successes + h.successes) / n : std::nan("");
  }
};

inline EvalReport evaluate_report(const MiniRearrange& env, const Policy& policy, int n_episodes) {
  EvalReport r;
  for (Split s : {Split::train, Split::eval})
    for (Difficulty d : {Difficulty::easy, Difficulty::hard}) r.cell(s, d) = evaluate(env, policy, s, d, n_episodes);
  return r;
}

// Column order of an EvalReport row.
inline constexpr std::array<const char*, 6> kReportColumns{"train_easy", "train_hard", "train_all",
                                                            "eval_easy",  "eval_hard",  "eval_all"};

inline std::array<double, 6> report_values(const EvalReport& r) {
  return {r.rate(Split::train, Difficulty::easy), r.rate(Split::train, Difficulty::hard), r.all(Split::train),
          r.rate(Split::eval, Difficulty::easy),  r.rate(Split::eval, Difficulty::hard),  r.all(Split::eval)};
}

// ---- experiment runner -------------------------------------------------------

struct SeedResult {
  std::uint64_t seed = 0;
  bool ok = false;
  bool aborted = false;  // non-finite loss
  std::string error;
  EvalReport report;
  std::int64_t env_steps = 0;
  std::int64_t updates = 0;
  std::int64_t phase1_updates = 0;  // curriculum only
  std::vector<UpdateMetrics> metrics;
  std::vector<std::uint64_t> train_seeds_seen;
  LearnerState learner;
};

struct Aggregate {
  std::array<double, 6> mean{};
  std::array<double, 6> std{};  // sample standard deviation; 0 for a single seed
  int count = 0;
};

inline Aggregate aggregate(const std::vector<SeedResult>& results) {
  Aggregate a;
  std::vector<std::array<double, 6>> vals;
  for (const auto& r : results)
    if (r.ok) vals.push_back(report_values(r.report));
  a.count = static_cast<int>(vals.size());
  if (vals.empty()) {
    a.mean.fill(std::nan(""));
    a.std.fill(std::nan(""));
    return a;
  }
  for (std::size_t c = 0; c < 6; ++c) {
    double m = 0.0;
    for (const auto& v : vals) m += v[c];
    m /= static_cast<double>(vals.size());
    double ss = 0.0;
    for (const auto& v : vals) ss += (v[c] - m) * (v[c] - m);
    a.mean[c] = m;
    a.std[c] = vals.size() > 1 ? std::sqrt(ss / static_cast<double>(vals.size() - 1)) : 0.0;
  }
  return a;
}

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<SeedResult> seeds;
  Aggregate summary;

  bool any_failed() const {
    return std::any_of(seeds.begin(), seeds.end(), [](const SeedResult& r) { return !r.ok; });
  }
  bool all_aborted() const {
    return !seeds.empty() && std::all_of(seeds.begin(), seeds.end(), [](const SeedResult& r) { return r.aborted; });
  }
  const SeedResult* find(std::uint64_t seed) const {
    for (const auto& r : seeds)
      if (r.seed == seed) return &r;
    return nullptr;
  }
};

namespace detail {

inline std::string aux_subset_string(const ExperimentConfig& ec) {
  std::string s;
  for (int i = 1; i < kNumTasks; ++i) {
    if (!ec.aux_subset[i]) continue;
    if (!s.empty()) s += '|';
    s += task_name(TaskId{i});
  }
  return s.empty() ? "none" : s;
}

inline double effective_lambda(const ExperimentConfig& ec) {
  return ec.method == Method::auxdistill ? ec.train.lambda : 0.0;
}

class RunWriter {
 public:
  RunWriter(const std::filesystem::path& dir, int checkpoint_every) : dir_(dir), every_(checkpoint_every) {
    std::filesystem::create_directories(dir_);
    csv_.open(dir_ / "metrics.csv");
    if (!csv_) throw std::runtime_error("cannot write " + (dir_ / "metrics.csv").string());
    write_metrics_header(csv_);
  }

  void row(const UpdateMetrics& m, const LearnerState& st) {
    write_metrics_row(csv_, m);
    csv_.flush();
    if (every_ > 0 && m.update % every_ == 0) save(st, "ckpt_" + std::to_string(m.update) + ".bin");
  }

  void save(const LearnerState& st, const std::string& name) const {
    save_checkpoint((dir_ / name).string(), Checkpoint{st.params, st.adam, st.popart});
  }

 private:
  std::filesystem::path dir_;
  int every_;
  std::ofstream csv_;
};

}  // namespace detail

// Trains one seed with the configured method. When `dir` is set, metrics and
// checkpoints are written there.
inline SeedResult train_seed(const MiniRearrange& env, const ExperimentConfig& ec, std::uint64_t seed,
                             const std::optional<std::filesystem::path>& dir = std::nullopt) {
  SeedResult res;
  res.seed = seed;
  std::optional<detail::RunWriter> writer;
  if (dir) writer.emplace(*dir, ec.checkpoint_every);

  auto run_phase = [&](const TrainConfig& cfg, LearnerState state, std::int64_t update_offset,
                       std::int64_t step_offset, const std::array<std::int64_t, kNumTasks>& task_offset) {
    Trainer tr(env, cfg, std::move(state));
    tr.train([&](const UpdateMetrics& m0, const Trainer& t) {
      UpdateMetrics m = m0;
      m.update += update_offset;
      m.env_steps += step_offset;
      for (int i = 0; i < kNumTasks; ++i) m.task_steps[i] += task_offset[i];
      res.metrics.push_back(m);
      if (writer) writer->row(m, t.state());
    });
    res.train_seeds_seen.insert(res.train_seeds_seen.end(), tr.seeds_seen().begin(), tr.seeds_seen().end());
    res.env_steps += tr.env_steps();
    res.updates += tr.updates_done();
    return tr.release_state();
  };

  if (ec.method == Method::curriculum) {
    const auto [p1, p2] = curriculum_phases(ec, seed);
    LearnerState st = run_phase(p1, make_learner(p1), 0, 0, {});
    res.phase1_updates = res.updates;
    std::array<std::int64_t, kNumTasks> offs{};
    if (!res.metrics.empty()) offs = res.metrics.back().task_steps;
    st.adam = nn::AdamState(st.params);
    res.learner = run_phase(p2, std::move(st), res.updates, res.env_steps, offs);
  } else {
    const TrainConfig cfg = resolve_train_config(ec, seed);
    res.learner = run_phase(cfg, make_learner(cfg), 0, 0, {});
  }
  if (writer) writer->save(res.learner, "final.bin");
  res.report = evaluate_report(env, greedy_policy(env, res.learner.params), ec.eval_episodes);
  res.ok = true;
  return res;
}

inline void write_summary(std::ostream& os, const ExperimentResult& er) {
  const auto& ec = er.config;
  os << "# method=" << method_name(ec.method) << " lambda=" << detail::effective_lambda(ec)
     << " total_steps=" << ec.train.total_steps << " aux=" << detail::aux_subset_string(ec)
     << " eval_episodes=" << ec.eval_episodes << " seeds=" << ec.seeds.size() << " completed=" << er.summary.count
     << '\n';
  os << "seed,status";
  for (const char* c : kReportColumns) os << ',' << c;
  os << ",env_steps\n";
  for (const auto& r : er.seeds) {
    os << r.seed << ',' << (r.ok ? "ok" : (r.aborted ? "aborted" : "failed"));
    if (r.ok) {
      for (double v : report_values(r.report)) os << ',' << detail::fmt_double(v);
      os << ',' << r.env_steps;
    } else {
      for (std::size_t c = 0; c <= kReportColumns.size(); ++c) os << ',';
    }
    os << '\n';
  }
  os << "mean,n=" << er.summary.count;
  for (double v : er.summary.mean) os << ',' << detail::fmt_double(v);
  os << ",\nstd,n=" << er.summary.count;
  for (double v : er.summary.std) os << ',' << detail::fmt_double(v);
  os << ",\n";
}

using ProgressFn = std::function<void(const std::string&)>;

// Runs every seed, isolating failures, then writes summary.csv.
inline ExperimentResult run_experiment(const MiniRearrange& env, const ExperimentConfig& ec,
                                       const ProgressFn& progress = {}, bool write_files = true) {
  ec.validate();
  ExperimentResult er;
  er.config = ec;
  const std::filesystem::path root(ec.output_dir);
  for (std::uint64_t seed : ec.seeds) {
    try {
      std::optional<std::filesystem::path> dir;
      if (write_files) dir = root / ("seed_" + std::to_string(seed));
      er.seeds.push_back(train_seed(env, ec, seed, dir));
      if (progress) {
        const auto& r = er.seeds.back().report;
        std::ostringstream os;
        os << method_name(ec.method) << " seed " << seed << ": eval easy " << r.rate(Split::eval, Difficulty::easy)
           << " hard " << r.rate(Split::eval, Difficulty::hard);
        progress(os.str());
      }
    } catch (const TrainingAborted& e) {
      SeedResult r;
      r.seed = seed;
      r.aborted = true;
      r.error = e.what();
      if (write_files) {
        std::filesystem::create_directories(root / ("seed_" + std::to_string(seed)));
        std::ofstream(root / ("seed_" + std::to_string(seed)) / "abort_dump.txt") << e.what() << '\n' << e.dump();
      }
      er.seeds.push_back(std::move(r));
      if (progress) progress(method_name(ec.method).data() + std::string(" seed ") + std::to_string(seed) + " aborted: " + e.what());
    } catch (const std::exception& e) {
      SeedResult r;
      r.seed = seed;
      r.error = e.what();
      er.seeds.push_back(std::move(r));
      if (progress) progress(method_name(ec.method).data() + std::string(" seed ") + std::to_string(seed) + " failed: " + e.what());
    }
  }
  er.summary = aggregate(er.seeds);
  if (write_files) {
    std::filesystem::create_directories(root);
    std::ofstream os(root / "summary.csv");
    write_summary(os, er);
  }
  return er;
}

// Returns the policy after both curriculum phases for one seed.
inline SeedResult run_curriculum(const MiniRearrange& env, const ExperimentConfig& ec, std::uint64_t seed,
                                 const std::optional<std::filesystem::path>& dir = std::nullopt) {
  if (ec.method != Method::curriculum) throw std::invalid_argument("run_curriculum requires method=curriculum");
  ec.validate();
  return train_seed(env, ec, seed, dir);
}

struct LambdaRow {
  double lambda = 0.0;
  ExperimentResult result;
};

// One experiment per lambda, each in its own subdirectory, plus lambda_sweep.csv.
inline std::vector<LambdaRow> sweep_lambda(const MiniRearrange& env, const ExperimentConfig& ec,
                                           const std::vector<double>& lambdas, const ProgressFn& progress = {},
                                           bool write_files = true) {
  if (lambdas.empty()) throw std::invalid_argument("lambda list must be non-empty");
  std::vector<LambdaRow> rows;
  for (double l : lambdas) {
    ExperimentConfig c = ec;
    c.train.lambda = l;
    std::ostringstream name;
    name << "lambda_" << l;
    c.output_dir = (std::filesystem::path(ec.output_dir) / name.str()).string();
    rows.push_back({l, run_experiment(env, c, progress, write_files)});
  }
  if (write_files) {
    std::filesystem::create_directories(ec.output_dir);
    std::ofstream os(std::filesystem::path(ec.output_dir) / "lambda_sweep.csv");
    os << "# method=" << method_name(ec.method) << " total_steps=" << ec.train.total_steps
       << " seeds=" << ec.seeds.size() << '\n';
    os << "lambda,completed,eval_easy_mean,eval_easy_std,eval_hard_mean,eval_hard_std,eval_all_mean,eval_all_std\n";
    for (const auto& r : rows) {
      const auto& s = r.result.summary;
      os << r.lambda << ',' << s.count;
      for (std::size_t c : {3u, 4u, 5u}) os << ',' << detail::fmt_double(s.mean[c]) << ',' << detail::fmt_double(s.std[c]);
      os << '\n';
    }
  }
  return rows;
}

// The four auxiliary subsets of the task-selection ablation.
inline std::vector<std::pair<std::string, std::array<bool, kNumTasks>>> ablation_subsets() {
  return {{"all", {false, true, true, true, true}},
          {"no_pick_from_container", {false, true, true, true, false}},
          {"no_open_container", {false, true, true, false, true}},
          {"no_pick", {false, false, true, true, true}}};
}

}  // namespace auxdistill
