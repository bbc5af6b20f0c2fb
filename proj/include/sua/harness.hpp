#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sua/advising.hpp"
#include "sua/gridworld.hpp"
#include "sua/rl.hpp"

namespace sua::harness {

struct RlConfig {
  double gamma = 0.99;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t replay_capacity = 50'000;
  std::size_t replay_min = 1'000;
  double eps_init = 1.0;
  double eps_final = 0.01;
  std::int64_t eps_decay_steps = 20'000;
  std::int64_t target_sync = 500;
  std::vector<int> hidden = {64, 64};
};

enum class TeacherMode { Oracle, Dqn };

struct ExperimentConfig {
  std::string env_preset = "open5";
  std::optional<std::filesystem::path> env_map;
  std::optional<double> env_step_reward;
  std::optional<double> env_goal_reward;
  std::optional<int> env_max_steps;
  std::optional<double> env_slip_prob;
  bool env_xy_features = false;

  advising::AdvisingConfig advising;
  RlConfig rl;

  std::int64_t total_steps = 100'000;
  std::int64_t eval_interval = 1'000;
  int eval_trials = 10;
  std::vector<std::uint64_t> seeds = {1};
  std::filesystem::path out_dir = "runs";
  /// nullopt: value-iteration oracle teacher.
  std::optional<std::filesystem::path> teacher_checkpoint;
  bool write_trace = false;
  int threads = 1;

  /// Throws ConfigError.
  void validate() const;
  envs::GridSpec grid() const;
  rl::StudentConfig student_config(const envs::GridSpec& grid) const;
};

/// Flat `key = value` text; '#' starts a comment. Unknown keys throw ConfigError.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

struct MetricsRow {
  std::int64_t step = 0;
  double eval_return_mean = 0.0;
  double eval_return_stderr = 0.0;
  double advice_taken_per_100 = 0.0;
  double advice_reused_per_100 = 0.0;
  std::optional<double> model_accuracy;
  std::optional<double> rho;
  std::int64_t budget_remaining = 0;
  std::optional<double> u_s_mean;
  std::optional<double> u_m_mean;
};

inline constexpr const char* kCsvHeader =
    "step,eval_return_mean,eval_return_stderr,advice_taken_per_100,advice_reused_per_100,"
    "model_accuracy,rho,budget_remaining,u_s_mean,u_m_mean";

std::string format_csv(std::span<const MetricsRow> rows);

/// Per-step mean over seeds; eval_return_stderr is the across-seed sample
/// standard deviation of eval_return_mean divided by sqrt(#seeds).
std::vector<MetricsRow> aggregate(const std::vector<std::vector<MetricsRow>>& per_seed);

struct EvalResult {
  double mean = 0.0;
  double stderr_ = 0.0;
};

/// Greedy rollouts on fresh episodes seeded from (seed, trial); training
/// state is never touched. stderr = sample sd / sqrt(trials), 0 for one trial.
EvalResult evaluate(const std::function<int(const envs::Observation&)>& policy, const envs::GridSpec& grid, int trials,
                    std::uint64_t seed);

/// Fraction of states where the model's action equals the teacher's.
double model_accuracy(const imitation::TeacherModel& model, const envs::TeacherPolicy& teacher,
                      std::span<const nn::Vector> states);

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<MetricsRow> rows;
  std::vector<advising::StepDecision> trace;  // filled when requested
  std::filesystem::path csv_path;
  std::int64_t teacher_steps = 0;
  std::int64_t reuse_steps = 0;
  std::int64_t final_budget = 0;
  std::size_t advice_buffer_size = 0;
};

struct RunReport {
  std::vector<SeedResult> seeds;
  std::filesystem::path aggregate_csv;
};

envs::TeacherPolicy make_teacher(const ExperimentConfig& cfg, const envs::GridSpec& grid);

/// Sees every evaluation row as it is produced; returning false ends the
/// run early (rows so far are kept).
using EvalObserver = std::function<bool(const MetricsRow&)>;

/// One seed of one experiment, in memory. Nothing is written.
SeedResult run_seed(const ExperimentConfig& cfg, const envs::TeacherPolicy& teacher, std::uint64_t seed,
                    bool keep_trace, const EvalObserver& observer = {});

/// All seeds; writes seed_<s>.csv per seed plus aggregate.csv into out_dir
/// (and trace_<s>.csv when write_trace is set).
RunReport run_experiment(const ExperimentConfig& cfg);

void write_trace_csv(const std::filesystem::path& path, std::span<const advising::StepDecision> trace);

struct PretrainResult {
  envs::TeacherPolicy teacher;
  double eval_return = 0.0;
  double optimal = 0.0;
};

/// Oracle: value iteration, written as an exact linear network. Dqn: a
/// no-advice student trained for `budget_steps`, refused below 0.9x optimal.
PretrainResult pretrain_teacher(const envs::GridSpec& grid, TeacherMode mode, std::int64_t budget_steps,
                                const std::filesystem::path& out, std::uint64_t seed = 7,
                                const RlConfig& rl = {});

}  // namespace sua::harness
