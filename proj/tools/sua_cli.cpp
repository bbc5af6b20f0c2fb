// Command-line front end for the advising experiments.
//
//   sua run --config <path> [--seed-offset N] [--out DIR]
//   sua pretrain-teacher --env <preset> --mode oracle|dqn --out <file>
//   sua evaluate --checkpoint <file> --env <preset>
//   sua list-presets

#include <CLI11.hpp>

#include <iostream>

#include "sua/harness.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;

int cmd_run(const std::string& config_path, std::uint64_t seed_offset, const std::string& out_dir) {
  auto cfg = sua::harness::load_config(config_path);
  for (auto& s : cfg.seeds) s += seed_offset;
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  const auto report = sua::harness::run_experiment(cfg);
  for (const auto& s : report.seeds) {
    const double final_return = s.rows.empty() ? 0.0 : s.rows.back().eval_return_mean;
    std::cout << "seed " << s.seed << ": final eval return " << final_return << ", teacher steps " << s.teacher_steps
              << ", reused " << s.reuse_steps << " -> " << s.csv_path.string() << "\n";
  }
  std::cout << "aggregate -> " << report.aggregate_csv.string() << "\n";
  return 0;
}

int cmd_pretrain(const std::string& env, const std::string& mode, const std::string& out, std::int64_t steps) {
  const auto grid = sua::envs::preset(env);
  const auto m = mode == "dqn" ? sua::harness::TeacherMode::Dqn : sua::harness::TeacherMode::Oracle;
  const auto result = sua::harness::pretrain_teacher(grid, m, steps, out);
  std::cout << "teacher (" << mode << ") on " << env << ": return " << result.eval_return << " (optimal "
            << result.optimal << ") -> " << out << "\n";
  return 0;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& env, int trials) {
  const auto grid = sua::envs::preset(env);
  auto net = sua::nn::Network::load(checkpoint);
  if (net.input_dim() != grid.feature_dim()) throw sua::ConfigError("checkpoint input does not match environment");
  const auto teacher = sua::envs::TeacherPolicy::checkpoint(std::move(net));
  const auto r = sua::harness::evaluate([&](const sua::nn::Vector& s) { return teacher.action(s); }, grid, trials, 0);
  std::cout << "mean " << r.mean << " stderr " << r.stderr_ << " optimal " << sua::envs::optimal_return(grid) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Uncertainty-driven action advising experiments"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::uint64_t seed_offset = 0;
  auto* run = app.add_subcommand("run", "Run an experiment from a config file");
  run->add_option("--config", config_path, "Config file (key = value)")->required();
  run->add_option("--seed-offset", seed_offset, "Added to every configured seed");
  run->add_option("--out", out_dir, "Override run.out_dir");

  std::string env = "open5", mode = "oracle", out;
  std::int64_t steps = 30'000;
  auto* pretrain = app.add_subcommand("pretrain-teacher", "Build a teacher checkpoint");
  pretrain->add_option("--env", env, "Environment preset")->required();
  pretrain->add_option("--mode", mode, "oracle or dqn")->check(CLI::IsMember({"oracle", "dqn"}));
  pretrain->add_option("--out", out, "Checkpoint path")->required();
  pretrain->add_option("--steps", steps, "Training steps for dqn mode");

  std::string checkpoint;
  int trials = 10;
  auto* evaluate = app.add_subcommand("evaluate", "Greedy evaluation of a checkpoint");
  evaluate->add_option("--checkpoint", checkpoint, "Checkpoint path")->required();
  evaluate->add_option("--env", env, "Environment preset")->required();
  evaluate->add_option("--trials", trials, "Evaluation episodes");

  auto* list = app.add_subcommand("list-presets", "List environment presets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return cmd_run(config_path, seed_offset, out_dir);
    if (*pretrain) return cmd_pretrain(env, mode, out, steps);
    if (*evaluate) return cmd_evaluate(checkpoint, env, trials);
    if (*list) {
      for (const auto& name : sua::envs::preset_names()) {
        const auto g = sua::envs::preset(name);
        std::cout << name << "  " << g.width << "x" << g.height << "  max_steps " << g.max_steps << "  slip "
                  << g.slip_prob << "  optimal return " << sua::envs::optimal_return(g) << "\n";
      }
      return 0;
    }
  } catch (const sua::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const sua::StructuralError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const sua::TrainingDivergence& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
