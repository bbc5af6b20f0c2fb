#include "sua/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

namespace sua::harness {

namespace {

constexpr std::uint64_t kEvalTag = 0xe7a1'0000'0000ULL;
constexpr std::uint64_t kEpisodeTag = 0xe915'0000'0000ULL;
constexpr std::size_t kAccuracySample = 1'000;

std::string fmt(double v, int precision = 10) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
  return buf;
}

std::string fmt(const std::optional<double>& v, int precision = 10) { return v ? fmt(*v, precision) : std::string(); }

std::optional<double> mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return std::nullopt;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

/// Sample sd / sqrt(n). Deviations are taken about the first value so a
/// constant series gives exactly 0.
double standard_error(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double n = static_cast<double>(xs.size());
  double s = 0.0, ss = 0.0;
  for (double x : xs) {
    const double d = x - xs.front();
    s += d;
    ss += d * d;
  }
  const double var = std::max(0.0, (ss - s * s / n) / (n - 1.0));
  return std::sqrt(var) / std::sqrt(n);
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << content;
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

/// Last N distinct visited states, oldest evicted first.
class VisitedStates {
 public:
  explicit VisitedStates(const envs::GridSpec& grid) : grid_(grid) {}

  void visit(const nn::Vector& state) {
    const int key = grid_.index_of(envs::decode(grid_, state));
    if (!keys_.insert(key).second) return;
    order_.push_back({key, state});
    if (order_.size() > kAccuracySample) {
      keys_.erase(order_.front().first);
      order_.pop_front();
    }
  }

  std::vector<nn::Vector> states() const {
    std::vector<nn::Vector> out;
    for (const auto& [k, s] : order_) out.push_back(s);
    return out;
  }

 private:
  const envs::GridSpec& grid_;
  std::set<int> keys_;
  std::deque<std::pair<int, nn::Vector>> order_;
};

}  // namespace

std::string format_csv(std::span<const MetricsRow> rows) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const MetricsRow& r : rows) {
    out += std::to_string(r.step) + ',' + fmt(r.eval_return_mean) + ',' + fmt(r.eval_return_stderr) + ',' +
           fmt(r.advice_taken_per_100) + ',' + fmt(r.advice_reused_per_100) + ',' + fmt(r.model_accuracy) + ',' +
           fmt(r.rho) + ',' + std::to_string(r.budget_remaining) + ',' + fmt(r.u_s_mean) + ',' + fmt(r.u_m_mean) +
           '\n';
  }
  return out;
}

std::vector<MetricsRow> aggregate(const std::vector<std::vector<MetricsRow>>& per_seed) {
  std::vector<MetricsRow> out;
  if (per_seed.empty()) return out;
  const std::size_t rows = per_seed.front().size();
  for (const auto& s : per_seed)
    if (s.size() != rows) throw StructuralError("seeds disagree on row count");
  for (std::size_t i = 0; i < rows; ++i) {
    MetricsRow agg;
    agg.step = per_seed.front()[i].step;
    std::vector<double> ret, taken, reused, acc, rho, budget, us, um;
    for (const auto& s : per_seed) {
      const MetricsRow& r = s[i];
      if (r.step != agg.step) throw StructuralError("seeds disagree on evaluation steps");
      ret.push_back(r.eval_return_mean);
      taken.push_back(r.advice_taken_per_100);
      reused.push_back(r.advice_reused_per_100);
      budget.push_back(static_cast<double>(r.budget_remaining));
      if (r.model_accuracy) acc.push_back(*r.model_accuracy);
      if (r.rho) rho.push_back(*r.rho);
      if (r.u_s_mean) us.push_back(*r.u_s_mean);
      if (r.u_m_mean) um.push_back(*r.u_m_mean);
    }
    agg.eval_return_mean = *mean_of(ret);
    agg.eval_return_stderr = standard_error(ret);
    agg.advice_taken_per_100 = *mean_of(taken);
    agg.advice_reused_per_100 = *mean_of(reused);
    agg.model_accuracy = mean_of(acc);
    agg.rho = mean_of(rho);
    agg.budget_remaining = static_cast<std::int64_t>(std::llround(*mean_of(budget)));
    agg.u_s_mean = mean_of(us);
    agg.u_m_mean = mean_of(um);
    out.push_back(agg);
  }
  return out;
}

EvalResult evaluate(const std::function<int(const envs::Observation&)>& policy, const envs::GridSpec& grid, int trials,
                    std::uint64_t seed) {
  if (trials < 1) throw StructuralError("evaluation needs at least one trial");
  std::vector<double> returns;
  for (int i = 0; i < trials; ++i) {
    Rng trial_seed = make_stream(seed, static_cast<std::uint64_t>(i));
    returns.push_back(envs::rollout_return(grid, policy, trial_seed()));
  }
  EvalResult r;
  r.mean = *mean_of(returns);
  r.stderr_ = standard_error(returns);
  return r;
}

double model_accuracy(const imitation::TeacherModel& model, const envs::TeacherPolicy& teacher,
                      std::span<const nn::Vector> states) {
  if (states.empty()) throw StructuralError("accuracy sample is empty");
  std::size_t hits = 0;
  for (const auto& s : states)
    if (model.action(s) == teacher.action(s)) ++hits;
  return static_cast<double>(hits) / static_cast<double>(states.size());
}

envs::TeacherPolicy make_teacher(const ExperimentConfig& cfg, const envs::GridSpec& grid) {
  if (cfg.teacher_checkpoint) {
    nn::Network net = nn::Network::load(*cfg.teacher_checkpoint);
    if (net.input_dim() != grid.feature_dim() || net.output_dim() != envs::kActionCount)
      throw ConfigError("teacher checkpoint does not match the environment");
    return envs::TeacherPolicy::checkpoint(std::move(net));
  }
  return envs::TeacherPolicy::oracle(grid, envs::value_iteration(grid, cfg.rl.gamma, 1e-12));
}

SeedResult run_seed(const ExperimentConfig& cfg, const envs::TeacherPolicy& teacher, std::uint64_t seed,
                    bool keep_trace, const EvalObserver& observer) {
  const envs::GridSpec grid = cfg.grid();
  Rng init = make_stream(seed, 1);
  Rng replay_rng = make_stream(seed, 2);
  rl::StudentAgent student(cfg.student_config(grid), init);
  advising::Advisor advisor(cfg.advising, teacher, student, seed);
  envs::GridWorld env(grid);
  VisitedStates visited(grid);

  SeedResult result;
  result.seed = seed;
  std::uint64_t episode = 0;
  nn::Vector state = env.reset(mix_seed(seed ^ kEpisodeTag) + episode);
  advisor.on_episode_reset();

  std::int64_t taken = 0, reused = 0, window_start = 0;
  std::vector<double> us, um;
  for (std::int64_t t = 0; t < cfg.total_steps; ++t) {
    const advising::StepDecision d = advisor.decide(state, t);
    const envs::StepResult step = env.step(d.action);
    student.remember({state, d.action, step.reward, step.observation, step.terminal});
    if (student.can_update()) {
      rl::UpdateResult update = student.dqn_update(replay_rng);
      advisor.after_student_update(update.batch);
    }

    if (d.source == advising::Source::Teacher) ++taken, ++result.teacher_steps;
    if (d.source == advising::Source::ModelReuse) ++reused, ++result.reuse_steps;
    if (d.u_s) us.push_back(*d.u_s);
    if (d.u_m) um.push_back(*d.u_m);
    visited.visit(state);
    if (keep_trace) result.trace.push_back(d);

    state = step.observation;
    if (step.done) {
      ++episode;
      state = env.reset(mix_seed(seed ^ kEpisodeTag) + episode);
      advisor.on_episode_reset();
    }

    if ((t + 1) % cfg.eval_interval == 0) {
      MetricsRow row;
      row.step = t + 1;
      const auto eval = evaluate([&](const nn::Vector& s) { return student.greedy_action(s); }, grid, cfg.eval_trials,
                                 mix_seed(seed ^ kEvalTag) + static_cast<std::uint64_t>(t + 1));
      row.eval_return_mean = eval.mean;
      row.eval_return_stderr = eval.stderr_;
      const double span = static_cast<double>(t + 1 - window_start);
      row.advice_taken_per_100 = 100.0 * static_cast<double>(taken) / span;
      row.advice_reused_per_100 = 100.0 * static_cast<double>(reused) / span;
      if (advisor.model() && advisor.model()->trained())
        row.model_accuracy = model_accuracy(*advisor.model(), teacher, visited.states());
      if (advising::uses_model(cfg.advising.strategy)) row.rho = advisor.gate().rho;
      row.budget_remaining = advisor.budget();
      row.u_s_mean = mean_of(us);
      row.u_m_mean = mean_of(um);
      result.rows.push_back(row);
      taken = reused = 0;
      us.clear();
      um.clear();
      window_start = t + 1;
      if (observer && !observer(row)) break;
    }
  }
  result.final_budget = advisor.budget();
  result.advice_buffer_size = advisor.advice().size();
  return result;
}

void write_trace_csv(const std::filesystem::path& path, std::span<const advising::StepDecision> trace) {
  std::string out =
      "step,source,action,u_s,u_m,c1,c2,early_advising,budget_after,reuse_enabled,rho,advice_buffer_size,"
      "model_trained,model_trained_this_step\n";
  for (const auto& d : trace) {
    out += std::to_string(d.step) + ',' + std::string(advising::to_string(d.source)) + ',' + std::to_string(d.action) +
           ',' + fmt(d.u_s, 17) + ',' + fmt(d.u_m, 17) + ',' + fmt(d.c1, 17) + ',' + fmt(d.c2, 17) + ',' +
           (d.early_advising ? "1" : "0") + ',' + std::to_string(d.budget_after) + ',' + (d.reuse_enabled ? "1" : "0") +
           ',' + fmt(d.rho, 17) + ',' + std::to_string(d.advice_buffer_size) + ',' + (d.model_trained ? "1" : "0") +
           ',' + (d.model_trained_this_step ? "1" : "0") + '\n';
  }
  write_file(path, out);
}

RunReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const envs::GridSpec grid = cfg.grid();
  const envs::TeacherPolicy teacher = make_teacher(cfg, grid);

  std::error_code ec;
  std::filesystem::create_directories(cfg.out_dir, ec);
  {
    const auto probe = cfg.out_dir / ".write_probe";
    std::ofstream os(probe);
    if (ec || !os) throw ConfigError("output directory " + cfg.out_dir.string() + " is not writable");
    os.close();
    std::filesystem::remove(probe, ec);
  }

  RunReport report;
  report.seeds.resize(cfg.seeds.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < cfg.seeds.size(); i = next++) {
      try {
        report.seeds[i] = run_seed(cfg, teacher, cfg.seeds[i], cfg.write_trace);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int workers = std::min<int>(cfg.threads, static_cast<int>(cfg.seeds.size()));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<std::vector<MetricsRow>> all;
  for (auto& s : report.seeds) {
    s.csv_path = cfg.out_dir / ("seed_" + std::to_string(s.seed) + ".csv");
    write_file(s.csv_path, format_csv(s.rows));
    if (cfg.write_trace) write_trace_csv(cfg.out_dir / ("trace_" + std::to_string(s.seed) + ".csv"), s.trace);
    all.push_back(s.rows);
  }
  report.aggregate_csv = cfg.out_dir / "aggregate.csv";
  write_file(report.aggregate_csv, format_csv(aggregate(all)));
  return report;
}

PretrainResult pretrain_teacher(const envs::GridSpec& grid, TeacherMode mode, std::int64_t budget_steps,
                                const std::filesystem::path& out, std::uint64_t seed, const RlConfig& rl) {
  grid.validate();
  const double optimal = envs::optimal_return(grid);
  if (mode == TeacherMode::Oracle) {
    auto teacher = envs::TeacherPolicy::oracle(grid, envs::value_iteration(grid, rl.gamma, 1e-12));
    if (!out.empty()) teacher.oracle_as_network().save(out);
    const double ret = envs::rollout_return(grid, [&](const nn::Vector& s) { return teacher.action(s); }, seed);
    return {std::move(teacher), ret, optimal};
  }

  ExperimentConfig cfg;
  cfg.rl = rl;
  const rl::StudentConfig sc = cfg.student_config(grid);
  Rng init = make_stream(seed, 1), replay_rng = make_stream(seed, 2), action_rng = make_stream(seed, 11);
  rl::StudentAgent student(sc, init);
  envs::GridWorld env(grid);
  std::uint64_t episode = 0;
  nn::Vector state = env.reset(mix_seed(seed ^ kEpisodeTag) + episode);
  for (std::int64_t t = 0; t < budget_steps; ++t) {
    const int a = student.act(state, t, action_rng);
    const envs::StepResult step = env.step(a);
    student.remember({state, a, step.reward, step.observation, step.terminal});
    if (student.can_update()) student.dqn_update(replay_rng);
    state = step.observation;
    if (step.done) state = env.reset(mix_seed(seed ^ kEpisodeTag) + ++episode);
  }
  const auto eval =
      evaluate([&](const nn::Vector& s) { return student.greedy_action(s); }, grid, 10, mix_seed(seed ^ kEvalTag));
  if (eval.mean < 0.9 * optimal)
    throw std::runtime_error("dqn teacher reached " + fmt(eval.mean) + " < 0.9 x optimal " + fmt(optimal) +
                             "; checkpoint not written");
  if (!out.empty()) student.online().save(out);
  return {envs::TeacherPolicy::checkpoint(student.online()), eval.mean, optimal};
}

}  // namespace sua::harness
