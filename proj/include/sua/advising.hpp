#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "sua/gridworld.hpp"
#include "sua/imitation.hpp"
#include "sua/rl.hpp"
#include "sua/uncertainty.hpp"

namespace sua::advising {

enum class Strategy { NA, EA, RA, AIR, SUA, SUA_AIR };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view name);

/// Strategy owns a secondary (student-uncertainty) network.
bool uses_secondary(Strategy s);
/// Strategy owns a model of the teacher.
bool uses_model(Strategy s);

enum class Source { Teacher, ModelReuse, Self };

std::string_view to_string(Source s);

struct AdvisingConfig {
  Strategy strategy = Strategy::NA;
  std::int64_t budget = 500;

  // Student uncertainty (SUA, SUA-AIR)
  double p1 = 70.0;
  std::size_t min_window = 200;
  std::size_t max_window = 10'000;
  double secondary_dropout = 0.2;
  double secondary_learning_rate = 1e-3;

  // Model of the teacher (AIR, SUA-AIR)
  double p2 = 90.0;
  std::size_t n_min = 50;
  std::int64_t t_min = 1'000;
  int k_init = 1'000;
  int k_periodic = 400;
  double model_dropout = 0.35;
  double model_learning_rate = 1e-4;
  std::size_t model_batch_size = 32;

  // Reuse probability schedule
  double rho_init = 0.5;
  double rho_final = 0.1;
  std::int64_t rho_decay_start = 5'000;
  std::int64_t rho_decay_steps = 30'000;

  int n_passes = 100;
  double ra_probability = 0.5;
  /// Skip u_m when it cannot change the decision; affects only runtime
  /// and the logged u_m.
  bool lazy_um = false;

  void validate() const;
  imitation::TrainingSchedule schedule() const;
};

/// One advising decision; the unit every trace invariant is checked on.
struct StepDecision {
  std::int64_t step = 0;
  Source source = Source::Self;
  int action = 0;
  std::optional<double> u_s;
  std::optional<double> u_m;
  std::optional<double> c1;  // absent also when early advising was active
  std::optional<double> c2;
  bool early_advising = false;
  std::int64_t budget_after = 0;
  bool reuse_enabled = false;
  std::optional<double> rho;
  std::size_t advice_buffer_size = 0;
  bool model_trained = false;           // model state used by the reuse gate
  bool model_trained_this_step = false;
};

/// rho(t): rho_init before the decay start, then linear down to rho_final.
double rho_schedule(std::int64_t t, const AdvisingConfig& cfg);

struct ReuseGate {
  double rho = 0.5;
  bool reuse_enabled = false;

  /// Bernoulli(rho); the result holds for the whole episode.
  void episode_reset(Rng& rng);
  void decay(std::int64_t t, const AdvisingConfig& cfg);
};

/// Independent random streams of one agent bundle.
struct Streams {
  Rng action;     // epsilon-greedy self policy
  Rng secondary;  // secondary-net MC passes and training masks
  Rng model;      // teacher-model MC passes and training
  Rng advising;   // RA coin, reuse gate
};

/// Shared inputs of every decide_* call.
struct Context {
  const AdvisingConfig& cfg;
  const envs::TeacherPolicy& teacher;
  const rl::StudentAgent& student;
  std::int64_t& budget;
  Streams& streams;
};

StepDecision decide_na(Context& ctx, const nn::Vector& state, std::int64_t t);
StepDecision decide_ea(Context& ctx, const nn::Vector& state, std::int64_t t);
StepDecision decide_ra(Context& ctx, const nn::Vector& state, std::int64_t t);
StepDecision decide_sua(Context& ctx, const nn::Vector& state, std::int64_t t, const uncertainty::SecondaryNet& secondary,
                        uncertainty::UncertaintyBuffer& window);
StepDecision decide_sua_air(Context& ctx, const nn::Vector& state, std::int64_t t,
                            const uncertainty::SecondaryNet& secondary, uncertainty::UncertaintyBuffer& window,
                            imitation::TeacherModel& model, imitation::AdviceBuffer& advice, ReuseGate& gate);
StepDecision decide_air(Context& ctx, const nn::Vector& state, std::int64_t t, imitation::TeacherModel& model,
                        imitation::AdviceBuffer& advice, ReuseGate& gate);

/// Advising state of one run: budget, secondary net, D_u, model, D, gate.
/// The student is owned by the caller.
class Advisor {
 public:
  Advisor(AdvisingConfig cfg, const envs::TeacherPolicy& teacher, const rl::StudentAgent& student,
          std::uint64_t seed);

  /// Call at every episode start (samples reuse_enabled).
  void on_episode_reset();

  StepDecision decide(const nn::Vector& state, std::int64_t t);

  /// Mirrors a student update onto the secondary network (SUA, SUA-AIR).
  void after_student_update(const nn::Minibatch& batch);

  const AdvisingConfig& config() const { return cfg_; }
  std::int64_t budget() const { return budget_; }
  const std::optional<uncertainty::SecondaryNet>& secondary() const { return secondary_; }
  const uncertainty::UncertaintyBuffer& window() const { return window_; }
  const std::optional<imitation::TeacherModel>& model() const { return model_; }
  const imitation::AdviceBuffer& advice() const { return advice_; }
  const ReuseGate& gate() const { return gate_; }

 private:
  AdvisingConfig cfg_;
  const envs::TeacherPolicy& teacher_;
  const rl::StudentAgent& student_;
  std::int64_t budget_;
  Streams streams_;
  std::optional<uncertainty::SecondaryNet> secondary_;
  uncertainty::UncertaintyBuffer window_;
  std::optional<imitation::TeacherModel> model_;
  imitation::AdviceBuffer advice_;
  ReuseGate gate_;
};

}  // namespace sua::advising
