#include "sua/advising.hpp"

#include <algorithm>
#include <array>

namespace sua::advising {

namespace {

constexpr std::array<std::pair<Strategy, std::string_view>, 6> kStrategyNames = {{
    {Strategy::NA, "NA"},
    {Strategy::EA, "EA"},
    {Strategy::RA, "RA"},
    {Strategy::AIR, "AIR"},
    {Strategy::SUA, "SUA"},
    {Strategy::SUA_AIR, "SUA-AIR"},
}};

StepDecision start(const Context& ctx, std::int64_t t) {
  StepDecision d;
  d.step = t;
  d.budget_after = ctx.budget;
  return d;
}

int ask_teacher(Context& ctx, const nn::Vector& state, imitation::AdviceBuffer* advice) {
  const int a = ctx.teacher.action(state);
  --ctx.budget;
  if (advice) advice->append(state, a);
  return a;
}

void finish(Context& ctx, StepDecision& d, const nn::Vector& state, std::optional<int> chosen, Source source) {
  if (chosen) {
    d.source = source;
    d.action = *chosen;
  } else {
    d.source = Source::Self;
    d.action = ctx.student.act(state, d.step, ctx.streams.action);
  }
  d.budget_after = ctx.budget;
}

/// Advice collection driven by student uncertainty (shared by SUA and SUA-AIR).
std::optional<int> collect_by_student_uncertainty(Context& ctx, StepDecision& d, const nn::Vector& state,
                                                  const uncertainty::SecondaryNet& secondary,
                                                  uncertainty::UncertaintyBuffer& window,
                                                  imitation::AdviceBuffer* advice) {
  if (secondary.trained_once()) {
    d.u_s = secondary.student_uncertainty(state, ctx.streams.secondary);
    window.record(*d.u_s);
  }
  if (ctx.budget <= 0) return std::nullopt;
  bool ask = true;
  if (secondary.trained_once()) {
    d.c1 = window.threshold(ctx.cfg.p1);
    if (d.c1) {
      ask = *d.u_s > *d.c1;
    } else {
      d.early_advising = true;
    }
  } else {
    d.early_advising = true;
  }
  if (!ask) return std::nullopt;
  return ask_teacher(ctx, state, advice);
}

/// Reuse phase shared by AIR and SUA-AIR. `u_m` is filled by the caller
/// when the model is trained (and not skipped lazily).
std::optional<int> try_reuse(const StepDecision& d, const nn::Vector& state, const imitation::TeacherModel& model,
                             const ReuseGate& gate, bool action_determined) {
  if (action_determined || !gate.reuse_enabled || !model.trained()) return std::nullopt;
  if (!d.u_m || !d.c2 || !(*d.u_m < *d.c2)) return std::nullopt;
  return model.action(state);
}

}  // namespace

std::string_view to_string(Strategy s) {
  for (const auto& [k, v] : kStrategyNames)
    if (k == s) return v;
  return "?";
}

Strategy parse_strategy(std::string_view name) {
  for (const auto& [k, v] : kStrategyNames)
    if (v == name) return k;
  if (name == "SUA_AIR") return Strategy::SUA_AIR;
  throw ConfigError("unknown advising strategy '" + std::string(name) + "'");
}

bool uses_secondary(Strategy s) { return s == Strategy::SUA || s == Strategy::SUA_AIR; }
bool uses_model(Strategy s) { return s == Strategy::AIR || s == Strategy::SUA_AIR; }

std::string_view to_string(Source s) {
  switch (s) {
    case Source::Teacher: return "Teacher";
    case Source::ModelReuse: return "ModelReuse";
    case Source::Self: return "Self";
  }
  return "?";
}

void AdvisingConfig::validate() const {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1]");
  };
  prob(rho_init, "advising.rho_init");
  prob(rho_final, "advising.rho_final");
  prob(ra_probability, "advising.ra_probability");
  if (rho_final > rho_init) throw ConfigError("advising.rho_final exceeds advising.rho_init");
  if (budget < 0) throw ConfigError("advising.budget must be non-negative");
  if (!(p1 > 0.0 && p1 <= 100.0) || !(p2 > 0.0 && p2 <= 100.0)) throw ConfigError("percentiles must lie in (0, 100]");
  if (rho_decay_steps < 1) throw ConfigError("advising.rho_decay_steps must be positive");
  if (rho_decay_start < 0) throw ConfigError("advising.rho_decay_start must be non-negative");
  if (n_min < 1 || t_min < 0 || k_init < 0 || k_periodic < 0) throw ConfigError("imitation schedule out of range");
  if (n_passes < 1) throw ConfigError("advising.n_passes must be positive");
  if (min_window < 1 || max_window < min_window) throw ConfigError("uncertainty window sizes out of range");
  if (!(secondary_dropout > 0.0 && secondary_dropout < 1.0) || !(model_dropout > 0.0 && model_dropout < 1.0))
    throw ConfigError("dropout rates must lie in (0, 1)");
  if (model_batch_size < 1) throw ConfigError("advising.model_batch_size must be positive");
}

imitation::TrainingSchedule AdvisingConfig::schedule() const {
  imitation::TrainingSchedule s;
  s.n_min = n_min;
  s.t_min = t_min;
  s.k_init = k_init;
  s.k_periodic = k_periodic;
  s.p2 = p2;
  s.batch_size = model_batch_size;
  s.learning_rate = model_learning_rate;
  return s;
}

double rho_schedule(std::int64_t t, const AdvisingConfig& cfg) {
  if (t <= cfg.rho_decay_start) return cfg.rho_init;
  const double frac =
      std::min(1.0, static_cast<double>(t - cfg.rho_decay_start) / static_cast<double>(cfg.rho_decay_steps));
  return std::max(cfg.rho_final, cfg.rho_init + frac * (cfg.rho_final - cfg.rho_init));
}

void ReuseGate::episode_reset(Rng& rng) { reuse_enabled = bernoulli(rng, rho); }

void ReuseGate::decay(std::int64_t t, const AdvisingConfig& cfg) {
  if (rho > cfg.rho_final) rho = std::min(rho, rho_schedule(t, cfg));
}

StepDecision decide_na(Context& ctx, const nn::Vector& state, std::int64_t t) {
  StepDecision d = start(ctx, t);
  finish(ctx, d, state, std::nullopt, Source::Self);
  return d;
}

StepDecision decide_ea(Context& ctx, const nn::Vector& state, std::int64_t t) {
  StepDecision d = start(ctx, t);
  std::optional<int> a;
  if (ctx.budget > 0) a = ask_teacher(ctx, state, nullptr);
  finish(ctx, d, state, a, Source::Teacher);
  return d;
}

StepDecision decide_ra(Context& ctx, const nn::Vector& state, std::int64_t t) {
  StepDecision d = start(ctx, t);
  std::optional<int> a;
  if (ctx.budget > 0 && bernoulli(ctx.streams.advising, ctx.cfg.ra_probability)) a = ask_teacher(ctx, state, nullptr);
  finish(ctx, d, state, a, Source::Teacher);
  return d;
}

StepDecision decide_sua(Context& ctx, const nn::Vector& state, std::int64_t t, const uncertainty::SecondaryNet& secondary,
                        uncertainty::UncertaintyBuffer& window) {
  StepDecision d = start(ctx, t);
  const auto a = collect_by_student_uncertainty(ctx, d, state, secondary, window, nullptr);
  finish(ctx, d, state, a, Source::Teacher);
  return d;
}

StepDecision decide_sua_air(Context& ctx, const nn::Vector& state, std::int64_t t,
                            const uncertainty::SecondaryNet& secondary, uncertainty::UncertaintyBuffer& window,
                            imitation::TeacherModel& model, imitation::AdviceBuffer& advice, ReuseGate& gate) {
  StepDecision d = start(ctx, t);
  d.reuse_enabled = gate.reuse_enabled;

  // Advice collection
  std::optional<int> a = collect_by_student_uncertainty(ctx, d, state, secondary, window, &advice);
  Source source = Source::Teacher;

  // Advice imitation
  d.model_trained_this_step = model.maybe_train(advice, t, ctx.cfg.schedule(), ctx.streams.model);
  d.model_trained = model.trained();

  // Advice reuse
  if (model.trained()) {
    d.c2 = model.c2();
    const bool could_reuse = !a && gate.reuse_enabled;
    if (!ctx.cfg.lazy_um || could_reuse) d.u_m = model.uncertainty(state, ctx.streams.model);
  }
  if (auto reused = try_reuse(d, state, model, gate, a.has_value())) {
    a = reused;
    source = Source::ModelReuse;
  }
  gate.decay(t, ctx.cfg);
  d.rho = gate.rho;

  finish(ctx, d, state, a, source);
  d.advice_buffer_size = advice.size();
  return d;
}

StepDecision decide_air(Context& ctx, const nn::Vector& state, std::int64_t t, imitation::TeacherModel& model,
                        imitation::AdviceBuffer& advice, ReuseGate& gate) {
  StepDecision d = start(ctx, t);
  d.reuse_enabled = gate.reuse_enabled;

  // Collection: ask whenever the model is untrained or not confident.
  std::optional<int> a;
  std::optional<double> u_before;
  if (ctx.budget > 0) {
    bool ask = true;
    if (model.trained()) {
      u_before = model.uncertainty(state, ctx.streams.model);
      ask = *u_before >= *model.c2();
    } else {
      d.early_advising = true;
    }
    if (ask) a = ask_teacher(ctx, state, &advice);
  }
  Source source = Source::Teacher;

  d.model_trained_this_step = model.maybe_train(advice, t, ctx.cfg.schedule(), ctx.streams.model);
  d.model_trained = model.trained();

  if (model.trained()) {
    d.c2 = model.c2();
    if (u_before && !d.model_trained_this_step) {
      d.u_m = u_before;
    } else {
      const bool could_reuse = !a && gate.reuse_enabled;
      if (!ctx.cfg.lazy_um || could_reuse) d.u_m = model.uncertainty(state, ctx.streams.model);
    }
  }
  if (auto reused = try_reuse(d, state, model, gate, a.has_value())) {
    a = reused;
    source = Source::ModelReuse;
  }
  gate.decay(t, ctx.cfg);
  d.rho = gate.rho;

  finish(ctx, d, state, a, source);
  d.advice_buffer_size = advice.size();
  return d;
}

Advisor::Advisor(AdvisingConfig cfg, const envs::TeacherPolicy& teacher, const rl::StudentAgent& student,
                 std::uint64_t seed)
    : cfg_(std::move(cfg)),
      teacher_(teacher),
      student_(student),
      budget_(cfg_.budget),
      streams_{make_stream(seed, 11), make_stream(seed, 12), make_stream(seed, 13), make_stream(seed, 14)},
      window_(cfg_.min_window, cfg_.max_window) {
  cfg_.validate();
  const auto& sc = student.config();
  if (uses_secondary(cfg_.strategy)) {
    Rng init = make_stream(seed, 21);
    secondary_.emplace(nn::Network::dueling(sc.input_dim, sc.hidden, sc.actions, cfg_.secondary_dropout, init),
                       cfg_.n_passes);
  }
  if (uses_model(cfg_.strategy)) {
    Rng init = make_stream(seed, 22);
    model_.emplace(nn::Network::mlp(sc.input_dim, sc.hidden, sc.actions, nn::Activation::Softmax, cfg_.model_dropout, init),
                   cfg_.n_passes);
  }
  gate_.rho = cfg_.rho_init;
}

void Advisor::on_episode_reset() {
  if (uses_model(cfg_.strategy)) gate_.episode_reset(streams_.advising);
}

StepDecision Advisor::decide(const nn::Vector& state, std::int64_t t) {
  Context ctx{cfg_, teacher_, student_, budget_, streams_};
  switch (cfg_.strategy) {
    case Strategy::NA: return decide_na(ctx, state, t);
    case Strategy::EA: return decide_ea(ctx, state, t);
    case Strategy::RA: return decide_ra(ctx, state, t);
    case Strategy::SUA: return decide_sua(ctx, state, t, *secondary_, window_);
    case Strategy::SUA_AIR: return decide_sua_air(ctx, state, t, *secondary_, window_, *model_, advice_, gate_);
    case Strategy::AIR: return decide_air(ctx, state, t, *model_, advice_, gate_);
  }
  throw ProtocolError("unhandled strategy");
}

void Advisor::after_student_update(const nn::Minibatch& batch) {
  if (secondary_) secondary_->update(batch, cfg_.secondary_learning_rate, streams_.secondary);
}

}  // namespace sua::advising
