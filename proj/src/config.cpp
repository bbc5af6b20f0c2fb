#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "sua/harness.hpp"

namespace sua::harness {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("invalid value '" + value + "' for " + key);
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("invalid boolean '" + value + "' for " + key);
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& value) {
  std::vector<T> out;
  std::stringstream ss(value);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_number<T>(key, item));
  }
  return out;
}

using Setter = void (*)(ExperimentConfig&, const std::string&, const std::string&);

#define SUA_NUM(field, type) [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.field = parse_number<type>(k, v); }
#define SUA_BOOL(field) [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.field = parse_bool(k, v); }

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"env.preset", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.env_preset = v; }},
      {"env.map", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.env_map = v; }},
      {"env.step_reward", SUA_NUM(env_step_reward, double)},
      {"env.goal_reward", SUA_NUM(env_goal_reward, double)},
      {"env.max_steps", SUA_NUM(env_max_steps, int)},
      {"env.slip_prob", SUA_NUM(env_slip_prob, double)},
      {"env.xy_features", SUA_BOOL(env_xy_features)},

      {"advising.strategy",
       [](ExperimentConfig& c, const std::string&, const std::string& v) { c.advising.strategy = advising::parse_strategy(v); }},
      {"advising.budget", SUA_NUM(advising.budget, std::int64_t)},
      {"advising.p1", SUA_NUM(advising.p1, double)},
      {"advising.p2", SUA_NUM(advising.p2, double)},
      {"advising.min_window", SUA_NUM(advising.min_window, std::size_t)},
      {"advising.max_window", SUA_NUM(advising.max_window, std::size_t)},
      {"advising.secondary_dropout", SUA_NUM(advising.secondary_dropout, double)},
      {"advising.secondary_lr", SUA_NUM(advising.secondary_learning_rate, double)},
      {"advising.n_min", SUA_NUM(advising.n_min, std::size_t)},
      {"advising.t_min", SUA_NUM(advising.t_min, std::int64_t)},
      {"advising.k_init", SUA_NUM(advising.k_init, int)},
      {"advising.k_periodic", SUA_NUM(advising.k_periodic, int)},
      {"advising.model_dropout", SUA_NUM(advising.model_dropout, double)},
      {"advising.model_lr", SUA_NUM(advising.model_learning_rate, double)},
      {"advising.model_batch", SUA_NUM(advising.model_batch_size, std::size_t)},
      {"advising.rho_init", SUA_NUM(advising.rho_init, double)},
      {"advising.rho_final", SUA_NUM(advising.rho_final, double)},
      {"advising.rho_decay_start", SUA_NUM(advising.rho_decay_start, std::int64_t)},
      {"advising.rho_decay_steps", SUA_NUM(advising.rho_decay_steps, std::int64_t)},
      {"advising.n_passes", SUA_NUM(advising.n_passes, int)},
      {"advising.ra_probability", SUA_NUM(advising.ra_probability, double)},
      {"advising.lazy_um", SUA_BOOL(advising.lazy_um)},

      {"rl.gamma", SUA_NUM(rl.gamma, double)},
      {"rl.lr", SUA_NUM(rl.learning_rate, double)},
      {"rl.batch_size", SUA_NUM(rl.batch_size, std::size_t)},
      {"rl.replay_capacity", SUA_NUM(rl.replay_capacity, std::size_t)},
      {"rl.replay_min", SUA_NUM(rl.replay_min, std::size_t)},
      {"rl.eps_init", SUA_NUM(rl.eps_init, double)},
      {"rl.eps_final", SUA_NUM(rl.eps_final, double)},
      {"rl.eps_decay_steps", SUA_NUM(rl.eps_decay_steps, std::int64_t)},
      {"rl.target_sync", SUA_NUM(rl.target_sync, std::int64_t)},
      {"rl.hidden", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.rl.hidden = parse_list<int>(k, v); }},

      {"run.total_steps", SUA_NUM(total_steps, std::int64_t)},
      {"run.eval_interval", SUA_NUM(eval_interval, std::int64_t)},
      {"run.eval_trials", SUA_NUM(eval_trials, int)},
      {"run.seeds", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.seeds = parse_list<std::uint64_t>(k, v); }},
      {"run.out_dir", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.out_dir = v; }},
      {"run.teacher_checkpoint",
       [](ExperimentConfig& c, const std::string&, const std::string& v) {
         if (v.empty() || v == "oracle") c.teacher_checkpoint.reset();
         else c.teacher_checkpoint = v;
       }},
      {"run.trace", SUA_BOOL(write_trace)},
      {"run.threads", SUA_NUM(threads, int)},
  };
  return table;
}

#undef SUA_NUM
#undef SUA_BOOL

}  // namespace

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig cfg;
  std::istringstream in{std::string(text)};
  int line_no = 0;
  std::set<std::string> seen;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    it->second(cfg, key, value);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

envs::GridSpec ExperimentConfig::grid() const {
  envs::GridSpec spec;
  try {
    if (env_map) {
      std::ifstream is(*env_map);
      if (!is) throw ConfigError("cannot read map " + env_map->string());
      std::stringstream ss;
      ss << is.rdbuf();
      spec = envs::parse_map(ss.str());
    } else {
      spec = envs::preset(env_preset);
    }
    if (env_step_reward) spec.step_reward = *env_step_reward;
    if (env_goal_reward) spec.goal_reward = *env_goal_reward;
    if (env_max_steps) spec.max_steps = *env_max_steps;
    if (env_slip_prob) spec.slip_prob = *env_slip_prob;
    spec.xy_features = env_xy_features;
    spec.validate();
  } catch (const StructuralError& e) {
    throw ConfigError(std::string("environment: ") + e.what());
  }
  return spec;
}

rl::StudentConfig ExperimentConfig::student_config(const envs::GridSpec& g) const {
  rl::StudentConfig sc;
  sc.input_dim = g.feature_dim();
  sc.actions = envs::kActionCount;
  sc.hidden = rl.hidden;
  sc.gamma = rl.gamma;
  sc.learning_rate = rl.learning_rate;
  sc.batch_size = rl.batch_size;
  sc.replay_capacity = rl.replay_capacity;
  sc.replay_min = rl.replay_min;
  sc.epsilon = {rl.eps_init, rl.eps_final, rl.eps_decay_steps};
  sc.target_sync_period = rl.target_sync;
  return sc;
}

void ExperimentConfig::validate() const {
  if (total_steps < 1) throw ConfigError("run.total_steps must be positive");
  if (eval_interval < 1 || eval_interval > total_steps)
    throw ConfigError("run.eval_interval must lie in [1, run.total_steps]");
  if (eval_trials < 1) throw ConfigError("run.eval_trials must be positive");
  if (seeds.empty()) throw ConfigError("run.seeds must be nonempty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw ConfigError("run.seeds must be distinct");
  if (threads < 1) throw ConfigError("run.threads must be positive");
  if (!(rl.gamma >= 0.0 && rl.gamma < 1.0)) throw ConfigError("rl.gamma must lie in [0, 1)");
  if (!(rl.learning_rate >= 0.0)) throw ConfigError("rl.lr must be non-negative");
  if (rl.batch_size < 1 || rl.replay_capacity < 1 || rl.replay_min < 1 || rl.replay_min > rl.replay_capacity)
    throw ConfigError("rl replay/batch sizes out of range");
  if (rl.target_sync < 1) throw ConfigError("rl.target_sync must be positive");
  if (rl.hidden.empty()) throw ConfigError("rl.hidden must list at least one layer");
  for (int h : rl.hidden)
    if (h < 1) throw ConfigError("rl.hidden sizes must be positive");
  if (!(rl.eps_init >= 0.0 && rl.eps_init <= 1.0 && rl.eps_final >= 0.0 && rl.eps_final <= 1.0))
    throw ConfigError("epsilon values must lie in [0, 1]");
  advising.validate();
  (void)grid();
}

}  // namespace sua::harness
