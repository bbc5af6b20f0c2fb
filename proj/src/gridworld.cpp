#include "sua/gridworld.hpp"

#include <cmath>
#include <deque>
#include <sstream>

namespace sua::envs {

namespace {

constexpr int kDx[kActionCount] = {0, 0, -1, 1};
constexpr int kDy[kActionCount] = {-1, 1, 0, 0};

struct PresetEntry {
  const char* name;
  const char* map;
  int max_steps;
  double slip;
};

constexpr PresetEntry kPresets[] = {
    {"open5",
     "S....\n"
     ".....\n"
     ".....\n"
     ".....\n"
     "....G\n",
     100, 0.0},
    {"corridor9", "S.......G\n", 50, 0.0},
    {"maze7",
     "S..#...\n"
     ".#.#.#.\n"
     ".#...#.\n"
     ".####..\n"
     ".....#.\n"
     "####.#.\n"
     ".....#G\n",
     50, 0.0},
    {"slip5",
     "S....\n"
     ".....\n"
     ".....\n"
     ".....\n"
     "....G\n",
     100, 0.1},
};

}  // namespace

Cell GridSpec::move(Cell from, int action) const {
  if (action < 0 || action >= kActionCount) throw InputError("action out of range");
  const Cell to{from.x + kDx[action], from.y + kDy[action]};
  if (!in_bounds(to) || is_wall(to)) return from;
  return to;
}

void GridSpec::validate() const {
  if (width < 1 || height < 1) throw StructuralError("grid dimensions must be positive");
  if (!in_bounds(start) || !in_bounds(goal)) throw StructuralError("start or goal outside grid");
  if (start == goal) throw StructuralError("start and goal coincide");
  if (is_wall(start) || is_wall(goal)) throw StructuralError("start or goal is a wall");
  if (max_steps < 1) throw StructuralError("max_steps must be positive");
  if (!(slip_prob >= 0.0 && slip_prob < 1.0)) throw StructuralError("slip_prob must lie in [0, 1)");
  if (!std::isfinite(step_reward) || !std::isfinite(goal_reward)) throw StructuralError("rewards must be finite");
  if (!shortest_path_length(*this, start)) throw StructuralError("goal unreachable from start");
}

GridSpec parse_map(std::string_view text) {
  GridSpec spec;
  std::vector<std::string> rows;
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) rows.push_back(line);
  }
  if (rows.empty()) throw StructuralError("empty map");
  spec.height = static_cast<int>(rows.size());
  spec.width = static_cast<int>(rows.front().size());
  bool has_start = false, has_goal = false;
  for (int y = 0; y < spec.height; ++y) {
    if (static_cast<int>(rows[y].size()) != spec.width) throw StructuralError("ragged map rows");
    for (int x = 0; x < spec.width; ++x) {
      switch (rows[y][x]) {
        case '#': spec.walls.insert({x, y}); break;
        case 'S':
          if (has_start) throw StructuralError("map has more than one start");
          spec.start = {x, y};
          has_start = true;
          break;
        case 'G':
          if (has_goal) throw StructuralError("map has more than one goal");
          spec.goal = {x, y};
          has_goal = true;
          break;
        case '.': break;
        default: throw StructuralError(std::string("unknown map character '") + rows[y][x] + "'");
      }
    }
  }
  if (!has_start || !has_goal) throw StructuralError("map needs exactly one S and one G");
  spec.validate();
  return spec;
}

GridSpec preset(std::string_view name) {
  for (const auto& p : kPresets) {
    if (name == p.name) {
      GridSpec spec = parse_map(p.map);
      spec.max_steps = p.max_steps;
      spec.slip_prob = p.slip;
      return spec;
    }
  }
  throw StructuralError("unknown environment preset '" + std::string(name) + "'");
}

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& p : kPresets) names.emplace_back(p.name);
  return names;
}

std::optional<int> shortest_path_length(const GridSpec& spec, Cell from) {
  std::vector<int> dist(spec.cell_count(), -1);
  std::deque<Cell> frontier{from};
  dist[spec.index_of(from)] = 0;
  while (!frontier.empty()) {
    const Cell c = frontier.front();
    frontier.pop_front();
    if (c == spec.goal) return dist[spec.index_of(c)];
    for (int a = 0; a < kActionCount; ++a) {
      const Cell n = spec.move(c, a);
      if (dist[spec.index_of(n)] < 0) {
        dist[spec.index_of(n)] = dist[spec.index_of(c)] + 1;
        frontier.push_back(n);
      }
    }
  }
  return std::nullopt;
}

double optimal_return(const GridSpec& spec) {
  const auto length = shortest_path_length(spec, spec.start);
  if (!length) throw StructuralError("goal unreachable from start");
  return spec.goal_reward + spec.step_reward * *length;
}

Observation encode(const GridSpec& spec, Cell cell) {
  Observation obs = Observation::Zero(spec.feature_dim());
  obs(spec.index_of(cell)) = 1.0;
  if (spec.xy_features) {
    obs(spec.cell_count()) = spec.width > 1 ? static_cast<double>(cell.x) / (spec.width - 1) : 0.0;
    obs(spec.cell_count() + 1) = spec.height > 1 ? static_cast<double>(cell.y) / (spec.height - 1) : 0.0;
  }
  return obs;
}

Cell decode(const GridSpec& spec, const Observation& obs) {
  if (obs.size() != spec.feature_dim()) throw StructuralError("observation size does not match grid");
  Eigen::Index best = 0;
  obs.head(spec.cell_count()).maxCoeff(&best);
  return spec.cell_at(static_cast<int>(best));
}

GridWorld::GridWorld(GridSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  position_ = spec_.start;
}

Observation GridWorld::reset(std::uint64_t seed) {
  rng_ = make_stream(seed, 0x5e1f);
  position_ = spec_.start;
  steps_ = 0;
  done_ = false;
  return encode(spec_, position_);
}

StepResult GridWorld::step(int action) {
  if (done_) throw ProtocolError("step called on a finished episode");
  if (action < 0 || action >= kActionCount) throw InputError("action out of range");
  if (spec_.slip_prob > 0.0 && uniform01(rng_) < spec_.slip_prob)
    action = static_cast<int>(uniform_index(rng_, kActionCount));
  position_ = spec_.move(position_, action);
  ++steps_;
  StepResult result;
  result.reward = spec_.step_reward;
  if (position_ == spec_.goal) {
    result.reward += spec_.goal_reward;
    result.terminal = true;
  }
  result.done = result.terminal || steps_ >= spec_.max_steps;
  done_ = result.done;
  result.observation = encode(spec_, position_);
  return result;
}

QTable value_iteration(const GridSpec& spec, double gamma, double tol) {
  if (!(tol > 0.0)) throw StructuralError("value iteration tolerance must be positive");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw StructuralError("gamma must lie in [0, 1)");
  const int n = spec.cell_count();
  Eigen::VectorXd value = Eigen::VectorXd::Zero(n);
  QTable q = QTable::Zero(n, kActionCount);
  const double p = spec.slip_prob;

  auto backup = [&](Cell from, int action) {
    const Cell to = spec.move(from, action);
    const bool at_goal = to == spec.goal;
    return spec.step_reward + (at_goal ? spec.goal_reward : 0.0) + (at_goal ? 0.0 : gamma * value(spec.index_of(to)));
  };

  for (int sweep = 0; sweep < 1'000'000; ++sweep) {
    QTable next = QTable::Zero(n, kActionCount);
    for (int s = 0; s < n; ++s) {
      const Cell c = spec.cell_at(s);
      if (spec.is_wall(c) || c == spec.goal) continue;
      double slip_mean = 0.0;
      if (p > 0.0) {
        for (int b = 0; b < kActionCount; ++b) slip_mean += backup(c, b);
        slip_mean /= kActionCount;
      }
      for (int a = 0; a < kActionCount; ++a)
        next(s, a) = p > 0.0 ? (1.0 - p) * backup(c, a) + p * slip_mean : backup(c, a);
    }
    Eigen::VectorXd next_value = next.rowwise().maxCoeff();
    const double delta = (next_value - value).cwiseAbs().maxCoeff();
    q = std::move(next);
    value = std::move(next_value);
    if (delta < tol) break;
  }
  return q;
}

TeacherPolicy TeacherPolicy::oracle(const GridSpec& spec, QTable q_table) {
  if (q_table.rows() != spec.cell_count() || q_table.cols() != kActionCount)
    throw StructuralError("Q-table shape does not match grid");
  TeacherPolicy t;
  t.mode_ = Mode::OracleGreedy;
  t.spec_ = spec;
  t.q_table_ = std::move(q_table);
  return t;
}

TeacherPolicy TeacherPolicy::checkpoint(nn::Network net) {
  TeacherPolicy t;
  t.mode_ = Mode::Checkpoint;
  t.net_ = std::move(net);
  return t;
}

TeacherPolicy TeacherPolicy::custom(std::function<int(const Observation&)> fn) {
  TeacherPolicy t;
  t.mode_ = Mode::Custom;
  t.fn_ = std::move(fn);
  return t;
}

int TeacherPolicy::action(const Observation& obs) const {
  switch (mode_) {
    case Mode::OracleGreedy: {
      const Cell c = decode(spec_, obs);
      return static_cast<int>(nn::argmax(q_table_.row(spec_.index_of(c)).transpose()));
    }
    case Mode::Checkpoint: return static_cast<int>(nn::argmax(net_.forward(obs, nn::Mode::Deterministic)));
    case Mode::Custom: return fn_(obs);
  }
  return 0;
}

nn::Network TeacherPolicy::oracle_as_network() const {
  if (mode_ != Mode::OracleGreedy) throw ProtocolError("only oracle teachers convert to a linear network");
  nn::DenseLayer layer;
  layer.weights = nn::Matrix::Zero(kActionCount, spec_.feature_dim());
  layer.weights.leftCols(spec_.cell_count()) = q_table_.transpose();
  layer.biases = nn::Vector::Zero(kActionCount);
  layer.activation = nn::Activation::Linear;
  return nn::Network({layer});
}

double rollout_return(const GridSpec& spec, const std::function<int(const Observation&)>& policy,
                      std::uint64_t seed, int* steps_out) {
  GridWorld env(spec);
  Observation obs = env.reset(seed);
  double total = 0.0;
  for (;;) {
    const StepResult r = env.step(policy(obs));
    total += r.reward;
    obs = r.observation;
    if (r.done) break;
  }
  if (steps_out) *steps_out = env.steps_taken();
  return total;
}

}  // namespace sua::envs
