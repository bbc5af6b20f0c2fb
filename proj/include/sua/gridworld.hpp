#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "sua/network.hpp"

namespace sua::envs {

enum Action : int { Up = 0, Down = 1, Left = 2, Right = 3 };
inline constexpr int kActionCount = 4;

struct Cell {
  int x = 0;
  int y = 0;
  auto operator<=>(const Cell&) const = default;
};

/// y grows downward: row 0 of a map is y = 0.
struct GridSpec {
  int width = 1;
  int height = 1;
  std::set<Cell> walls;
  Cell start;
  Cell goal;
  double step_reward = -0.01;
  double goal_reward = 1.0;
  int max_steps = 100;
  double slip_prob = 0.0;
  /// Append normalized (x, y) to the one-hot cell encoding.
  bool xy_features = false;

  /// Throws StructuralError on a malformed or unsolvable grid.
  void validate() const;

  int cell_count() const { return width * height; }
  int index_of(Cell c) const { return c.y * width + c.x; }
  Cell cell_at(int index) const { return {index % width, index / width}; }
  bool in_bounds(Cell c) const { return c.x >= 0 && c.y >= 0 && c.x < width && c.y < height; }
  bool is_wall(Cell c) const { return walls.count(c) > 0; }
  /// Deterministic move; blocked moves stay in place.
  Cell move(Cell from, int action) const;
  int feature_dim() const { return cell_count() + (xy_features ? 2 : 0); }
};

/// '#' wall, 'S' start, 'G' goal, '.' empty; one row per line.
GridSpec parse_map(std::string_view text);

GridSpec preset(std::string_view name);
std::vector<std::string> preset_names();

/// BFS distance from `from` to the goal; nullopt if unreachable.
std::optional<int> shortest_path_length(const GridSpec& spec, Cell from);

/// Undiscounted return of a shortest path from the start (slip 0).
double optimal_return(const GridSpec& spec);

using Observation = nn::Vector;

Observation encode(const GridSpec& spec, Cell cell);
/// Inverse of encode over the one-hot block.
Cell decode(const GridSpec& spec, const Observation& obs);

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool done = false;      // goal reached or step cap hit
  bool terminal = false;  // goal reached (no bootstrap past it)
};

class GridWorld {
 public:
  explicit GridWorld(GridSpec spec);

  /// Seed drives slip sampling for the episode.
  Observation reset(std::uint64_t seed);
  StepResult step(int action);

  const GridSpec& spec() const { return spec_; }
  Cell position() const { return position_; }
  int steps_taken() const { return steps_; }
  bool done() const { return done_; }

 private:
  GridSpec spec_;
  Cell position_;
  int steps_ = 0;
  bool done_ = true;
  Rng rng_;
};

/// Q-table indexed [cell][action]; wall and goal rows stay zero.
using QTable = Eigen::MatrixXd;

/// Synchronous Bellman-optimality sweeps until the max change is < tol.
QTable value_iteration(const GridSpec& spec, double gamma, double tol);

/// Fixed teacher: greedy over a Q-table, greedy over a network
/// checkpoint, or an arbitrary deterministic function (tests).
class TeacherPolicy {
 public:
  enum class Mode { OracleGreedy, Checkpoint, Custom };

  static TeacherPolicy oracle(const GridSpec& spec, QTable q_table);
  static TeacherPolicy checkpoint(nn::Network net);
  static TeacherPolicy custom(std::function<int(const Observation&)> fn);

  int action(const Observation& obs) const;
  Mode mode() const { return mode_; }
  const QTable& q_table() const { return q_table_; }
  const nn::Network& network() const { return net_; }

  /// Single linear layer reproducing the oracle exactly on one-hot inputs,
  /// so an oracle teacher can be written in the network snapshot format.
  nn::Network oracle_as_network() const;

 private:
  Mode mode_ = Mode::Custom;
  GridSpec spec_;
  QTable q_table_;
  nn::Network net_;
  std::function<int(const Observation&)> fn_;
};

/// Undiscounted return of one episode following `policy` from the start.
double rollout_return(const GridSpec& spec, const std::function<int(const Observation&)>& policy,
                      std::uint64_t seed, int* steps_out = nullptr);

}  // namespace sua::envs
