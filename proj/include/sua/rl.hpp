#pragma once

#include <cstdint>
#include <vector>

#include "sua/network.hpp"

namespace sua::rl {

struct Transition {
  nn::Vector state;
  int action = 0;
  double reward = 0.0;
  nn::Vector next_state;
  bool done = false;  // terminal: the TD target does not bootstrap
};

/// FIFO ring of transitions with a minimum-size sampling gate.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::size_t min_size);

  void push(Transition transition);

  std::size_t size() const { return storage_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t min_size() const { return min_size_; }
  bool ready() const { return storage_.size() >= min_size_; }

  /// i = 0 is the oldest stored transition.
  const Transition& at(std::size_t i) const;

  /// Uniform with replacement. Throws GateError below min_size.
  std::vector<const Transition*> sample(std::size_t count, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t min_size_;
  std::size_t next_ = 0;
  std::vector<Transition> storage_;
};

/// Linear decay from `initial` to `final` over `decay_steps`, then constant.
struct EpsilonSchedule {
  double initial = 1.0;
  double final = 0.01;
  std::int64_t decay_steps = 20'000;

  double at(std::int64_t step) const;
};

struct StudentConfig {
  int input_dim = 0;
  int actions = 4;
  std::vector<int> hidden = {64, 64};
  double gamma = 0.99;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t replay_capacity = 50'000;
  std::size_t replay_min = 1'000;
  EpsilonSchedule epsilon;
  std::int64_t target_sync_period = 500;
};

struct UpdateResult {
  double loss = 0.0;
  /// Exact (inputs, full target vectors) the online net was regressed on.
  nn::Minibatch batch;
};

/// y = r if terminal, else r + gamma * Q_target(s', argmax_a Q_online(s', a)).
double double_dqn_target(double reward, bool done, double gamma, const nn::Vector& online_next,
                         const nn::Vector& target_next);

/// Dueling Double-DQN learner.
class StudentAgent {
 public:
  StudentAgent(const StudentConfig& config, Rng& init_rng);

  /// epsilon-greedy. Always consumes one uniform01 draw, plus one index
  /// draw when exploring.
  int act(const nn::Vector& state, std::int64_t step, Rng& rng) const;

  /// Deterministic argmax, lowest-index tie-break.
  int greedy_action(const nn::Vector& state) const;

  nn::Vector q_values(const nn::Vector& state) const;

  void remember(Transition transition);
  bool can_update() const { return replay_.ready(); }

  /// One sampled minibatch, one optimizer step, target sync on schedule.
  UpdateResult dqn_update(Rng& rng);

  const StudentConfig& config() const { return config_; }
  const nn::Network& online() const { return online_; }
  const nn::Network& target() const { return target_; }
  nn::Network& mutable_online() { return online_; }
  nn::Network& mutable_target() { return target_; }
  const ReplayBuffer& replay() const { return replay_; }
  std::int64_t train_count() const { return train_count_; }

 private:
  StudentConfig config_;
  nn::Network online_;
  nn::Network target_;
  ReplayBuffer replay_;
  std::int64_t train_count_ = 0;
};

}  // namespace sua::rl
