#include <doctest.h>

#include <array>
#include <cmath>

#include "sua/rl.hpp"

using namespace sua;
using nn::Vector;

namespace {

Vector one_hot(int n, int i) {
  Vector v = Vector::Zero(n);
  v(i) = 1.0;
  return v;
}

rl::StudentConfig small_config(int input_dim, int actions) {
  rl::StudentConfig c;
  c.input_dim = input_dim;
  c.actions = actions;
  c.hidden = {16};
  c.batch_size = 8;
  c.replay_capacity = 100;
  c.replay_min = 4;
  c.target_sync_period = 5;
  return c;
}

}  // namespace

TEST_SUITE("rl") {

TEST_CASE("epsilon decays linearly then holds") {
  const rl::EpsilonSchedule eps{1.0, 0.1, 1000};
  CHECK(eps.at(0) == 1.0);
  CHECK(eps.at(500) == doctest::Approx(0.55));
  CHECK(eps.at(1000) == doctest::Approx(0.1));
  CHECK(eps.at(5000) == doctest::Approx(0.1));
}

TEST_CASE("argmax breaks ties toward the lowest index") {
  CHECK(nn::argmax((Vector(4) << 1, 3, 3, 2).finished()) == 1);
  CHECK(nn::argmax(Vector::Zero(4)) == 0);
}

TEST_CASE("terminal and zero-discount targets") {
  Rng rng(1);
  for (int i = 0; i < 10; ++i) {
    const Vector on = Vector::Random(4) * 100.0, tg = Vector::Random(4) * 100.0;
    CHECK(rl::double_dqn_target(1.0, true, 0.99, on, tg) == 1.0);
    CHECK(rl::double_dqn_target(-0.3, false, 0.0, on, tg) == -0.3);
  }
}

TEST_CASE("double DQN evaluates the online argmax with the target net") {
  // online prefers action 2, target prefers action 0.
  const Vector online = (Vector(3) << 0.1, 0.2, 0.9).finished();
  const Vector target = (Vector(3) << 5.0, 1.0, 2.0).finished();
  CHECK(rl::double_dqn_target(0.5, false, 0.9, online, target) == doctest::Approx(0.5 + 0.9 * 2.0));
}

TEST_CASE("replay is a FIFO ring with a sampling gate") {
  rl::ReplayBuffer buf(3, 2);
  Rng rng(4);
  auto tr = [](double r) { return rl::Transition{Vector::Zero(1), 0, r, Vector::Zero(1), false}; };
  buf.push(tr(0));
  CHECK_FALSE(buf.ready());
  CHECK_THROWS_AS(buf.sample(1, rng), GateError);
  for (int r = 1; r < 5; ++r) buf.push(tr(r));
  CHECK(buf.size() == 3);
  CHECK(buf.at(0).reward == 2.0);
  CHECK(buf.at(1).reward == 3.0);
  CHECK(buf.at(2).reward == 4.0);
  for (const auto* t : buf.sample(50, rng)) CHECK(t->reward >= 2.0);
  CHECK_THROWS_AS(buf.push(tr(std::nan(""))), InputError);
}

TEST_CASE("act consumes one draw when greedy and two when exploring") {
  Rng init(2);
  auto cfg = small_config(3, 4);
  cfg.epsilon = {0.0, 0.0, 1};
  rl::StudentAgent greedy(cfg, init);
  Rng a(10), b(10);
  const Vector s = one_hot(3, 1);
  CHECK(greedy.act(s, 0, a) == greedy.greedy_action(s));
  b();
  CHECK(a() == b());

  cfg.epsilon = {1.0, 1.0, 1};
  rl::StudentAgent explorer(cfg, init);
  std::array<int, 4> counts{};
  for (int i = 0; i < 4000; ++i) ++counts[explorer.act(s, 0, a)];
  for (int c : counts) CHECK(std::abs(c - 1000) < 4 * std::sqrt(4000 * 0.25 * 0.75));
}

TEST_CASE("update regresses only the taken action") {
  Rng init(3), rng(4);
  rl::StudentAgent agent(small_config(3, 4), init);
  for (int i = 0; i < 6; ++i) agent.remember({one_hot(3, i % 3), i % 4, 0.5, one_hot(3, (i + 1) % 3), i == 5});
  CHECK_THROWS_AS(agent.remember({one_hot(3, 0), 4, 0.0, one_hot(3, 0), false}), InputError);
  const nn::Network before = agent.online();
  const auto result = agent.dqn_update(rng);
  const auto predictions = before.forward_batch(result.batch.inputs);
  for (Eigen::Index c = 0; c < result.batch.targets.cols(); ++c) {
    int differing = 0;
    for (Eigen::Index a = 0; a < 4; ++a)
      if (result.batch.targets(a, c) != predictions(a, c)) ++differing;
    CHECK(differing <= 1);
  }
  CHECK(agent.train_count() == 1);
}

TEST_CASE("target network changes only at sync points") {
  Rng init(5), rng(6);
  rl::StudentAgent agent(small_config(3, 2), init);
  for (int i = 0; i < 10; ++i) agent.remember({one_hot(3, i % 3), i % 2, 1.0, one_hot(3, (i + 2) % 3), false});
  const Vector probe = one_hot(3, 0);
  const Vector frozen = agent.target().forward(probe, nn::Mode::Deterministic);
  for (int k = 1; k <= 4; ++k) {
    agent.dqn_update(rng);
    CHECK(agent.target().forward(probe, nn::Mode::Deterministic) == frozen);
  }
  agent.dqn_update(rng);
  CHECK(agent.target().flat_params() == agent.online().flat_params());
  CHECK(agent.target().forward(probe, nn::Mode::Deterministic) != frozen);
}

TEST_CASE("terminal TD target ignores the next state") {
  Rng init(7);
  auto cfg = small_config(3, 2);
  cfg.batch_size = 1;
  cfg.replay_min = 1;
  for (int trial = 0; trial < 5; ++trial) {
    rl::StudentAgent agent(cfg, init);
    Rng rng(trial);
    agent.remember({one_hot(3, 0), 1, 0.7, Vector::Random(3) * 50.0, true});
    const auto result = agent.dqn_update(rng);
    CHECK(result.batch.targets(1, 0) == 0.7);
  }
}

TEST_CASE("Q-learning on a two-state MDP converges to value iteration") {
  // States A=0, B=1, actions {0: forward, 1: back}.
  // A,0 -> B (r 0); A,1 -> A (r 0); B,0 -> terminal (r 1); B,1 -> A (r 0).
  const double gamma = 0.9;
  std::array<std::array<double, 2>, 2> q{};
  for (int sweep = 0; sweep < 500; ++sweep) {
    const double va = std::max(q[0][0], q[0][1]);
    const double vb = std::max(q[1][0], q[1][1]);
    q = {{{gamma * vb, gamma * va}, {1.0, gamma * va}}};
  }

  auto cfg = small_config(2, 2);
  cfg.gamma = gamma;
  cfg.batch_size = 16;
  cfg.target_sync_period = 50;
  cfg.learning_rate = 3e-3;
  Rng init(8), rng(9);
  rl::StudentAgent agent(cfg, init);
  for (int rep = 0; rep < 10; ++rep) {
    agent.remember({one_hot(2, 0), 0, 0.0, one_hot(2, 1), false});
    agent.remember({one_hot(2, 0), 1, 0.0, one_hot(2, 0), false});
    agent.remember({one_hot(2, 1), 0, 1.0, one_hot(2, 0), true});
    agent.remember({one_hot(2, 1), 1, 0.0, one_hot(2, 0), false});
  }
  for (int i = 0; i < 4000; ++i) agent.dqn_update(rng);
  for (int s = 0; s < 2; ++s) {
    const Vector learned = agent.q_values(one_hot(2, s));
    for (int a = 0; a < 2; ++a) CHECK(std::abs(learned(a) - q[s][a]) < 0.05);
  }
}

}  // TEST_SUITE
