#include "sua/rl.hpp"

#include <algorithm>
#include <cmath>

namespace sua::rl {

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::size_t min_size) : capacity_(capacity), min_size_(min_size) {
  if (capacity == 0 || min_size == 0) throw StructuralError("replay capacity and min size must be positive");
  if (min_size > capacity) throw StructuralError("replay min size exceeds capacity");
  storage_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayBuffer::push(Transition transition) {
  if (!std::isfinite(transition.reward)) throw InputError("non-finite reward");
  if (storage_.size() < capacity_) {
    storage_.push_back(std::move(transition));
  } else {
    storage_[next_] = std::move(transition);
  }
  next_ = (next_ + 1) % capacity_;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= storage_.size()) throw std::out_of_range("replay index");
  const std::size_t oldest = storage_.size() < capacity_ ? 0 : next_;
  return storage_[(oldest + i) % storage_.size()];
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t count, Rng& rng) const {
  if (!ready()) throw GateError("replay holds fewer than min_size transitions");
  std::vector<const Transition*> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(&storage_[uniform_index(rng, storage_.size())]);
  return out;
}

double EpsilonSchedule::at(std::int64_t step) const {
  if (decay_steps <= 0) return final;
  const double frac = std::min(1.0, static_cast<double>(std::max<std::int64_t>(step, 0)) / decay_steps);
  return initial + frac * (final - initial);
}

double double_dqn_target(double reward, bool done, double gamma, const nn::Vector& online_next,
                         const nn::Vector& target_next) {
  if (done) return reward;
  return reward + gamma * target_next(nn::argmax(online_next));
}

StudentAgent::StudentAgent(const StudentConfig& config, Rng& init_rng)
    : config_(config),
      online_(nn::Network::dueling(config.input_dim, config.hidden, config.actions, 0.0, init_rng)),
      target_(online_),
      replay_(config.replay_capacity, config.replay_min) {
  if (!(config.gamma >= 0.0 && config.gamma < 1.0)) throw StructuralError("gamma must lie in [0, 1)");
  if (config.target_sync_period < 1) throw StructuralError("target sync period must be positive");
  if (config.batch_size == 0) throw StructuralError("batch size must be positive");
}

nn::Vector StudentAgent::q_values(const nn::Vector& state) const {
  return online_.forward(state, nn::Mode::Deterministic);
}

int StudentAgent::greedy_action(const nn::Vector& state) const {
  return static_cast<int>(nn::argmax(q_values(state)));
}

int StudentAgent::act(const nn::Vector& state, std::int64_t step, Rng& rng) const {
  if (uniform01(rng) < config_.epsilon.at(step))
    return static_cast<int>(uniform_index(rng, static_cast<std::size_t>(config_.actions)));
  return greedy_action(state);
}

void StudentAgent::remember(Transition transition) {
  if (transition.action < 0 || transition.action >= config_.actions) throw InputError("action out of range");
  replay_.push(std::move(transition));
}

UpdateResult StudentAgent::dqn_update(Rng& rng) {
  const auto samples = replay_.sample(config_.batch_size, rng);
  const auto n = static_cast<Eigen::Index>(samples.size());
  const auto dim = online_.input_dim();
  nn::Matrix states(dim, n), next_states(dim, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    states.col(i) = samples[i]->state;
    next_states.col(i) = samples[i]->next_state;
  }
  nn::Matrix targets = online_.forward_batch(states);
  const nn::Matrix online_next = online_.forward_batch(next_states);
  const nn::Matrix target_next = target_.forward_batch(next_states);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Transition& tr = *samples[i];
    targets(tr.action, i) =
        double_dqn_target(tr.reward, tr.done, config_.gamma, online_next.col(i), target_next.col(i));
  }

  UpdateResult result;
  result.batch.inputs = std::move(states);
  result.batch.targets = std::move(targets);
  result.loss = online_.train_step(result.batch, nn::Loss::Mse, config_.learning_rate, rng);
  ++train_count_;
  if (train_count_ % config_.target_sync_period == 0) target_.copy_params_from(online_);
  return result;
}

}  // namespace sua::rl
