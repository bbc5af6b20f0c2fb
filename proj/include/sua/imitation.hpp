#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "sua/network.hpp"

namespace sua::imitation {

/// Append-only (state, teacher action) pairs collected with budget (D).
class AdviceBuffer {
 public:
  void append(nn::Vector state, int action);

  std::size_t size() const { return states_.size(); }
  bool empty() const { return states_.empty(); }
  const std::vector<nn::Vector>& states() const { return states_; }
  const std::vector<int>& actions() const { return actions_; }

  /// One row per pair: state features..., action.
  void write_csv(const std::filesystem::path& path) const;

 private:
  std::vector<nn::Vector> states_;
  std::vector<int> actions_;
};

struct TrainingSchedule {
  std::size_t n_min = 50;
  std::int64_t t_min = 1'000;
  int k_init = 1'000;
  int k_periodic = 400;
  double p2 = 90.0;
  std::size_t batch_size = 32;
  double learning_rate = 1e-4;
  /// Largest number of buffer states scored when computing c2.
  std::size_t c2_sample_cap = 2'000;
};

/// (|D| - n_last >= n_min) or (|D| - n_last >= n_min / 2 and t - t_last >= t_min).
bool training_due(std::size_t buffer_size, std::size_t n_last, std::int64_t t, std::int64_t t_last,
                  std::size_t n_min, std::int64_t t_min);

/// Behavior-cloned model of the teacher (M_eta) with MC-dropout
/// uncertainty over its action probabilities.
class TeacherModel {
 public:
  TeacherModel(nn::Network net, int n_passes = 100);

  /// Trains when the schedule condition holds: k_init iterations the first
  /// time, k_periodic afterwards; then refreshes c2 and n_last/t_last.
  bool maybe_train(const AdviceBuffer& buffer, std::int64_t t, const TrainingSchedule& schedule, Rng& rng);

  /// Unconditional training pass (the body of maybe_train).
  void train(const AdviceBuffer& buffer, int iterations, const TrainingSchedule& schedule, Rng& rng);

  /// argmax of the deterministic softmax; GateError when untrained.
  int action(const nn::Vector& state) const;

  nn::Vector probabilities(const nn::Vector& state) const;

  /// Mean per-action variance of the probabilities over n_passes.
  double uncertainty(const nn::Vector& state, Rng& rng, nn::PassMatrix* passes = nullptr) const;

  /// p2-th nearest-rank percentile of u_m over the buffer states
  /// (uniform subsample of `cap` states when larger, fixed seed).
  double compute_c2(const AdviceBuffer& buffer, double p2, Rng& rng, std::size_t cap = 2'000) const;

  bool trained() const { return trained_; }
  std::optional<double> c2() const { return c2_; }
  std::size_t n_last() const { return n_last_; }
  std::int64_t t_last() const { return t_last_; }
  int n_passes() const { return n_passes_; }
  const nn::Network& net() const { return net_; }
  nn::Network& mutable_net() { return net_; }

 private:
  nn::Network net_;
  int n_passes_;
  bool trained_ = false;
  std::size_t n_last_ = 0;
  std::int64_t t_last_ = 0;
  std::optional<double> c2_;
};

}  // namespace sua::imitation
