#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <span>

#include "sua/network.hpp"

namespace sua::uncertainty {

/// Mean over columns of the population (divide-by-N) column variances.
double mean_column_variance(const nn::PassMatrix& passes);

/// Nearest-rank percentile: the value at 1-based rank ceil(p/100 * n)
/// of the ascending sort. 0 < p <= 100, values nonempty.
double nearest_rank_percentile(std::span<const double> values, double p);

/// Dropout twin of the student Q-network, regressed on the student's own
/// minibatches; its MC-dropout spread is the student's uncertainty.
class SecondaryNet {
 public:
  SecondaryNet(nn::Network net, int n_passes = 100);

  /// Mean per-action variance over n_passes stochastic passes.
  double student_uncertainty(const nn::Vector& state, Rng& rng) const;

  /// Same computation, also returning the pass matrix it was derived from.
  double student_uncertainty(const nn::Vector& state, Rng& rng, nn::PassMatrix* passes) const;

  /// One mse step on the exact minibatch the student trained on.
  double update(const nn::Minibatch& batch, double learning_rate, Rng& rng);

  bool trained_once() const { return trained_once_; }
  int n_passes() const { return n_passes_; }
  const nn::Network& net() const { return net_; }
  nn::Network& mutable_net() { return net_; }

 private:
  nn::Network net_;
  int n_passes_;
  bool trained_once_ = false;
};

/// Sliding FIFO window of student uncertainties (D_u).
class UncertaintyBuffer {
 public:
  UncertaintyBuffer(std::size_t min_window = 200, std::size_t max_window = 10'000);

  void record(double u);

  /// nullopt while the window is underfull: early advising, i.e. c1 = -inf.
  std::optional<double> threshold(double p1) const;

  std::optional<double> record_and_threshold(double u, double p1);

  std::size_t size() const { return window_.size(); }
  std::size_t min_window() const { return min_window_; }
  std::size_t max_window() const { return max_window_; }
  const std::deque<double>& values() const { return window_; }

 private:
  std::size_t min_window_;
  std::size_t max_window_;
  std::deque<double> window_;
};

}  // namespace sua::uncertainty
