#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "sua/common.hpp"

namespace sua::nn {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Numeric codes double as the activation field of the snapshot format.
enum class Activation : std::uint32_t { Relu = 0, Linear = 1, Softmax = 2 };

enum class Mode { Deterministic, Stochastic };

enum class Loss { Mse, CrossEntropy };

struct DenseLayer {
  Matrix weights;  // out x in
  Vector biases;   // out
  Activation activation = Activation::Linear;
  /// Drop probability applied to this layer's *input* on stochastic passes.
  double dropout_rate = 0.0;

  Eigen::Index in() const { return weights.cols(); }
  Eigen::Index out() const { return weights.rows(); }
};

/// Q(s,a) = V(s) + A(s,a) - mean_a A(s,a). Both streams read the same
/// trunk output and share a single dropout mask on it.
struct DuelingHead {
  DenseLayer value;      // in -> 1, linear
  DenseLayer advantage;  // in -> A, linear
};

/// One sample per column.
struct Minibatch {
  Matrix inputs;
  Matrix targets;

  Eigen::Index size() const { return inputs.cols(); }
};

/// n_passes x output_dim; row i is the i-th stochastic forward pass.
using PassMatrix = Matrix;

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Dense feedforward network with optional dueling head, inverted dropout,
/// manual backprop and an embedded Adam optimizer.
///
/// Dropout RNG contract: a stochastic call over B samples draws, for each
/// sample in order, for each dropout site in forward order (trunk layer
/// inputs, then the dueling head input), one uniform01 per input unit.
/// A unit is dropped when the draw is < rate; kept units are scaled by
/// 1/(1-rate). Sites with rate 0 draw nothing. mc_forward treats each pass
/// as one sample, so its rows follow the same order.
class Network {
 public:
  Network() = default;
  Network(std::vector<DenseLayer> layers, std::optional<DuelingHead> head = std::nullopt,
          AdamConfig adam = {});

  /// relu trunk + plain output layer. `hidden_dropout` goes on every layer
  /// whose input is a hidden activation.
  static Network mlp(int input_dim, const std::vector<int>& hidden, int output_dim,
                     Activation output_activation, double hidden_dropout, Rng& init_rng);

  /// relu trunk + dueling head with `actions` outputs.
  static Network dueling(int input_dim, const std::vector<int>& hidden, int actions,
                         double hidden_dropout, Rng& init_rng);

  Eigen::Index input_dim() const;
  Eigen::Index output_dim() const;
  bool is_dueling() const { return head_.has_value(); }
  bool has_dropout() const;
  Activation output_activation() const;

  const std::vector<DenseLayer>& layers() const { return layers_; }
  const std::optional<DuelingHead>& head() const { return head_; }

  /// Mutable access for hand-set test weights. Does not touch Adam state.
  std::vector<DenseLayer>& mutable_layers() { return layers_; }
  std::optional<DuelingHead>& mutable_head() { return head_; }

  /// Sets every dropout rate to `rate` (sites that had one).
  void set_dropout(double rate);

  Vector forward(const Vector& input, Mode mode, Rng* rng = nullptr) const;

  /// Deterministic batched forward, one sample per column.
  Matrix forward_batch(const Matrix& inputs) const;

  PassMatrix mc_forward(const Vector& input, int n_passes, Rng& rng) const;

  /// One optimizer step; returns the pre-step mean loss. Dropout masks are
  /// sampled from `rng` for the training forward pass.
  double train_step(const Minibatch& batch, Loss loss, double learning_rate, Rng& rng);

  /// Mean loss of a deterministic pass (no dropout).
  double loss(const Minibatch& batch, Loss loss) const;

  /// Max relative error between analytic and central-difference gradients
  /// (step 1e-5) over every parameter. Dropout is ignored.
  double gradient_check(const Minibatch& batch, Loss loss) const;

  /// Copies parameters only; this network's optimizer state is kept.
  void copy_params_from(const Network& src);

  bool same_architecture(const Network& other) const;

  /// Flat view of all parameters in snapshot order (weights then biases, per layer).
  std::vector<double> flat_params() const;

  void save(const std::filesystem::path& path) const;
  static Network load(const std::filesystem::path& path);

 private:
  struct Cache;
  struct Gradients;

  std::size_t site_count() const;
  const DenseLayer& site_layer(std::size_t site) const;
  std::vector<Matrix> draw_masks(Eigen::Index samples, Rng& rng) const;
  Matrix run(const Matrix& inputs, const std::vector<Matrix>* masks, Cache* cache) const;
  double batch_loss(const Matrix& output, const Matrix& targets, Loss loss, std::size_t* bad) const;
  Gradients backward(const Cache& cache, const Matrix& targets, Loss loss) const;
  std::vector<DenseLayer*> param_blocks();
  std::vector<const DenseLayer*> param_blocks() const;
  void validate() const;
  void check_batch(const Minibatch& batch, Loss loss) const;

  std::vector<DenseLayer> layers_;
  std::optional<DuelingHead> head_;

  AdamConfig adam_;
  std::int64_t adam_steps_ = 0;
  std::vector<Matrix> adam_m_w_, adam_v_w_;
  std::vector<Vector> adam_m_b_, adam_v_b_;
};

void copy_params(const Network& src, Network& dst);

/// Lowest-index argmax.
Eigen::Index argmax(const Vector& values);

}  // namespace sua::nn
