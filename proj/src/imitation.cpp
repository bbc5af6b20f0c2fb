#include "sua/imitation.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "sua/uncertainty.hpp"

namespace sua::imitation {

void AdviceBuffer::append(nn::Vector state, int action) {
  if (action < 0) throw InputError("negative advice action");
  states_.push_back(std::move(state));
  actions_.push_back(action);
}

void AdviceBuffer::write_csv(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string());
  os.precision(17);
  for (std::size_t i = 0; i < states_.size(); ++i) {
    for (Eigen::Index j = 0; j < states_[i].size(); ++j) os << states_[i](j) << ',';
    os << actions_[i] << '\n';
  }
}

bool training_due(std::size_t buffer_size, std::size_t n_last, std::int64_t t, std::int64_t t_last,
                  std::size_t n_min, std::int64_t t_min) {
  if (buffer_size < n_last) return false;
  const std::size_t fresh = buffer_size - n_last;
  if (fresh >= n_min) return true;
  // fresh >= n_min / 2 in real arithmetic
  return 2 * fresh >= n_min && t - t_last >= t_min;
}

TeacherModel::TeacherModel(nn::Network net, int n_passes) : net_(std::move(net)), n_passes_(n_passes) {
  if (net_.output_activation() != nn::Activation::Softmax) throw StructuralError("teacher model needs a softmax head");
  if (n_passes < 1) throw StructuralError("n_passes must be positive");
}

bool TeacherModel::maybe_train(const AdviceBuffer& buffer, std::int64_t t, const TrainingSchedule& schedule,
                               Rng& rng) {
  if (schedule.n_min < 1) throw StructuralError("n_min must be positive");
  if (!training_due(buffer.size(), n_last_, t, t_last_, schedule.n_min, schedule.t_min)) return false;
  train(buffer, trained_ ? schedule.k_periodic : schedule.k_init, schedule, rng);
  trained_ = true;
  c2_ = compute_c2(buffer, schedule.p2, rng, schedule.c2_sample_cap);
  n_last_ = buffer.size();
  t_last_ = t;
  return true;
}

void TeacherModel::train(const AdviceBuffer& buffer, int iterations, const TrainingSchedule& schedule, Rng& rng) {
  if (buffer.empty()) throw GateError("cannot train the teacher model on an empty buffer");
  const auto dim = net_.input_dim();
  const auto classes = net_.output_dim();
  nn::Minibatch batch;
  batch.inputs.resize(dim, static_cast<Eigen::Index>(schedule.batch_size));
  batch.targets.resize(classes, static_cast<Eigen::Index>(schedule.batch_size));
  for (int it = 0; it < iterations; ++it) {
    batch.targets.setZero();
    for (Eigen::Index i = 0; i < batch.size(); ++i) {
      const std::size_t k = uniform_index(rng, buffer.size());
      batch.inputs.col(i) = buffer.states()[k];
      if (buffer.actions()[k] >= classes) throw InputError("advice action exceeds model classes");
      batch.targets(buffer.actions()[k], i) = 1.0;
    }
    net_.train_step(batch, nn::Loss::CrossEntropy, schedule.learning_rate, rng);
  }
}

nn::Vector TeacherModel::probabilities(const nn::Vector& state) const {
  return net_.forward(state, nn::Mode::Deterministic);
}

int TeacherModel::action(const nn::Vector& state) const {
  if (!trained_) throw GateError("teacher model queried before training");
  return static_cast<int>(nn::argmax(probabilities(state)));
}

double TeacherModel::uncertainty(const nn::Vector& state, Rng& rng, nn::PassMatrix* passes) const {
  if (!trained_) throw GateError("teacher model uncertainty queried before training");
  nn::PassMatrix f = net_.mc_forward(state, n_passes_, rng);
  const double u = uncertainty::mean_column_variance(f);
  if (passes) *passes = std::move(f);
  return u;
}

double TeacherModel::compute_c2(const AdviceBuffer& buffer, double p2, Rng& rng, std::size_t cap) const {
  if (!trained_) throw GateError("c2 requested before training");
  if (buffer.empty()) throw GateError("c2 needs a nonempty advice buffer");
  std::vector<std::size_t> indices(buffer.size());
  std::iota(indices.begin(), indices.end(), 0);
  if (indices.size() > cap) {
    // Partial Fisher-Yates on a stream fixed by the buffer size.
    Rng pick = make_stream(buffer.size(), 0xc2c2);
    for (std::size_t i = 0; i < cap; ++i) std::swap(indices[i], indices[i + uniform_index(pick, indices.size() - i)]);
    indices.resize(cap);
  }
  std::vector<double> scores;
  scores.reserve(indices.size());
  for (std::size_t k : indices)
    scores.push_back(uncertainty::mean_column_variance(net_.mc_forward(buffer.states()[k], n_passes_, rng)));
  return uncertainty::nearest_rank_percentile(scores, p2);
}

}  // namespace sua::imitation
