#include "sua/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace sua::uncertainty {

double mean_column_variance(const nn::PassMatrix& passes) {
  if (passes.rows() == 0 || passes.cols() == 0) throw StructuralError("empty pass matrix");
  // Centered on the first pass first, so identical passes give exactly 0.
  const nn::Matrix shifted = passes.rowwise() - passes.row(0);
  const Eigen::RowVectorXd mean = shifted.colwise().mean();
  const Eigen::RowVectorXd var = (shifted.rowwise() - mean).colwise().squaredNorm() / static_cast<double>(passes.rows());
  return var.mean();
}

double nearest_rank_percentile(std::span<const double> values, double p) {
  if (values.empty()) throw StructuralError("percentile of an empty set");
  if (!(p > 0.0 && p <= 100.0)) throw StructuralError("percentile must lie in (0, 100]");
  const auto n = values.size();
  // p * n / 100 is exact for integral p and moderate n; the slack absorbs
  // rounding for fractional p.
  const double exact = p * static_cast<double>(n) / 100.0;
  auto rank = static_cast<std::size_t>(std::ceil(exact - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, n);
  std::vector<double> scratch(values.begin(), values.end());
  auto nth = scratch.begin() + static_cast<std::ptrdiff_t>(rank - 1);
  std::nth_element(scratch.begin(), nth, scratch.end());
  return *nth;
}

SecondaryNet::SecondaryNet(nn::Network net, int n_passes) : net_(std::move(net)), n_passes_(n_passes) {
  if (n_passes < 1) throw StructuralError("n_passes must be positive");
}

double SecondaryNet::student_uncertainty(const nn::Vector& state, Rng& rng) const {
  return student_uncertainty(state, rng, nullptr);
}

double SecondaryNet::student_uncertainty(const nn::Vector& state, Rng& rng, nn::PassMatrix* passes) const {
  nn::PassMatrix f = net_.mc_forward(state, n_passes_, rng);
  const double u = mean_column_variance(f);
  if (passes) *passes = std::move(f);
  return u;
}

double SecondaryNet::update(const nn::Minibatch& batch, double learning_rate, Rng& rng) {
  const double loss = net_.train_step(batch, nn::Loss::Mse, learning_rate, rng);
  trained_once_ = true;
  return loss;
}

UncertaintyBuffer::UncertaintyBuffer(std::size_t min_window, std::size_t max_window)
    : min_window_(min_window), max_window_(max_window) {
  if (min_window == 0 || max_window == 0) throw StructuralError("uncertainty windows must be positive");
  if (min_window > max_window) throw StructuralError("min window exceeds max window");
}

void UncertaintyBuffer::record(double u) {
  if (!(u >= 0.0) || !std::isfinite(u)) throw InputError("uncertainty must be finite and non-negative");
  window_.push_back(u);
  while (window_.size() > max_window_) window_.pop_front();
}

std::optional<double> UncertaintyBuffer::threshold(double p1) const {
  if (window_.size() < min_window_) return std::nullopt;
  const std::vector<double> values(window_.begin(), window_.end());
  return nearest_rank_percentile(values, p1);
}

std::optional<double> UncertaintyBuffer::record_and_threshold(double u, double p1) {
  record(u);
  return threshold(p1);
}

}  // namespace sua::uncertainty
