#include "sua/network.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace sua::nn {

static_assert(std::endian::native == std::endian::little,
              "snapshot I/O assumes a little-endian host");

namespace {

constexpr char kMagic[7] = {'A', 'D', 'V', 'N', 'E', 'T', '1'};
constexpr std::uint32_t kDuelingValueCode = 3;
constexpr std::uint32_t kDuelingAdvantageCode = 4;

DenseLayer init_layer(int in, int out, Activation act, double dropout, Rng& rng) {
  DenseLayer layer;
  layer.weights.resize(out, in);
  layer.biases = Vector::Zero(out);
  layer.activation = act;
  layer.dropout_rate = dropout;
  // He-uniform for relu, Xavier-uniform otherwise.
  const double limit = act == Activation::Relu ? std::sqrt(6.0 / in) : std::sqrt(6.0 / (in + out));
  for (int r = 0; r < out; ++r)
    for (int c = 0; c < in; ++c) layer.weights(r, c) = (2.0 * uniform01(rng) - 1.0) * limit;
  return layer;
}

Matrix relu(const Matrix& z) { return z.cwiseMax(0.0); }

Matrix softmax_cols(const Matrix& z) {
  Matrix p(z.rows(), z.cols());
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    const double shift = z.col(c).maxCoeff();
    p.col(c) = (z.col(c).array() - shift).exp().matrix();
    p.col(c) /= p.col(c).sum();
  }
  return p;
}

Matrix log_softmax_cols(const Matrix& z) {
  Matrix out(z.rows(), z.cols());
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    const double shift = z.col(c).maxCoeff();
    const double lse = shift + std::log((z.col(c).array() - shift).exp().sum());
    out.col(c) = z.col(c).array() - lse;
  }
  return out;
}

Matrix affine(const DenseLayer& layer, const Matrix& x) {
  Matrix z = layer.weights * x;
  z.colwise() += layer.biases;
  return z;
}

template <typename T>
void write_pod(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw StructuralError("snapshot truncated");
  return value;
}

}  // namespace

struct Network::Cache {
  std::vector<Matrix> site_inputs;  // masked input seen by each site
  std::vector<Matrix> masks;        // empty when the site had no mask
  std::vector<Matrix> pre;          // pre-activation per trunk layer
  Matrix output;
};

struct Network::Gradients {
  std::vector<Matrix> w;
  std::vector<Vector> b;
};

Network::Network(std::vector<DenseLayer> layers, std::optional<DuelingHead> head, AdamConfig adam)
    : layers_(std::move(layers)), head_(std::move(head)), adam_(adam) {
  validate();
  for (const DenseLayer* block : param_blocks()) {
    adam_m_w_.push_back(Matrix::Zero(block->out(), block->in()));
    adam_v_w_.push_back(Matrix::Zero(block->out(), block->in()));
    adam_m_b_.push_back(Vector::Zero(block->out()));
    adam_v_b_.push_back(Vector::Zero(block->out()));
  }
}

Network Network::mlp(int input_dim, const std::vector<int>& hidden, int output_dim,
                     Activation output_activation, double hidden_dropout, Rng& init_rng) {
  std::vector<DenseLayer> layers;
  int in = input_dim;
  for (int units : hidden) {
    layers.push_back(init_layer(in, units, Activation::Relu, layers.empty() ? 0.0 : hidden_dropout, init_rng));
    in = units;
  }
  layers.push_back(init_layer(in, output_dim, output_activation, layers.empty() ? 0.0 : hidden_dropout, init_rng));
  return Network(std::move(layers));
}

Network Network::dueling(int input_dim, const std::vector<int>& hidden, int actions,
                         double hidden_dropout, Rng& init_rng) {
  if (hidden.empty()) throw StructuralError("dueling network needs at least one hidden layer");
  std::vector<DenseLayer> layers;
  int in = input_dim;
  for (int units : hidden) {
    layers.push_back(init_layer(in, units, Activation::Relu, layers.empty() ? 0.0 : hidden_dropout, init_rng));
    in = units;
  }
  DuelingHead head{init_layer(in, 1, Activation::Linear, hidden_dropout, init_rng),
                   init_layer(in, actions, Activation::Linear, hidden_dropout, init_rng)};
  return Network(std::move(layers), std::move(head));
}

void Network::validate() const {
  if (layers_.empty()) throw StructuralError("network has no layers");
  auto check_layer = [](const DenseLayer& l) {
    if (l.biases.size() != l.out()) throw StructuralError("bias size does not match layer output");
    if (!(l.dropout_rate >= 0.0 && l.dropout_rate < 1.0))
      throw StructuralError("dropout rate must lie in [0, 1)");
  };
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    check_layer(layers_[i]);
    if (i > 0 && layers_[i].in() != layers_[i - 1].out())
      throw StructuralError("layer " + std::to_string(i) + " input does not match previous output");
    const bool last_plain = !head_ && i + 1 == layers_.size();
    if (!last_plain && layers_[i].activation != Activation::Relu)
      throw StructuralError("hidden layers must use relu");
  }
  if (head_) {
    check_layer(head_->value);
    check_layer(head_->advantage);
    const auto trunk_out = layers_.back().out();
    if (head_->value.in() != trunk_out || head_->advantage.in() != trunk_out)
      throw StructuralError("dueling head input does not match trunk output");
    if (head_->value.out() != 1) throw StructuralError("dueling value stream must be scalar");
    if (head_->value.activation != Activation::Linear || head_->advantage.activation != Activation::Linear)
      throw StructuralError("dueling streams must be linear");
    if (head_->value.dropout_rate != head_->advantage.dropout_rate)
      throw StructuralError("dueling streams must share one dropout rate");
  }
}

Eigen::Index Network::input_dim() const { return layers_.front().in(); }

Eigen::Index Network::output_dim() const {
  return head_ ? head_->advantage.out() : layers_.back().out();
}

Activation Network::output_activation() const {
  return head_ ? Activation::Linear : layers_.back().activation;
}

bool Network::has_dropout() const {
  for (std::size_t s = 0; s < site_count(); ++s)
    if (site_layer(s).dropout_rate > 0.0) return true;
  return false;
}

void Network::set_dropout(double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw StructuralError("dropout rate must lie in [0, 1)");
  for (auto& l : layers_)
    if (l.dropout_rate > 0.0) l.dropout_rate = rate;
  if (head_ && head_->value.dropout_rate > 0.0) head_->value.dropout_rate = head_->advantage.dropout_rate = rate;
}

std::size_t Network::site_count() const { return layers_.size() + (head_ ? 1 : 0); }

const DenseLayer& Network::site_layer(std::size_t site) const {
  return site < layers_.size() ? layers_[site] : head_->value;
}

std::vector<DenseLayer*> Network::param_blocks() {
  std::vector<DenseLayer*> blocks;
  for (auto& l : layers_) blocks.push_back(&l);
  if (head_) {
    blocks.push_back(&head_->value);
    blocks.push_back(&head_->advantage);
  }
  return blocks;
}

std::vector<const DenseLayer*> Network::param_blocks() const {
  std::vector<const DenseLayer*> blocks;
  for (const auto& l : layers_) blocks.push_back(&l);
  if (head_) {
    blocks.push_back(&head_->value);
    blocks.push_back(&head_->advantage);
  }
  return blocks;
}

std::vector<Matrix> Network::draw_masks(Eigen::Index samples, Rng& rng) const {
  std::vector<Matrix> masks(site_count());
  for (std::size_t s = 0; s < site_count(); ++s) {
    const DenseLayer& l = site_layer(s);
    if (l.dropout_rate > 0.0) masks[s].resize(l.in(), samples);
  }
  for (Eigen::Index n = 0; n < samples; ++n) {
    for (std::size_t s = 0; s < site_count(); ++s) {
      const double rate = site_layer(s).dropout_rate;
      if (rate <= 0.0) continue;
      const double keep_scale = 1.0 / (1.0 - rate);
      for (Eigen::Index j = 0; j < masks[s].rows(); ++j)
        masks[s](j, n) = uniform01(rng) < rate ? 0.0 : keep_scale;
    }
  }
  return masks;
}

Matrix Network::run(const Matrix& inputs, const std::vector<Matrix>* masks, Cache* cache) const {
  if (cache) {
    cache->site_inputs.assign(site_count(), Matrix());
    cache->masks.assign(site_count(), Matrix());
    cache->pre.assign(layers_.size(), Matrix());
  }
  auto apply_mask = [&](std::size_t site, const Matrix& x) -> Matrix {
    Matrix xm = (masks && (*masks)[site].size() > 0) ? Matrix(x.cwiseProduct((*masks)[site])) : x;
    if (cache) {
      if (masks) cache->masks[site] = (*masks)[site];
      cache->site_inputs[site] = xm;
    }
    return xm;
  };

  Matrix x = inputs;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const DenseLayer& layer = layers_[i];
    Matrix z = affine(layer, apply_mask(i, x));
    switch (layer.activation) {
      case Activation::Relu: x = relu(z); break;
      case Activation::Linear: x = z; break;
      case Activation::Softmax: x = softmax_cols(z); break;
    }
    if (cache) cache->pre[i] = std::move(z);
  }
  if (head_) {
    const Matrix xm = apply_mask(layers_.size(), x);
    const Matrix v = affine(head_->value, xm);
    Matrix a = affine(head_->advantage, xm);
    const Eigen::RowVectorXd shift = v.row(0) - a.colwise().mean();
    a.rowwise() += shift;
    x = std::move(a);
  }
  if (cache) cache->output = x;
  return x;
}

Vector Network::forward(const Vector& input, Mode mode, Rng* rng) const {
  if (input.size() != input_dim())
    throw StructuralError("input dimension " + std::to_string(input.size()) + " does not match network input " +
                          std::to_string(input_dim()));
  if (!input.allFinite()) throw InputError("non-finite network input");
  if (mode == Mode::Deterministic) return run(input, nullptr, nullptr).col(0);
  if (!rng) throw StructuralError("stochastic forward requires a generator");
  const auto masks = draw_masks(1, *rng);
  return run(input, &masks, nullptr).col(0);
}

Matrix Network::forward_batch(const Matrix& inputs) const {
  if (inputs.rows() != input_dim()) throw StructuralError("batch input dimension does not match network");
  return run(inputs, nullptr, nullptr);
}

PassMatrix Network::mc_forward(const Vector& input, int n_passes, Rng& rng) const {
  if (n_passes < 1) throw StructuralError("n_passes must be positive");
  if (input.size() != input_dim()) throw StructuralError("input dimension does not match network");
  if (!input.allFinite()) throw InputError("non-finite network input");
  const Matrix replicated = input.replicate(1, n_passes);
  const auto masks = draw_masks(n_passes, rng);
  return run(replicated, &masks, nullptr).transpose();
}

void Network::check_batch(const Minibatch& batch, Loss loss) const {
  if (batch.size() == 0) throw StructuralError("empty minibatch");
  if (batch.targets.cols() != batch.size()) throw StructuralError("inputs and targets differ in length");
  if (batch.inputs.rows() != input_dim()) throw StructuralError("minibatch input dimension does not match network");
  if (batch.targets.rows() != output_dim()) throw StructuralError("minibatch target dimension does not match network");
  if (loss == Loss::CrossEntropy && output_activation() != Activation::Softmax)
    throw StructuralError("cross-entropy requires a softmax output");
}

double Network::batch_loss(const Matrix& output, const Matrix& targets, Loss loss, std::size_t* bad) const {
  const auto batch = output.cols();
  Vector per_sample(batch);
  if (loss == Loss::Mse) {
    per_sample = (output - targets).colwise().squaredNorm().transpose();
  } else {
    // `output` holds log-probabilities here.
    per_sample = -(targets.cwiseProduct(output)).colwise().sum().transpose();
  }
  for (Eigen::Index i = 0; i < batch; ++i) {
    if (!std::isfinite(per_sample(i))) {
      if (bad) *bad = static_cast<std::size_t>(i);
      return std::numeric_limits<double>::quiet_NaN();
    }
  }
  return per_sample.mean();
}

double Network::loss(const Minibatch& batch, Loss loss) const {
  check_batch(batch, loss);
  Cache cache;
  run(batch.inputs, nullptr, &cache);
  const Matrix& scored = loss == Loss::CrossEntropy ? Matrix(log_softmax_cols(cache.pre.back())) : cache.output;
  return batch_loss(scored, batch.targets, loss, nullptr);
}

Network::Gradients Network::backward(const Cache& cache, const Matrix& targets, Loss loss) const {
  const double inv_batch = 1.0 / static_cast<double>(targets.cols());
  Gradients grads;
  const auto blocks = param_blocks();
  grads.w.resize(blocks.size());
  grads.b.resize(blocks.size());

  auto through_mask = [&](std::size_t site, Matrix d) {
    if (cache.masks[site].size() > 0) d = d.cwiseProduct(cache.masks[site]);
    return d;
  };

  // Gradient w.r.t. the final pre-activation (or the dueling Q output).
  Matrix delta;
  const std::size_t last = layers_.size() - 1;
  if (loss == Loss::CrossEntropy) {
    const Matrix p = cache.output;
    const Eigen::RowVectorXd mass = targets.colwise().sum();
    delta = (p.array().rowwise() * mass.array()).matrix() - targets;
    delta *= inv_batch;
  } else {
    const Matrix g = 2.0 * inv_batch * (cache.output - targets);
    if (head_) {
      delta = g;
    } else if (layers_[last].activation == Activation::Softmax) {
      const Matrix& p = cache.output;
      const Eigen::RowVectorXd dot = g.cwiseProduct(p).colwise().sum();
      delta = p.cwiseProduct(g - dot.replicate(g.rows(), 1));
    } else if (layers_[last].activation == Activation::Relu) {
      delta = g.cwiseProduct((cache.pre[last].array() > 0.0).cast<double>().matrix());
    } else {
      delta = g;
    }
  }

  if (head_) {
    const std::size_t site = layers_.size();
    const Matrix& xm = cache.site_inputs[site];
    const Eigen::RowVectorXd d_value = delta.colwise().sum();
    const Eigen::RowVectorXd d_mean = delta.colwise().mean();
    const Matrix d_adv = delta - d_mean.replicate(delta.rows(), 1);
    const std::size_t vi = blocks.size() - 2, ai = blocks.size() - 1;
    grads.w[vi] = d_value * xm.transpose();
    grads.b[vi] = Vector::Constant(1, d_value.sum());
    grads.w[ai] = d_adv * xm.transpose();
    grads.b[ai] = d_adv.rowwise().sum();
    Matrix dx = head_->value.weights.transpose() * d_value + head_->advantage.weights.transpose() * d_adv;
    dx = through_mask(site, std::move(dx));
    delta = dx.cwiseProduct((cache.pre[last].array() > 0.0).cast<double>().matrix());
  }

  for (std::size_t i = layers_.size(); i-- > 0;) {
    const Matrix& xm = cache.site_inputs[i];
    grads.w[i] = delta * xm.transpose();
    grads.b[i] = delta.rowwise().sum();
    if (i == 0) break;
    Matrix dx = through_mask(i, layers_[i].weights.transpose() * delta);
    delta = dx.cwiseProduct((cache.pre[i - 1].array() > 0.0).cast<double>().matrix());
  }
  return grads;
}

double Network::train_step(const Minibatch& batch, Loss loss, double learning_rate, Rng& rng) {
  check_batch(batch, loss);
  const auto masks = draw_masks(batch.size(), rng);
  Cache cache;
  run(batch.inputs, &masks, &cache);
  std::size_t bad = 0;
  const Matrix scored = loss == Loss::CrossEntropy ? log_softmax_cols(cache.pre.back()) : cache.output;
  const double value = batch_loss(scored, batch.targets, loss, &bad);
  if (!std::isfinite(value))
    throw TrainingDivergence("non-finite loss at batch index " + std::to_string(bad), bad);

  const Gradients grads = backward(cache, batch.targets, loss);

  ++adam_steps_;
  const double t = static_cast<double>(adam_steps_);
  const double correction1 = 1.0 - std::pow(adam_.beta1, t);
  const double correction2 = 1.0 - std::pow(adam_.beta2, t);
  auto blocks = param_blocks();
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    DenseLayer& l = *blocks[k];
    adam_m_w_[k] = adam_.beta1 * adam_m_w_[k] + (1.0 - adam_.beta1) * grads.w[k];
    adam_v_w_[k] = adam_.beta2 * adam_v_w_[k] + (1.0 - adam_.beta2) * grads.w[k].cwiseAbs2();
    adam_m_b_[k] = adam_.beta1 * adam_m_b_[k] + (1.0 - adam_.beta1) * grads.b[k];
    adam_v_b_[k] = adam_.beta2 * adam_v_b_[k] + (1.0 - adam_.beta2) * grads.b[k].cwiseAbs2();
    l.weights.array() -= learning_rate * (adam_m_w_[k].array() / correction1) /
                         ((adam_v_w_[k].array() / correction2).sqrt() + adam_.epsilon);
    l.biases.array() -= learning_rate * (adam_m_b_[k].array() / correction1) /
                        ((adam_v_b_[k].array() / correction2).sqrt() + adam_.epsilon);
  }
  return value;
}

double Network::gradient_check(const Minibatch& batch, Loss loss) const {
  check_batch(batch, loss);
  Cache cache;
  run(batch.inputs, nullptr, &cache);
  const Gradients grads = backward(cache, batch.targets, loss);

  Network probe = *this;
  auto probe_blocks = probe.param_blocks();
  constexpr double h = 1e-5;
  double worst = 0.0;
  auto compare = [&](double& param, double analytic) {
    const double saved = param;
    param = saved + h;
    const double up = probe.loss(batch, loss);
    param = saved - h;
    const double down = probe.loss(batch, loss);
    param = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  };
  for (std::size_t k = 0; k < probe_blocks.size(); ++k) {
    DenseLayer& l = *probe_blocks[k];
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) compare(l.weights(r, c), grads.w[k](r, c));
    for (Eigen::Index r = 0; r < l.biases.size(); ++r) compare(l.biases(r), grads.b[k](r));
  }
  return worst;
}

bool Network::same_architecture(const Network& other) const {
  const auto a = param_blocks();
  const auto b = other.param_blocks();
  if (a.size() != b.size() || is_dueling() != other.is_dueling()) return false;
  for (std::size_t k = 0; k < a.size(); ++k)
    if (a[k]->in() != b[k]->in() || a[k]->out() != b[k]->out() || a[k]->activation != b[k]->activation ||
        a[k]->dropout_rate != b[k]->dropout_rate)
      return false;
  return true;
}

void Network::copy_params_from(const Network& src) {
  if (&src == this) return;
  if (!same_architecture(src)) throw StructuralError("copy_params: architecture mismatch");
  auto dst_blocks = param_blocks();
  const auto src_blocks = src.param_blocks();
  for (std::size_t k = 0; k < dst_blocks.size(); ++k) {
    dst_blocks[k]->weights = src_blocks[k]->weights;
    dst_blocks[k]->biases = src_blocks[k]->biases;
  }
}

void copy_params(const Network& src, Network& dst) { dst.copy_params_from(src); }

std::vector<double> Network::flat_params() const {
  std::vector<double> out;
  for (const DenseLayer* l : param_blocks()) {
    for (Eigen::Index r = 0; r < l->weights.rows(); ++r)
      for (Eigen::Index c = 0; c < l->weights.cols(); ++c) out.push_back(l->weights(r, c));
    for (Eigen::Index r = 0; r < l->biases.size(); ++r) out.push_back(l->biases(r));
  }
  return out;
}

void Network::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof(kMagic));
  const auto blocks = param_blocks();
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(blocks.size()));
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const DenseLayer& l = *blocks[k];
    std::uint32_t code = static_cast<std::uint32_t>(l.activation);
    if (head_ && k == blocks.size() - 2) code = kDuelingValueCode;
    if (head_ && k == blocks.size() - 1) code = kDuelingAdvantageCode;
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(l.in()));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(l.out()));
    write_pod<std::uint32_t>(os, code);
    write_pod<float>(os, static_cast<float>(l.dropout_rate));
  }
  for (const DenseLayer* l : blocks) {
    for (Eigen::Index r = 0; r < l->weights.rows(); ++r)
      for (Eigen::Index c = 0; c < l->weights.cols(); ++c) write_pod<double>(os, l->weights(r, c));
    for (Eigen::Index r = 0; r < l->biases.size(); ++r) write_pod<double>(os, l->biases(r));
  }
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

Network Network::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  char magic[sizeof(kMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw StructuralError("not an ADVNET1 snapshot");
  const auto count = read_pod<std::uint32_t>(is);
  if (count == 0 || count > 1024) throw StructuralError("implausible layer count in snapshot");
  std::vector<DenseLayer> blocks(count);
  std::vector<std::uint32_t> codes(count);
  for (auto k = 0u; k < count; ++k) {
    const auto in = read_pod<std::uint32_t>(is);
    const auto out = read_pod<std::uint32_t>(is);
    codes[k] = read_pod<std::uint32_t>(is);
    if (codes[k] > kDuelingAdvantageCode) throw StructuralError("unknown activation code in snapshot");
    blocks[k].weights.resize(out, in);
    blocks[k].biases.resize(out);
    blocks[k].dropout_rate = static_cast<double>(read_pod<float>(is));
    blocks[k].activation = codes[k] >= kDuelingValueCode ? Activation::Linear : static_cast<Activation>(codes[k]);
  }
  for (auto& l : blocks) {
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) l.weights(r, c) = read_pod<double>(is);
    for (Eigen::Index r = 0; r < l.biases.size(); ++r) l.biases(r) = read_pod<double>(is);
  }
  const bool dueling = count >= 3 && codes[count - 2] == kDuelingValueCode && codes[count - 1] == kDuelingAdvantageCode;
  for (auto k = 0u; k < count; ++k) {
    const bool in_head = dueling && k + 2 >= count;
    if (!in_head && codes[k] >= kDuelingValueCode) throw StructuralError("misplaced dueling stream in snapshot");
  }
  if (dueling) {
    DuelingHead head{std::move(blocks[count - 2]), std::move(blocks[count - 1])};
    blocks.resize(count - 2);
    return Network(std::move(blocks), std::move(head));
  }
  return Network(std::move(blocks));
}

Eigen::Index argmax(const Vector& values) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < values.size(); ++i)
    if (values(i) > values(best)) best = i;
  return best;
}

}  // namespace sua::nn
