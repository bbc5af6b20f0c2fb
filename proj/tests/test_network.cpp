#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "sua/network.hpp"

using namespace sua;
using nn::Activation;
using nn::DenseLayer;
using nn::Matrix;
using nn::Network;
using nn::Vector;

namespace {

DenseLayer layer(Matrix w, Vector b, Activation act, double dropout = 0.0) {
  DenseLayer l;
  l.weights = std::move(w);
  l.biases = std::move(b);
  l.activation = act;
  l.dropout_rate = dropout;
  return l;
}

// Plain-loop forward with explicit masks; mirrors the documented mask order
// without touching Network internals.
Vector loop_forward(const Network& net, const Vector& x, Rng* rng) {
  auto masked = [&](const Vector& in, double rate) {
    Vector out = in;
    if (!rng || rate <= 0.0) return out;
    for (Eigen::Index j = 0; j < in.size(); ++j) {
      const double u = static_cast<double>((*rng)() >> 11) * 0x1.0p-53;
      out(j) = u < rate ? 0.0 : in(j) / (1.0 - rate);
    }
    return out;
  };
  auto dense = [](const DenseLayer& l, const Vector& in) {
    Vector z(l.out());
    for (Eigen::Index r = 0; r < l.out(); ++r) {
      double s = l.biases(r);
      for (Eigen::Index c = 0; c < l.in(); ++c) s += l.weights(r, c) * in(c);
      z(r) = s;
    }
    return z;
  };
  Vector h = x;
  for (const auto& l : net.layers()) {
    Vector z = dense(l, masked(h, l.dropout_rate));
    if (l.activation == Activation::Relu) {
      for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = std::max(0.0, z(i));
    } else if (l.activation == Activation::Softmax) {
      double mx = z.maxCoeff(), sum = 0.0;
      for (Eigen::Index i = 0; i < z.size(); ++i) sum += std::exp(z(i) - mx);
      for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = std::exp(z(i) - mx) / sum;
    }
    h = z;
  }
  if (net.head()) {
    const Vector hm = masked(h, net.head()->value.dropout_rate);
    const double v = dense(net.head()->value, hm)(0);
    Vector a = dense(net.head()->advantage, hm);
    double mean = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) mean += a(i);
    mean /= static_cast<double>(a.size());
    for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = v + a(i) - mean;
    h = a;
  }
  return h;
}

Vector random_vector(Eigen::Index n, Rng& rng) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = 2.0 * uniform01(rng) - 1.0;
  return v;
}

nn::Minibatch random_batch(const Network& net, int size, Rng& rng, bool one_hot) {
  nn::Minibatch b;
  b.inputs.resize(net.input_dim(), size);
  b.targets = Matrix::Zero(net.output_dim(), size);
  for (int c = 0; c < size; ++c) {
    b.inputs.col(c) = random_vector(net.input_dim(), rng);
    if (one_hot) b.targets(static_cast<Eigen::Index>(uniform_index(rng, net.output_dim())), c) = 1.0;
    else b.targets.col(c) = random_vector(net.output_dim(), rng);
  }
  return b;
}

}  // namespace

TEST_SUITE("network") {

TEST_CASE("identity layer forwards its input") {
  Network net({layer(Matrix::Identity(3, 3), Vector::Zero(3), Activation::Linear)});
  const Vector x = (Vector(3) << 0.5, -2.0, 7.0).finished();
  CHECK(net.forward(x, nn::Mode::Deterministic) == x);
}

TEST_CASE("two-layer relu chain matches hand computation") {
  // h = relu([1 -1; 2 0] x + [0; -1]), y = [3 1] h + 0.5
  Matrix w1(2, 2);
  w1 << 1, -1, 2, 0;
  Matrix w2(1, 2);
  w2 << 3, 1;
  Network net({layer(w1, (Vector(2) << 0, -1).finished(), Activation::Relu),
               layer(w2, Vector::Constant(1, 0.5), Activation::Linear)});
  // x = (1, 2): pre = (-1, 1) -> h = (0, 1) -> y = 1.5
  CHECK(net.forward((Vector(2) << 1, 2).finished(), nn::Mode::Deterministic)(0) == doctest::Approx(1.5));
  // x = (3, 1): pre = (2, 5) -> h = (2, 5) -> y = 11.5
  CHECK(net.forward((Vector(2) << 3, 1).finished(), nn::Mode::Deterministic)(0) == doctest::Approx(11.5));
}

TEST_CASE("dueling output subtracts the mean advantage") {
  Rng rng(3);
  Network net = Network::dueling(4, {5}, 3, 0.0, rng);
  const Vector x = random_vector(4, rng);
  const Vector q = net.forward(x, nn::Mode::Deterministic);
  CHECK((q - loop_forward(net, x, nullptr)).cwiseAbs().maxCoeff() < 1e-12);
  // Shifting every advantage bias by a constant leaves Q unchanged.
  net.mutable_head()->advantage.biases.array() += 4.0;
  CHECK((net.forward(x, nn::Mode::Deterministic) - q).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("cross-entropy of a uniform softmax over four classes is ln 4") {
  Network net({layer(Matrix::Zero(4, 2), Vector::Zero(4), Activation::Softmax)});
  nn::Minibatch b{(Matrix(2, 1) << 0.3, -0.7).finished(), (Matrix(4, 1) << 0, 0, 1, 0).finished()};
  CHECK(net.loss(b, nn::Loss::CrossEntropy) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("softmax outputs sum to one") {
  Rng rng(9);
  Network net = Network::mlp(6, {8}, 4, Activation::Softmax, 0.3, rng);
  for (int i = 0; i < 20; ++i) {
    const Vector p = net.forward(random_vector(6, rng) * 10.0, nn::Mode::Stochastic, &rng);
    CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p.minCoeff() >= 0.0);
  }
}

TEST_CASE("analytic gradients agree with central differences") {
  Rng rng(11);
  SUBCASE("mse relu/linear") {
    Network net = Network::mlp(3, {5, 4}, 2, Activation::Linear, 0.0, rng);
    CHECK(net.gradient_check(random_batch(net, 6, rng, false), nn::Loss::Mse) < 1e-4);
  }
  SUBCASE("mse dueling") {
    Network net = Network::dueling(3, {6}, 4, 0.0, rng);
    CHECK(net.gradient_check(random_batch(net, 5, rng, false), nn::Loss::Mse) < 1e-4);
  }
  SUBCASE("cross-entropy softmax") {
    Network net = Network::mlp(4, {7}, 3, Activation::Softmax, 0.0, rng);
    CHECK(net.gradient_check(random_batch(net, 8, rng, true), nn::Loss::CrossEntropy) < 1e-4);
  }
  SUBCASE("mse through softmax") {
    Network net = Network::mlp(4, {7}, 3, Activation::Softmax, 0.0, rng);
    CHECK(net.gradient_check(random_batch(net, 4, rng, false), nn::Loss::Mse) < 1e-4);
  }
}

TEST_CASE("finite differences of loss match the closed-form output bias gradient") {
  // The oracle the gradient checker relies on, against a closed form.
  Rng rng(5);
  Network net = Network::mlp(2, {3}, 1, Activation::Linear, 0.0, rng);
  const auto batch = random_batch(net, 3, rng, false);
  Network probe = net;
  const double h = 1e-6;
  probe.mutable_layers()[1].biases(0) += h;
  const double up = probe.loss(batch, nn::Loss::Mse);
  probe.mutable_layers()[1].biases(0) -= 2 * h;
  const double down = probe.loss(batch, nn::Loss::Mse);
  // d/db of mean sum (y - t)^2 = 2 * mean(y - t)
  const Matrix y = net.forward_batch(batch.inputs);
  const double expected = 2.0 * (y - batch.targets).mean();
  CHECK((up - down) / (2 * h) == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("XOR is learned to mse below 0.01 in 2000 steps") {
  Rng init(1);
  Network net = Network::mlp(2, {8}, 1, Activation::Linear, 0.0, init);
  nn::Minibatch xor_batch{(Matrix(2, 4) << 0, 0, 1, 1, 0, 1, 0, 1).finished(), (Matrix(1, 4) << 0, 1, 1, 0).finished()};
  Rng rng(2);
  for (int i = 0; i < 2000; ++i) net.train_step(xor_batch, nn::Loss::Mse, 0.01, rng);
  CHECK(net.loss(xor_batch, nn::Loss::Mse) < 0.01);
}

TEST_CASE("zero learning rate and zero gradients leave parameters unchanged") {
  Rng rng(4);
  Network net = Network::mlp(3, {4}, 2, Activation::Linear, 0.0, rng);
  const auto before = net.flat_params();
  auto batch = random_batch(net, 5, rng, false);
  net.train_step(batch, nn::Loss::Mse, 0.0, rng);
  CHECK(net.flat_params() == before);

  // Fresh optimizer state: zero gradient means zero Adam moments.
  Network fresh = Network::mlp(3, {4}, 2, Activation::Linear, 0.0, rng);
  const auto fresh_before = fresh.flat_params();
  batch.targets = fresh.forward_batch(batch.inputs);
  CHECK(fresh.train_step(batch, nn::Loss::Mse, 0.1, rng) == 0.0);
  CHECK(fresh.flat_params() == fresh_before);
}

TEST_CASE("stochastic passes follow the documented mask order") {
  Rng init(21);
  for (bool dueling : {false, true}) {
    Network net = dueling ? Network::dueling(5, {6, 4}, 3, 0.3, init)
                          : Network::mlp(5, {6, 4}, 3, Activation::Softmax, 0.3, init);
    const Vector x = random_vector(5, init);
    Rng a(77), b(77);
    const nn::PassMatrix passes = net.mc_forward(x, 25, a);
    REQUIRE(passes.rows() == 25);
    REQUIRE(passes.cols() == 3);
    for (int i = 0; i < 25; ++i) {
      const Vector expected = loop_forward(net, x, &b);
      CHECK((passes.row(i).transpose() - expected).cwiseAbs().maxCoeff() < 1e-12);
    }
    // The generators consumed exactly the same number of draws.
    CHECK(a() == b());

    Rng c(5), d(5);
    const Vector single = net.forward(x, nn::Mode::Stochastic, &c);
    CHECK((single - loop_forward(net, x, &d)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("zero dropout passes are identical and draw nothing") {
  Rng init(8);
  Network net = Network::dueling(4, {5}, 2, 0.0, init);
  Rng rng(1), untouched(1);
  const auto passes = net.mc_forward(random_vector(4, init), 10, rng);
  for (int i = 1; i < 10; ++i) CHECK(passes.row(i) == passes.row(0));
  CHECK(rng() == untouched());
}

TEST_CASE("inverted dropout preserves the mean of a linear layer") {
  // E[mask_j / (1 - r)] = 1, so a purely linear net's MC mean converges to
  // the deterministic output; tolerance is four standard errors.
  Matrix w(1, 4);
  w << 1.0, -2.0, 0.5, 3.0;
  Network net({layer(w, Vector::Constant(1, 0.25), Activation::Linear, 0.4)});
  const Vector x = (Vector(4) << 1.0, 1.0, -1.0, 0.5).finished();
  Rng rng(99);
  const int n = 40'000;
  const auto passes = net.mc_forward(x, n, rng);
  const double exact = net.forward(x, nn::Mode::Deterministic)(0);
  // Var of w_j x_j m_j / (1-r) with m ~ Bern(1-r): (w_j x_j)^2 r / (1-r)
  double var = 0.0;
  for (int j = 0; j < 4; ++j) var += std::pow(w(0, j) * x(j), 2) * 0.4 / 0.6;
  CHECK(std::abs(passes.col(0).mean() - exact) < 4.0 * std::sqrt(var / n));
}

TEST_CASE("copy_params makes networks agree and checks architecture") {
  Rng rng(6);
  Network a = Network::dueling(4, {8}, 3, 0.2, rng);
  Network b = Network::dueling(4, {8}, 3, 0.2, rng);
  const Vector x = random_vector(4, rng);
  CHECK(a.forward(x, nn::Mode::Deterministic) != b.forward(x, nn::Mode::Deterministic));
  nn::copy_params(a, b);
  CHECK(a.forward(x, nn::Mode::Deterministic) == b.forward(x, nn::Mode::Deterministic));
  CHECK(nn::argmax(a.forward(x, nn::Mode::Deterministic)) == nn::argmax(b.forward(x, nn::Mode::Deterministic)));

  Network c = Network::dueling(4, {9}, 3, 0.2, rng);
  CHECK_THROWS_AS(nn::copy_params(a, c), StructuralError);
}

TEST_CASE("snapshot round trip is exact") {
  Rng rng(12);
  const auto dir = std::filesystem::temp_directory_path() / "sua_net_test";
  std::filesystem::create_directories(dir);
  for (bool dueling : {false, true}) {
    Network net = dueling ? Network::dueling(7, {9, 5}, 4, 0.25, rng)
                          : Network::mlp(7, {9}, 4, Activation::Softmax, 0.5, rng);
    const auto path = dir / (dueling ? "d.bin" : "m.bin");
    net.save(path);
    const Network back = Network::load(path);
    CHECK(back.flat_params() == net.flat_params());
    CHECK(back.is_dueling() == dueling);
    CHECK(back.output_activation() == net.output_activation());
    CHECK(back.same_architecture(net));
    const Vector x = random_vector(7, rng);
    CHECK(back.forward(x, nn::Mode::Deterministic) == net.forward(x, nn::Mode::Deterministic));

    // Header: 7-byte magic, layer count, then (in, out, code, dropout) per block.
    std::ifstream is(path, std::ios::binary);
    char magic[7];
    is.read(magic, 7);
    CHECK(std::string(magic, 7) == "ADVNET1");
    std::uint32_t count = 0;
    is.read(reinterpret_cast<char*>(&count), 4);
    CHECK(count == (dueling ? 4u : 2u));
  }

  const auto bad = dir / "bad.bin";
  std::ofstream(bad, std::ios::binary) << "NOTANET";
  CHECK_THROWS_AS(Network::load(bad), StructuralError);
}

TEST_CASE("structural and input errors") {
  Rng rng(1);
  Network net = Network::mlp(3, {4}, 2, Activation::Linear, 0.0, rng);
  CHECK_THROWS_AS(net.forward(Vector::Zero(2), nn::Mode::Deterministic), StructuralError);
  Vector nan_input = Vector::Zero(3);
  nan_input(1) = std::nan("");
  CHECK_THROWS_AS(net.forward(nan_input, nn::Mode::Deterministic), InputError);
  CHECK_THROWS_AS(Network({layer(Matrix::Zero(2, 3), Vector::Zero(2), Activation::Relu),
                           layer(Matrix::Zero(1, 3), Vector::Zero(1), Activation::Linear)}),
                  StructuralError);
  nn::Minibatch ce{Matrix::Zero(3, 1), Matrix::Zero(2, 1)};
  CHECK_THROWS_AS(net.loss(ce, nn::Loss::CrossEntropy), StructuralError);
}

TEST_CASE("non-finite loss raises divergence with the offending sample") {
  Rng rng(1);
  Network net = Network::mlp(2, {3}, 1, Activation::Linear, 0.0, rng);
  nn::Minibatch b{Matrix::Zero(2, 3), Matrix::Zero(1, 3)};
  b.targets(0, 2) = 1e300;
  try {
    net.train_step(b, nn::Loss::Mse, 1e-3, rng);
    FAIL("expected divergence");
  } catch (const TrainingDivergence& e) {
    CHECK(e.batch_index == 2);
  }
}

TEST_CASE("training is deterministic for a fixed seed") {
  auto run = [] {
    Rng init(31), rng(32);
    Network net = Network::dueling(4, {8}, 3, 0.2, init);
    const auto batch = random_batch(net, 16, init, false);
    for (int i = 0; i < 50; ++i) net.train_step(batch, nn::Loss::Mse, 1e-3, rng);
    return net.flat_params();
  };
  CHECK(run() == run());
}

}  // TEST_SUITE
