#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>

#include "sisr/nn.hpp"

using namespace sisr;

namespace {

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

// Central differences on `count` random scalar coordinates of the store.
void check_param_gradients(ParamStore& store, const std::function<double()>& loss, const std::function<void()>& grads,
                           int count, std::uint64_t seed, double tol = 1e-4) {
  store.zero_grad();
  grads();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_param(0, store.size() - 1);
  int checked = 0;
  while (checked < count) {
    Param& p = store.params()[pick_param(rng)];
    std::uniform_int_distribution<Eigen::Index> pick(0, p.value.size() - 1);
    const Eigen::Index i = pick(rng);
    const double analytic = p.grad.data()[i];
    const double x = p.value.data()[i];
    const double h = 1e-5;
    p.value.data()[i] = x + h;
    const double fp = loss();
    p.value.data()[i] = x - h;
    const double fm = loss();
    p.value.data()[i] = x;
    const double fd = (fp - fm) / (2 * h);
    if (std::abs(fd) < 1e-7 && std::abs(analytic) < 1e-7) continue;
    EXPECT_LT(rel_err(analytic, fd), tol) << p.name << "[" << i << "] analytic " << analytic << " fd " << fd;
    ++checked;
  }
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

}  // namespace

TEST(Gelu, Limits) {
  EXPECT_EQ(gelu(0.0), 0.0);
  EXPECT_NEAR(gelu(10.0), 10.0, 1e-6);
  EXPECT_NEAR(gelu(-10.0), 0.0, 1e-6);
  for (double x : {-2.0, -0.3, 0.0, 0.7, 2.5}) {
    EXPECT_NEAR(gelu_prime(x), (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6, 1e-8);
    EXPECT_NEAR(gelu_second(x), (gelu_prime(x + 1e-6) - gelu_prime(x - 1e-6)) / 2e-6, 1e-8);
  }
}

TEST(Matmul, ColumnsIndependentOfBatch) {
  std::mt19937_64 rng(1);
  Matrix a = random_matrix(37, 23, rng), b = random_matrix(23, 19, rng), full, part;
  deterministic_matmul(a, b, full);
  for (Eigen::Index j = 0; j < b.cols(); ++j) {
    deterministic_matmul(a, b.col(j), part);
    for (Eigen::Index i = 0; i < a.rows(); ++i) EXPECT_EQ(part(i, 0), full(i, j));
  }
  EXPECT_LT((full - a * b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Mlp, ZeroParametersGiveZeroOutput) {
  ParamStore store;
  std::mt19937_64 rng(2);
  Mlp mlp(store, "m", {3, 16, 2, 2}, rng);
  for (auto& p : store.params()) p.value.setZero();
  Tape tape;
  Var y = mlp.forward(tape, tape.input(Matrix::Ones(3, 4)));
  EXPECT_EQ(tape.value(y).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Mlp, ParameterGradientsMatchFiniteDifferences) {
  ParamStore store;
  std::mt19937_64 rng(3);
  Mlp mlp(store, "m", {3, 12, 3, 2}, rng);
  for (auto& p : store.params()) {
    if (p.value.cols() == 1) p.value = random_matrix(p.value.rows(), 1, rng) * 0.1;
  }
  const Matrix x = random_matrix(3, 5, rng);
  auto loss = [&] {
    Tape t(false);
    Var y = mlp.forward(t, t.input(x));
    return t.value(t.sum_all(t.cmul(y, y)))(0, 0);
  };
  auto grads = [&] {
    Tape t;
    Var y = mlp.forward(t, t.input(x));
    t.backward(t.sum_all(t.cmul(y, y)));
  };
  check_param_gradients(store, loss, grads, 20, 4);
}

TEST(Mlp, InputGradientMatchesFiniteDifferences) {
  ParamStore store;
  std::mt19937_64 rng(5);
  Mlp mlp(store, "m", {2, 10, 3, 1}, rng);
  Matrix x = random_matrix(2, 4, rng);
  Tape tape;
  auto out = mlp.forward_with_input_grad(tape, tape.input(x));
  const Matrix g = tape.value(out.dy_dx);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (Eigen::Index i = 0; i < 2; ++i) {
      Matrix xp = x, xm = x;
      xp(i, j) += 1e-5;
      xm(i, j) -= 1e-5;
      Tape t(false);
      const double fp = t.value(mlp.forward(t, t.input(xp)))(0, j);
      const double fm = t.value(mlp.forward(t, t.input(xm)))(0, j);
      EXPECT_LT(rel_err(g(i, j), (fp - fm) / 2e-5), 1e-6);
    }
  }
  EXPECT_EQ(tape.value(out.y), [&] {
    Tape t(false);
    return Matrix(t.value(mlp.forward(t, t.input(x))));
  }());
}

TEST(Mlp, LossOnInputGradientBackpropagatesToParameters) {
  ParamStore store;
  std::mt19937_64 rng(6);
  Mlp mlp(store, "m", {2, 8, 3, 1}, rng);
  const Matrix x = random_matrix(2, 6, rng);
  const Matrix target = random_matrix(2, 6, rng);
  auto build = [&](Tape& t) {
    auto out = mlp.forward_with_input_grad(t, t.input(x));
    return t.mean_square(t.sub(out.dy_dx, t.input(target)));
  };
  auto loss = [&] {
    Tape t(false);
    return t.value(build(t))(0, 0);
  };
  auto grads = [&] {
    Tape t;
    t.backward(build(t));
  };
  check_param_gradients(store, loss, grads, 20, 7);
}

TEST(Tape, ElementwiseOpsMatchFiniteDifferences) {
  ParamStore store;
  std::mt19937_64 rng(8);
  Param& a = store.add("a", 3, 4);
  Param& b = store.add("b", 3, 4);
  Param& c = store.add("c", 3, 1);
  a.value = random_matrix(3, 4, rng);
  b.value = random_matrix(3, 4, rng).cwiseAbs().array() + 0.5;
  c.value = random_matrix(3, 1, rng);
  const Matrix w = random_matrix(1, 4, rng);
  auto build = [&](Tape& t) {
    Var va = t.param(a), vb = t.param(b), vc = t.param(c);
    Var s = t.add(t.cdiv(t.tanh(va), t.sqrt(vb)), t.cmul(t.sigmoid(va), t.abs(vb)));
    s = t.add_bias(t.sub(s, t.scale(t.gelu_prime(va), 0.3)), vc);
    std::vector<Var> parts{t.rows(s, 0, 2), t.broadcast_cols(vc, 4)};
    Var cat = t.concat_rows(parts);
    return t.add(t.dot_const(t.sum_rows(cat), w), t.mean_square(t.gelu(cat)));
  };
  auto loss = [&] {
    Tape t(false);
    return t.value(build(t))(0, 0);
  };
  auto grads = [&] {
    Tape t;
    t.backward(build(t));
  };
  check_param_gradients(store, loss, grads, 30, 9);
}

TEST(Tape, MaskedLogProbAndEntropy) {
  ParamStore store;
  std::mt19937_64 rng(10);
  Param& l = store.add("l", 5, 3);
  l.value = random_matrix(5, 3, rng);
  Mask mask(5, 3);
  mask << 1, 0, 1,  //
      1, 1, 0,      //
      0, 1, 1,      //
      1, 0, 0,      //
      1, 1, 0;
  std::vector<int> chosen{3, 4, -1};
  const Matrix w = (Matrix(2, 3) << 0.7, -1.2, 5.0, 0.3, 0.9, 2.0).finished();
  auto build = [&](Tape& t) { return t.dot_const(t.masked_logprob_entropy(t.param(l), mask, chosen), w); };
  auto loss = [&] {
    Tape t(false);
    return t.value(build(t))(0, 0);
  };
  auto grads = [&] {
    Tape t;
    t.backward(build(t));
  };
  check_param_gradients(store, loss, grads, 8, 11);
  // Uniform logits over k allowed entries: log p = -log k, entropy = log k.
  Tape t(false);
  Var out = t.masked_logprob_entropy(t.input(Matrix::Zero(5, 3)), mask, std::vector<int>{0, 1, 0});
  EXPECT_NEAR(t.value(out)(0, 0), -std::log(4.0), 1e-15);
  EXPECT_NEAR(t.value(out)(1, 1), std::log(3.0), 1e-15);
  EXPECT_THROW(t.masked_logprob_entropy(t.input(Matrix::Zero(5, 3)), mask, std::vector<int>{2, 1, 0}), Error);
}

TEST(Lstm, ZeroParametersGiveUniformSoftmax) {
  ParamStore store;
  std::mt19937_64 rng(12);
  Lstm lstm(store, "p", {2, 8, 6, 3}, rng);
  for (auto& p : store.params()) p.value.setZero();
  Tape t(false);
  auto st = lstm.initial_state(t, 2);
  std::vector<int> a{1, 0}, b{4, -1};
  Var logits = lstm.step(t, a, b, st);
  EXPECT_EQ(t.value(logits).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Lstm, BackpropThroughTimeMatchesFiniteDifferences) {
  ParamStore store;
  std::mt19937_64 rng(13);
  Lstm lstm(store, "p", {2, 6, 8, 4}, rng);
  for (auto& p : store.params()) {
    if (p.value.cols() == 1) p.value = random_matrix(p.value.rows(), 1, rng) * 0.3;
  }
  const std::vector<std::vector<int>> as{{0, 2}, {1, 3}, {3, 0}, {2, 2}, {0, 1}};
  const std::vector<std::vector<int>> bs{{-1, 5}, {4, -1}, {6, 7}, {5, 4}, {7, -1}};
  const Matrix w = random_matrix(4, 2, rng);
  auto build = [&](Tape& t) {
    auto st = lstm.initial_state(t, 2);
    Var total{};
    for (std::size_t s = 0; s < as.size(); ++s) {
      Var term = t.dot_const(lstm.step(t, as[s], bs[s], st), w);
      total = s == 0 ? term : t.add(total, term);
    }
    return total;
  };
  auto loss = [&] {
    Tape t(false);
    return t.value(build(t))(0, 0);
  };
  auto grads = [&] {
    Tape t;
    t.backward(build(t));
  };
  check_param_gradients(store, loss, grads, 30, 14);
}

TEST(Lstm, DeterministicAndBatchInvariant) {
  ParamStore store;
  std::mt19937_64 rng(15);
  Lstm lstm(store, "p", {2, 16, 10, 5}, rng);
  auto run = [&](const std::vector<int>& a, const std::vector<int>& b) {
    Tape t(false);
    auto st = lstm.initial_state(t, static_cast<Eigen::Index>(a.size()));
    lstm.step(t, a, b, st);
    return Matrix(t.value(lstm.step(t, a, b, st)));
  };
  const Matrix wide = run({0, 3, 4, 1, 2, 0, 1, 2, 3, 4, 0}, {5, -1, 9, 6, 7, 8, 5, -1, 6, 7, 9});
  EXPECT_EQ(wide, run({0, 3, 4, 1, 2, 0, 1, 2, 3, 4, 0}, {5, -1, 9, 6, 7, 8, 5, -1, 6, 7, 9}));
  const Matrix single = run({4}, {9});
  for (Eigen::Index i = 0; i < wide.rows(); ++i) EXPECT_EQ(single(i, 0), wide(i, 2));
}

TEST(Adam, FirstStepAndZeroGradient) {
  ParamStore store;
  Param& p = store.add("x", 1, 1);
  p.grad(0, 0) = 0.5;
  Adam adam({0.0005});
  adam.step(store);
  EXPECT_NEAR(p.value(0, 0), -0.0005, 1e-10);
  EXPECT_EQ(adam.steps(), 1);
  ParamStore still;
  Param& q = still.add("y", 2, 1);
  q.value << 1.0, -2.0;
  Adam a2;
  a2.step(still);
  EXPECT_EQ(q.value(0, 0), 1.0);
  EXPECT_EQ(q.value(1, 0), -2.0);
}

TEST(Adam, MovesAgainstGradientMonotonically) {
  ParamStore store;
  Param& p = store.add("x", 1, 1);
  Adam adam;
  std::vector<double> trace{p.value(0, 0)};
  for (int i = 0; i < 2; ++i) {
    p.grad(0, 0) = -3.0;
    adam.step(store);
    trace.push_back(p.value(0, 0));
  }
  EXPECT_GT(trace[1], trace[0]);
  EXPECT_GT(trace[2], trace[1]);
}

TEST(RmsProp, FirstStep) {
  std::vector<double> x{0.0};
  std::vector<double> g{2.0};
  RmsProp opt({0.5});
  opt.step(x, g);
  EXPECT_NEAR(x[0], -1.5811, 1e-4);
  std::vector<double> y{3.0}, zero{0.0};
  RmsProp opt2;
  opt2.step(y, zero);
  EXPECT_EQ(y[0], 3.0);
}

TEST(RmsProp, UpdateScaleInvariantAfterWarmup) {
  auto last_update = [](double g) {
    std::vector<double> x{0.0};
    std::vector<double> grad{g};
    RmsProp opt({0.01});
    double prev = 0.0;
    for (int i = 0; i < 50; ++i) {
      prev = x[0];
      opt.step(x, grad);
    }
    return x[0] - prev;
  };
  const double a = last_update(0.3), b = last_update(30.0);
  EXPECT_LT(std::abs(a - b) / std::abs(a), 0.05);
}

TEST(RmsProp, StoreFormMatchesVectorForm) {
  ParamStore store;
  Param& p = store.add("x", 2, 1);
  Param& q = store.add("y", 1, 1);
  RmsProp a, b;
  std::vector<double> x{0.0, 0.0}, y{0.0};
  for (int i = 0; i < 3; ++i) {
    p.grad << 0.2 * i + 0.1, -1.0;
    q.grad << 4.0;
    a.step(store);
    std::vector<double> gx{0.2 * i + 0.1, -1.0};
    b.step(x, gx);
  }
  EXPECT_EQ(p.value(0, 0), x[0]);
  EXPECT_EQ(p.value(1, 0), x[1]);
  EXPECT_TRUE(std::isfinite(q.value(0, 0)));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  ParamStore store;
  std::mt19937_64 rng(16);
  Lstm lstm(store, "p", {2, 5, 4, 3}, rng);
  for (auto& p : store.params()) p.value = random_matrix(p.value.rows(), p.value.cols(), rng);
  const auto path = std::filesystem::temp_directory_path() / "sisr_ckpt.bin";
  save_params(store, path);
  ParamStore other;
  std::mt19937_64 rng2(99);
  Lstm copy(other, "p", {2, 5, 4, 3}, rng2);
  load_params(other, path);
  for (std::size_t k = 0; k < store.size(); ++k) EXPECT_EQ(store.params()[k].value, other.params()[k].value);
  ParamStore wrong;
  wrong.add("p.wo", 3, 5);
  EXPECT_THROW(load_params(wrong, path), FormatError);
  std::filesystem::remove(path);
}
