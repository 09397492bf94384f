#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "nde/ops.hpp"
#include "nde/optim.hpp"
#include "nde/params.hpp"
#include "oracles.hpp"

using namespace nde;

namespace {

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

}  // namespace

TEST(Fc, IdentityAndHandArithmetic) {
  Tape t;
  Var out = fc(t.constant(Matrix::Identity(2, 2)), t.constant(Matrix::Identity(2, 2)), t.constant(Matrix::Zero(1, 2)));
  EXPECT_EQ(out.value(), Matrix::Identity(2, 2));
  Var y = fc(t.constant(mat({{1, 2}})), t.constant(mat({{1}, {1}})), t.constant(mat({{3}})));
  EXPECT_EQ(y.value()(0, 0), 6.0);
}

TEST(Fc, MatchesNaiveMatmul) {
  std::mt19937_64 rng(1);
  const Matrix x = oracle::random_matrix(4, 3, rng);
  const Matrix w = oracle::random_matrix(3, 5, rng);
  const Matrix b = oracle::random_matrix(1, 5, rng);
  Tape t;
  Var out = fc(t.constant(x), t.constant(w), t.constant(b));
  Matrix expected = oracle::naive_matmul(x, w);
  for (Eigen::Index i = 0; i < expected.rows(); ++i) expected.row(i) += b.row(0);
  EXPECT_LT((out.value() - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Fc, ShapeMismatchNamesBothShapes) {
  Tape t;
  try {
    fc(t.constant(Matrix::Zero(2, 3)), t.constant(Matrix::Zero(4, 5)), t.constant(Matrix::Zero(1, 5)));
    FAIL();
  } catch (const InvalidArgument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos);
    EXPECT_NE(msg.find("4x5"), std::string::npos);
  }
}

TEST(Relu, ForwardAndSubgradient) {
  Tape t;
  EXPECT_EQ(relu(t.constant(mat({{-1, 0, 2}}))).value(), mat({{0, 0, 2}}));
  EXPECT_EQ(relu(t.constant(mat({{-3, -0.5}}))).value(), mat({{0, 0}}));

  Tape g;
  Var x = g.constant(mat({{-1, 2, 0}}));
  Var y = relu(x);
  g.backward_from(y, mat({{1, 1, 1}}));
  EXPECT_EQ(g.grad(x), mat({{0, 1, 0}}));
}

TEST(Backward, LinearCase) {
  ParameterStore p;
  p.add("w", Tensor({3, 2}, 0.5));
  p.add("b", Tensor({2}));
  const Matrix x = mat({{1, 2, 3}, {4, 5, 6}});
  Tape t;
  Var loss = sum(fc(t.constant(x), t.param(p, "w"), t.param(p, "b")));
  t.backward(loss, p);
  const Matrix expected = x.transpose() * Matrix::Ones(2, 2);
  EXPECT_EQ(Matrix(p.grad("w").matrix()), expected);
  EXPECT_EQ(Matrix(p.grad("b").matrix()), mat({{2, 2}}));
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  ParameterStore p;
  p.add("w", Tensor({2, 2}, 1.0));
  Tape t;
  Var y = scale(sum(matmul(t.constant(Matrix::Ones(1, 2)), t.param(p, "w"))), 0.0);
  t.backward(y, p);
  for (double v : p.grad("w").values()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, RejectsNonScalarAndNonFinalLoss) {
  ParameterStore p;
  Tape t;
  Var a = t.constant(Matrix::Ones(2, 2));
  EXPECT_THROW(t.backward(a, p), InvalidArgument);
  Var s = sum(a);
  t.constant(Matrix::Ones(1, 1));
  EXPECT_THROW(t.backward(s, p), InvalidArgument);
}

TEST(Backward, NonFiniteValuesAreCaughtAtTheOperation) {
  Tape t;
  Matrix big(1, 1);
  big(0, 0) = 1e308;
  EXPECT_THROW(scale(t.constant(big), 10.0), NumericalError);
  EXPECT_THROW(t.constant(Matrix::Constant(1, 1, std::nan(""))), NumericalError);
}

namespace {

// Two-layer perceptron with every op the model uses, for finite-difference checks.
double mlp_loss(Tape& t, ParameterStore& p, const Matrix& x, const Matrix& target) {
  Var h = relu(fc(t.constant(x), t.param(p, "w1"), t.param(p, "b1")));
  Var k = scale_by(t.param(p, "k"), h);
  Var z = sub(hadamard(h, h), k);
  Var y = fc(lincomb({{0.7, z}, {-0.3, h}}), t.param(p, "w2"), t.param(p, "b2"));
  return mse(softplus(y), target).value()(0, 0);
}

}  // namespace

TEST(Backward, MatchesCentralDifferences) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    ParameterStore p;
    p.add("w1", Tensor::from_matrix(oracle::random_matrix(3, 6, rng)));
    p.add("b1", Tensor::from_matrix(oracle::random_matrix(1, 6, rng)));
    p.add("k", Tensor::scalar(0.4));
    p.add("w2", Tensor::from_matrix(oracle::random_matrix(6, 2, rng)));
    p.add("b2", Tensor::from_matrix(oracle::random_matrix(1, 2, rng)));
    const Matrix x = oracle::random_matrix(5, 3, rng);
    const Matrix target = oracle::random_matrix(5, 2, rng);

    {
      Tape t;
      Var h = relu(fc(t.constant(x), t.param(p, "w1"), t.param(p, "b1")));
      Var k = scale_by(t.param(p, "k"), h);
      Var z = sub(hadamard(h, h), k);
      Var y = fc(lincomb({{0.7, z}, {-0.3, h}}), t.param(p, "w2"), t.param(p, "b2"));
      t.backward(mse(softplus(y), target), p);
    }
    const auto analytic = p.flat_grads();
    const auto numeric = oracle::central_differences(
        [&](const std::vector<double>& flat) {
          ParameterStore q = p;
          q.assign_flat(flat);
          Tape t;
          return mlp_loss(t, q, x, target);
        },
        p.flat_values());
    EXPECT_LT(oracle::relative_error(analytic, numeric), 1e-4) << "trial " << trial;
  }
}

TEST(Backward, ReplayIsBitwiseDeterministic) {
  std::mt19937_64 rng(2);
  ParameterStore p;
  p.add("w", Tensor::from_matrix(oracle::random_matrix(4, 4, rng)));
  const Matrix x = oracle::random_matrix(8, 4, rng);
  auto run = [&] {
    Tape t;
    t.backward(mse(relu(matmul(t.constant(x), t.param(p, "w"))), Matrix::Ones(8, 4)), p);
    return p.flat_grads();
  };
  EXPECT_EQ(run(), run());
}

TEST(AdamW, FirstStepHasUnitScale) {
  ParameterStore p;
  p.add("x", Tensor::scalar(1.0));
  p.at(0).grad[0] = 1.0;
  AdamW opt({.learning_rate = 0.1, .weight_decay = 0.0});
  opt.step(p);
  // m_hat = v_hat = 1 after bias correction: update = lr * 1 / (1 + eps).
  EXPECT_NEAR(p.value("x")[0], 1.0 - 0.1 / (1.0 + 1e-8), 1e-15);
}

TEST(AdamW, ZeroGradientNoDecayIsNoOp) {
  ParameterStore p;
  p.add("x", Tensor({3}, 2.5));
  AdamW opt({.learning_rate = 0.1, .weight_decay = 0.0});
  opt.step(p);
  for (double v : p.value("x").values()) EXPECT_EQ(v, 2.5);
}

TEST(AdamW, DecoupledDecay) {
  ParameterStore p;
  p.add("x", Tensor::scalar(3.0));
  AdamW opt({.learning_rate = 0.01, .weight_decay = 0.1});
  opt.step(p);
  EXPECT_DOUBLE_EQ(p.value("x")[0], 3.0 * (1.0 - 0.001));
}

TEST(AdamW, NonFiniteGradientAbortsWithName) {
  ParameterStore p;
  p.add("a", Tensor::scalar(1.0));
  p.add("bad", Tensor::scalar(1.0));
  p.at(0).grad[0] = 1.0;
  p.at(1).grad[0] = std::numeric_limits<double>::infinity();
  AdamW opt;
  try {
    opt.step(p);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("bad"), std::string::npos);
  }
  EXPECT_EQ(p.value("a")[0], 1.0);
}

TEST(AdamW, FrozenEntriesUntouched) {
  ParameterStore p;
  p.add("a", Tensor::scalar(1.0));
  p.add("b", Tensor::scalar(1.0));
  p.at(0).grad[0] = 1.0;
  p.at(1).grad[0] = 1.0;
  AdamW opt;
  opt.step(p, {"b"});
  EXPECT_NE(p.value("a")[0], 1.0);
  EXPECT_EQ(p.value("b")[0], 1.0);
}

TEST(ParameterStore, DuplicateNamesAndCounts) {
  ParameterStore p;
  p.add("w", Tensor({2, 3}));
  EXPECT_THROW(p.add("w", Tensor({1})), InvalidArgument);
  p.add("k", Tensor::scalar(1.0));
  EXPECT_EQ(p.parameter_count(), 7u);
  EXPECT_EQ(p.grad("w").shape(), p.value("w").shape());
}

TEST(FanUniform, BoundAndSeed) {
  std::mt19937_64 a(4), b(4);
  const Tensor x = fan_uniform(20, 30, a);
  const Tensor y = fan_uniform(20, 30, b);
  EXPECT_EQ(x, y);
  const double bound = std::sqrt(6.0 / 50.0);
  for (double v : x.values()) EXPECT_LE(std::abs(v), bound);
}

TEST(Checkpoint, RoundTripAndLayout) {
  std::mt19937_64 rng(8);
  ParameterStore p;
  p.add("encoder.weight", fan_uniform(1, 4, rng));
  p.add("encoder.bias", Tensor({4}, 0.25));
  p.add("heat.k", Tensor::scalar(0.7));
  const auto dir = std::filesystem::temp_directory_path() / "nde_ckpt_test";
  std::filesystem::remove_all(dir);
  save_checkpoint(p, dir / "model");
  const auto q = load_checkpoint(dir / "model");
  ASSERT_EQ(q.size(), 3u);
  EXPECT_EQ(q.flat_values(), p.flat_values());
  EXPECT_EQ(q.value("heat.k").shape(), Shape{});
  EXPECT_EQ(std::filesystem::file_size(dir / "model.bin"), 9u * 8u);

  const auto manifest = io::read_json(dir / "model.json");
  std::vector<std::string> names;
  for (const auto& [k, v] : manifest.at("parameters").items()) names.push_back(k);
  EXPECT_EQ(names, (std::vector<std::string>{"encoder.weight", "encoder.bias", "heat.k"}));
  // Little-endian float64: 0.7 is the last value.
  const auto bytes = io::read_file(dir / "model.bin");
  double last;
  std::memcpy(&last, bytes.data() + 8 * 8, 8);
  EXPECT_EQ(last, 0.7);
  EXPECT_THROW(load_checkpoint(dir / "missing"), InvalidArgument);
}
