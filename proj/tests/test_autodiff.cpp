#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "support/oracles.hpp"
#include "voxsplat/autodiff/adam.hpp"
#include "voxsplat/autodiff/checkpoint.hpp"
#include "voxsplat/autodiff/ops.hpp"

using namespace voxsplat;
using namespace voxsplat::ad;
using oracle::fd_check;
using oracle::random_tensor;

namespace {

constexpr double kPrimitiveTol = 1e-6;

// Weighted sum with fixed random weights turns any tensor into a scalar loss
// with a generic upstream gradient.
Tensor weighted_sum(Tape& t, const Tensor& x, std::uint64_t seed = 99) {
  Rng rng(seed);
  std::vector<double> w(x.numel());
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  return sum(t, mul(t, x, Tensor::from(x.shape(), w)));
}

void expect_fd(const oracle::LossFn& f, const Tensor& x, double tol = kPrimitiveTol) {
  const auto r = fd_check(f, x);
  EXPECT_LT(r.max_rel, tol) << "abs " << r.max_abs << " scale " << r.grad_scale;
}

}  // namespace

TEST(Primitives, ElementwiseGradients) {
  Rng rng(1);
  auto a = random_tensor(rng, {3, 4}, -1.0, 1.0);
  auto b = random_tensor(rng, {3, 4}, 0.5, 1.5);
  auto row = random_tensor(rng, {4}, -1.0, 1.0);
  expect_fd([&](Tape& t) { return weighted_sum(t, add(t, a, b)); }, a);
  expect_fd([&](Tape& t) { return weighted_sum(t, sub(t, a, b)); }, b);
  expect_fd([&](Tape& t) { return weighted_sum(t, mul(t, a, b)); }, a);
  expect_fd([&](Tape& t) { return weighted_sum(t, div(t, a, b)); }, b);
  expect_fd([&](Tape& t) { return weighted_sum(t, add(t, a, row)); }, row);
  expect_fd([&](Tape& t) { return weighted_sum(t, mul(t, a, row)); }, row);
  expect_fd([&](Tape& t) { return weighted_sum(t, leaky_relu(t, a, 0.2)); }, a);
  expect_fd([&](Tape& t) { return weighted_sum(t, sigmoid(t, a)); }, a);
  expect_fd([&](Tape& t) { return weighted_sum(t, exp(t, a)); }, a);
  expect_fd([&](Tape& t) { return weighted_sum(t, log(t, b)); }, b);
  expect_fd([&](Tape& t) { return weighted_sum(t, abs(t, a)); }, a);
  expect_fd([&](Tape& t) { return weighted_sum(t, max_with_scalar(t, a, 0.1)); }, a);
  expect_fd([&](Tape& t) { return weighted_sum(t, square(t, a)); }, a);
  expect_fd([&](Tape& t) { return weighted_sum(t, scale(t, a, -2.5)); }, a);
  expect_fd([&](Tape& t) { return weighted_sum(t, add_scalar(t, a, 3.0)); }, a);
  expect_fd([&](Tape& t) { return mean(t, mul(t, a, a)); }, a);
}

TEST(Primitives, StructuralGradients) {
  Rng rng(2);
  auto a = random_tensor(rng, {2, 3, 4}, -1.0, 1.0);
  auto b = random_tensor(rng, {2, 2, 4}, -1.0, 1.0);
  expect_fd([&](Tape& t) { return weighted_sum(t, reshape(t, a, {6, 4})); }, a);
  expect_fd([&](Tape& t) { return weighted_sum(t, permute(t, a, {2, 0, 1})); }, a);
  expect_fd([&](Tape& t) { return weighted_sum(t, slice(t, a, 1, 1, 3)); }, a);
  expect_fd([&](Tape& t) { return weighted_sum(t, concat(t, {a, b}, 1)); }, b);
  expect_fd([&](Tape& t) { return weighted_sum(t, concat(t, {a, b}, 1)); }, a);
  expect_fd([&](Tape& t) { return weighted_sum(t, row_mean(t, reshape(t, a, {6, 4}), {{0, 2}, {}, {5, 1, 3}})); }, a);
}

TEST(Primitives, MatmulAndConvGradients) {
  Rng rng(3);
  auto a = random_tensor(rng, {4, 5}, -1.0, 1.0);
  auto b = random_tensor(rng, {5, 3}, -1.0, 1.0);
  expect_fd([&](Tape& t) { return weighted_sum(t, matmul(t, a, b)); }, a);
  expect_fd([&](Tape& t) { return weighted_sum(t, matmul(t, a, b)); }, b);
  auto x = random_tensor(rng, {2, 3, 7, 6}, -1.0, 1.0);
  auto w = random_tensor(rng, {4, 3, 4, 4}, -0.5, 0.5);
  auto bias = random_tensor(rng, {4}, -0.5, 0.5);
  for (std::size_t stride : {1u, 2u}) {
    expect_fd([&](Tape& t) { return weighted_sum(t, conv2d(t, x, w, bias, stride, 1)); }, x);
    expect_fd([&](Tape& t) { return weighted_sum(t, conv2d(t, x, w, bias, stride, 1)); }, w);
    expect_fd([&](Tape& t) { return weighted_sum(t, conv2d(t, x, w, bias, stride, 1)); }, bias);
  }
}

TEST(Primitives, BilinearSampleGradientAndValues) {
  Rng rng(4);
  auto grid = random_tensor(rng, {4, 5, 3}, -1.0, 1.0);
  const std::vector<SamplePoint> pts{{0.3, 1.7}, {3.9, 2.2}, {-1.0, 5.0}, {2.5, 0.5}};
  expect_fd([&](Tape& t) { return weighted_sum(t, bilinear_sample(t, grid, pts)); }, grid);

  Tape t;
  const auto at_int = bilinear_sample(t, grid, {{2.0, 1.0}});
  const auto mid = bilinear_sample(t, grid, {{2.5, 1.0}});
  for (std::size_t d = 0; d < 3; ++d) {
    const double g21 = grid.data()[(1 * 5 + 2) * 3 + d];
    const double g31 = grid.data()[(1 * 5 + 3) * 3 + d];
    EXPECT_EQ(at_int.data()[d], g21);
    EXPECT_DOUBLE_EQ(mid.data()[d], 0.5 * (g21 + g31));
  }
}

TEST(Primitives, SigmoidValuesAndClamp) {
  Tape t;
  auto x = Tensor::from({3}, {0.0, 100.0, -100.0}, true);
  const auto y = sigmoid(t, x);
  EXPECT_EQ(y.data()[0], 0.5);
  EXPECT_EQ(y.data()[1], 1.0 / (1.0 + std::exp(-40.0)));
  EXPECT_EQ(y.data()[2], 1.0 / (1.0 + std::exp(40.0)));
  t.backward(sum(t, y));
  EXPECT_EQ(x.grad()[1], 0.0);
}

TEST(Primitives, ShapeErrorsNameBothShapes) {
  Tape t;
  const auto a = Tensor::zeros({2, 3}, true);
  const auto b = Tensor::zeros({4, 5}, true);
  try {
    matmul(t, a, b);
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2, 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("4, 5"), std::string::npos) << msg;
  }
  EXPECT_THROW(add(t, a, b), ShapeError);
  EXPECT_THROW(conv2d(t, Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 3, 2, 2}), Tensor{}, 1, 0), ShapeError);
}

TEST(Backward, SumOfSquares) {
  Tape t;
  auto x = Tensor::from({3}, {1, 2, 3}, true);
  t.backward(sum(t, mul(t, x, x)));
  EXPECT_EQ(x.grad_values(), (std::vector<double>{2, 4, 6}));
}

TEST(Backward, IndependentLeafGetsZero) {
  Tape t;
  auto x = Tensor::from({2}, {1, 2}, true);
  auto y = Tensor::from({2}, {3, 4}, true);
  const auto unrelated = exp(t, y);
  (void)unrelated;
  t.backward(sum(t, x));
  EXPECT_EQ(y.grad_values(), (std::vector<double>{0, 0}));
}

TEST(Backward, FanOutAccumulates) {
  Tape t;
  auto x = Tensor::from({1}, {3.0}, true);
  t.backward(sum(t, add(t, mul(t, x, x), scale(t, x, 2.0))));
  EXPECT_EQ(x.grad()[0], 8.0);
}

TEST(Backward, NonScalarRootIsRejected) {
  Tape t;
  auto x = Tensor::from({2}, {1, 2}, true);
  EXPECT_THROW(t.backward(exp(t, x)), InvalidArgument);
}

TEST(Backward, ComposedGraphs) {
  Rng rng(7);
  auto w1 = random_tensor(rng, {6, 8}, -0.5, 0.5);
  auto w2 = random_tensor(rng, {8, 4}, -0.5, 0.5);
  auto x = random_tensor(rng, {5, 6}, -1.0, 1.0, false);
  auto img = random_tensor(rng, {1, 2, 8, 8}, 0.1, 0.9);
  auto k = random_tensor(rng, {3, 2, 3, 3}, -0.5, 0.5);
  // MLP: matmul -> leaky -> matmul -> sigmoid -> log -> mean
  const oracle::LossFn mlp = [&](Tape& t) {
    return mean(t, log(t, sigmoid(t, matmul(t, leaky_relu(t, matmul(t, x, w1), 0.2), w2))));
  };
  expect_fd(mlp, w1);
  expect_fd(mlp, w2);
  // conv -> exp -> div -> permute -> slice -> abs -> sum
  const oracle::LossFn conv = [&](Tape& t) {
    const auto c = conv2d(t, img, k, Tensor{}, 2, 1);
    const auto e = div(t, exp(t, scale(t, c, 0.5)), add_scalar(t, square(t, c), 1.0));
    return sum(t, abs(t, slice(t, permute(t, e, {0, 2, 3, 1}), 3, 0, 2)));
  };
  expect_fd(conv, img);
  expect_fd(conv, k);
  // sampling -> concat -> row_mean -> mul with itself -> max_with_scalar -> mean
  auto grid = random_tensor(rng, {5, 5, 2}, -1.0, 1.0);
  const oracle::LossFn sample = [&](Tape& t) {
    const auto s = bilinear_sample(t, grid, {{0.5, 0.5}, {1.25, 3.5}, {3.0, 2.75}});
    const auto c = concat(t, {s, scale(t, s, -1.5)}, 1);
    const auto r = row_mean(t, c, {{0, 1}, {1, 2}, {2}});
    return mean(t, max_with_scalar(t, mul(t, r, add_scalar(t, r, 0.3)), -0.05));
  };
  expect_fd(sample, grid);
}

TEST(Backward, Linearity) {
  Rng rng(8);
  auto x = random_tensor(rng, {4}, -1.0, 1.0);
  const auto f = [&](Tape& t) { return sum(t, exp(t, x)); };
  const auto g = [&](Tape& t) { return sum(t, mul(t, x, x)); };
  const auto gf = oracle::analytic_grad(f, x);
  const auto gg = oracle::analytic_grad(g, x);
  const auto gc = oracle::analytic_grad([&](Tape& t) { return add(t, scale(t, f(t), 2.0), scale(t, g(t), -3.0)); }, x);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(gc[i], 2.0 * gf[i] - 3.0 * gg[i], 1e-12);
}

TEST(Backward, Deterministic) {
  const auto run = [] {
    Rng rng(9);
    auto w = random_tensor(rng, {6, 6}, -1.0, 1.0);
    auto x = random_tensor(rng, {6, 6}, -1.0, 1.0, false);
    Tape t;
    const auto l = mean(t, sigmoid(t, matmul(t, matmul(t, x, w), w)));
    t.backward(l);
    auto g = w.grad_values();
    g.push_back(l.item());
    return g;
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, FirstStepMatchesHandRecurrence) {
  auto p = Tensor::from({1}, {0.0}, true);
  Adam opt({p}, AdamOptions{1e-4, 0.9, 0.999, 1e-8});
  p.grad()[0] = 1.0;
  opt.step();
  // m = 0.1, v = 0.001; m_hat = 1, v_hat = 1 -> -lr / (1 + eps)
  EXPECT_NEAR(p.data()[0], -1e-4 / (1.0 + 1e-8), 1e-18);
  EXPECT_FALSE(p.has_grad());
}

TEST(Adam, ZeroGradientLeavesParameter) {
  auto p = Tensor::from({2}, {1.5, -2.0}, true);
  Adam opt({p}, AdamOptions{});
  p.grad();
  opt.step();
  EXPECT_EQ(p.values(), (std::vector<double>{1.5, -2.0}));
}

TEST(Adam, MissingGradientThrows) {
  auto p = Tensor::from({1}, {0.0}, true);
  Adam opt({p}, AdamOptions{});
  EXPECT_THROW(opt.step(), MissingGradient);
}

TEST(Adam, TwoOptimizersKeepSeparateMoments) {
  auto a = Tensor::from({1}, {0.0}, true);
  auto b = Tensor::from({1}, {0.0}, true);
  Adam oa({a}, AdamOptions{1e-4});
  Adam ob({b}, AdamOptions{5e-6});
  a.grad()[0] = 2.0;
  oa.step();
  EXPECT_EQ(ob.first_moment(0)[0], 0.0);
  EXPECT_EQ(ob.second_moment(0)[0], 0.0);
  EXPECT_EQ(b.data()[0], 0.0);
  EXPECT_NEAR(oa.first_moment(0)[0], 0.2, 1e-15);
}

TEST(Checkpoint, BinaryLayoutAndRoundTrip) {
  NamedTensors t;
  t["b"] = Tensor::from({2, 1}, {1.5, -2.25});
  t["a"] = Tensor::scalar(3.0);
  const auto bytes = encode_checkpoint(t);
  ASSERT_GE(bytes.size(), 12u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "GDCK");
  EXPECT_EQ(bytes[4], 1);   // version
  EXPECT_EQ(bytes[8], 2);   // count
  // magic, version, count, then "a": len 1, 'a', rank 0, one f64
  EXPECT_EQ(bytes.size(), 12u + (4 + 1 + 4 + 8) + (4 + 1 + 4 + 16 + 16));
  const auto back = decode_checkpoint(bytes, "mem");
  EXPECT_EQ(back.at("b").shape(), (Shape{2, 1}));
  EXPECT_EQ(back.at("b").values(), t["b"].values());
  EXPECT_EQ(back.at("a").item(), 3.0);

  const auto path = (std::filesystem::temp_directory_path() / "voxsplat_ckpt_test.gdck").string();
  save_checkpoint(path, t);
  EXPECT_EQ(load_checkpoint(path).at("b").values(), t["b"].values());
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsCorruptInput) {
  auto bytes = encode_checkpoint({{"x", Tensor::from({3}, {1, 2, 3})}});
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic, "mem"), FormatError);
  bytes.resize(bytes.size() - 4);
  EXPECT_THROW(decode_checkpoint(bytes, "mem"), FormatError);
}
