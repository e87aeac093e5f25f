#include <cmath>
#include <functional>
#include <vector>

#include <gtest/gtest.h>

#include <regdrop/errors.hpp>
#include <regdrop/tensor.hpp>

#include "oracles.hpp"

using namespace regdrop;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool grad = true) {
  return Tensor::from(shape, oracle::random_values(shape_numel(shape), rng), grad);
}

// Compares the analytic gradient of f at x with central differences.
void expect_grad_matches(const std::function<Tensor(const Tensor&)>& f, Tensor x, double tol = 1e-6) {
  Tensor loss = f(x);
  x.zero_grad();
  loss.backward();
  const auto analytic = x.grad();
  const Tensor numeric = finite_diff_grad(
      [&](const Tensor& probe) {
        NoGradGuard ng;
        return f(probe).item();
      },
      x, 1e-5);
  EXPECT_LT(oracle::max_rel_error(analytic, numeric.data(), 1e-4), tol);
}

// Weighted sum keeps every output coordinate in play.
Tensor weighted_sum(const Tensor& y, Rng& rng) {
  const Tensor w = random_tensor(y.shape(), rng, false);
  return sum(mul(y, w));
}

}  // namespace

TEST(TensorTest, ZerosAndFromHaveExpectedShape) {
  const Tensor z = Tensor::zeros({2, 3});
  EXPECT_EQ(z.rows(), 2u);
  EXPECT_EQ(z.cols(), 3u);
  for (double v : z.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(Tensor::from({2, 2}, {1.0, 2.0}), ShapeError);
}

TEST(TensorTest, MatmulMatchesTripleLoop) {
  Rng rng(11);
  for (auto [n, k, m] : {std::tuple{1, 1, 1}, {3, 5, 2}, {7, 4, 9}, {16, 16, 16}}) {
    const auto a = oracle::random_values(n * k, rng);
    const auto b = oracle::random_values(k * m, rng);
    const Tensor c = matmul(Tensor::from({std::size_t(n), std::size_t(k)}, a),
                            Tensor::from({std::size_t(k), std::size_t(m)}, b));
    const auto ref = oracle::matmul(a, b, n, k, m);
    EXPECT_LT(oracle::max_abs_diff(c.data(), ref), 1e-12);
  }
}

TEST(TensorTest, MatmulNtEqualsMatmulWithTranspose) {
  Rng rng(12);
  const Tensor a = random_tensor({4, 6}, rng, false);
  const Tensor b = random_tensor({5, 6}, rng, false);
  const Tensor direct = matmul_nt(a, b);
  const Tensor via_t = matmul(a, transpose(b));
  EXPECT_LT(oracle::max_abs_diff(direct.data(), via_t.data()), 1e-12);
}

TEST(TensorTest, MatmulRejectsMismatchedInnerDims) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})), ShapeError);
}

TEST(TensorTest, MacCounterCountsMatrixProducts) {
  reset_mac_count();
  matmul(Tensor::zeros({3, 4}), Tensor::zeros({4, 5}));
  EXPECT_EQ(mac_count(), 3u * 4u * 5u);
  matmul_nt(Tensor::zeros({2, 7}), Tensor::zeros({6, 7}));
  EXPECT_EQ(mac_count(), 60u + 2u * 7u * 6u);
}

TEST(TensorTest, BackwardRequiresScalarLoss) {
  const Tensor x = Tensor::zeros({2, 2}, true);
  EXPECT_THROW(scale(x, 2.0).backward(), ContractError);
}

TEST(TensorTest, NoGradGuardSkipsRecording) {
  const Tensor x = Tensor::full({2}, 1.0, true);
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    EXPECT_FALSE(scale(x, 3.0).requires_grad());
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_TRUE(scale(x, 3.0).requires_grad());
}

TEST(TensorTest, GradientsAccumulateAcrossBackwardCalls) {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  sum(scale(x, 3.0)).backward();
  sum(scale(x, 3.0)).backward();
  EXPECT_EQ(x.grad(), (std::vector<double>{6.0, 6.0}));
  x.zero_grad();
  EXPECT_EQ(x.grad(), (std::vector<double>{0.0, 0.0}));
}

TEST(TensorTest, SharedSubgraphGradientIsSummed) {
  const Tensor x = Tensor::from({1}, {3.0}, true);
  const Tensor y = mul(x, x);  // x used twice
  sum(add(y, x)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 2 * 3.0 + 1.0);
}

TEST(TensorTest, ElementwiseGradients) {
  Rng rng(21);
  const Tensor x = random_tensor({3, 4}, rng);
  const Tensor other = random_tensor({3, 4}, rng, false);
  Rng wrng(22);
  expect_grad_matches([&](const Tensor& t) { Rng r(1); return weighted_sum(add(t, other), r); }, x);
  expect_grad_matches([&](const Tensor& t) { Rng r(1); return weighted_sum(sub(other, t), r); }, x);
  expect_grad_matches([&](const Tensor& t) { Rng r(1); return weighted_sum(mul(t, other), r); }, x);
  expect_grad_matches([&](const Tensor& t) { Rng r(1); return weighted_sum(scale(t, -1.7), r); }, x);
  expect_grad_matches([&](const Tensor& t) { Rng r(1); return weighted_sum(silu(t), r); }, x);
  expect_grad_matches([&](const Tensor& t) { Rng r(1); return weighted_sum(gelu(t), r); }, x);
}

TEST(TensorTest, MatmulAndBiasGradients) {
  Rng rng(31);
  const Tensor a = random_tensor({3, 5}, rng);
  const Tensor b = random_tensor({5, 2}, rng);
  const Tensor bias = random_tensor({2}, rng);
  auto f_a = [&](const Tensor& t) { Rng r(2); return weighted_sum(matmul(t, b), r); };
  auto f_b = [&](const Tensor& t) { Rng r(2); return weighted_sum(matmul(a, t), r); };
  auto f_nt = [&](const Tensor& t) { Rng r(2); return weighted_sum(matmul_nt(a, t), r); };
  auto f_bias = [&](const Tensor& t) { Rng r(2); return weighted_sum(add_bias(matmul(a, b), t), r); };
  auto f_tr = [&](const Tensor& t) { Rng r(2); return weighted_sum(transpose(t), r); };
  expect_grad_matches(f_a, a);
  expect_grad_matches(f_b, b);
  expect_grad_matches(f_nt, random_tensor({4, 5}, rng));
  expect_grad_matches(f_bias, bias);
  expect_grad_matches(f_tr, a);
}

TEST(TensorTest, SoftmaxRowsSumToOneAndDifferentiate) {
  Rng rng(41);
  const Tensor x = random_tensor({3, 6}, rng);
  const Tensor p = softmax_rows(x);
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 6; ++c) s += p.at(r, c);
    EXPECT_NEAR(s, 1.0, 1e-14);
  }
  expect_grad_matches([&](const Tensor& t) { Rng r(3); return weighted_sum(softmax_rows(t), r); }, x);
}

TEST(TensorTest, MaskedSoftmaxGivesExactZerosAndRejectsFullyMaskedRows) {
  const Tensor x = Tensor::from({2, 3}, {1.0, 2.0, 3.0, 0.5, 0.5, 0.5});
  const std::vector<double> mask{0.0, kMaskedScore, 0.0, 0.0, 0.0, kMaskedScore};
  const Tensor p = masked_softmax_rows(x, mask);
  EXPECT_EQ(p.at(0, 1), 0.0);
  EXPECT_EQ(p.at(1, 2), 0.0);
  EXPECT_NEAR(p.at(1, 0), 0.5, 1e-15);

  const std::vector<double> all_masked{kMaskedScore, kMaskedScore, kMaskedScore, 0.0, 0.0, 0.0};
  EXPECT_THROW(masked_softmax_rows(x, all_masked), ContractError);

  Rng rng(42);
  const Tensor y = random_tensor({2, 3}, rng);
  expect_grad_matches([&](const Tensor& t) { Rng r(4); return weighted_sum(masked_softmax_rows(t, mask), r); }, y);
}

TEST(TensorTest, RmsNormValuesAndGradients) {
  const Tensor x = Tensor::from({1, 2}, {3.0, 4.0});
  const Tensor g = Tensor::from({2}, {1.0, 2.0});
  const Tensor y = rms_norm(x, g, 0.0);
  const double rms = std::sqrt((9.0 + 16.0) / 2.0);
  EXPECT_NEAR(y.at(0, 0), 3.0 / rms, 1e-15);
  EXPECT_NEAR(y.at(0, 1), 2.0 * 4.0 / rms, 1e-15);

  Rng rng(51);
  const Tensor xs = random_tensor({3, 5}, rng);
  const Tensor gain = random_tensor({5}, rng);
  expect_grad_matches([&](const Tensor& t) { Rng r(5); return weighted_sum(rms_norm(t, gain, 1e-6), r); }, xs);
  expect_grad_matches([&](const Tensor& t) { Rng r(5); return weighted_sum(rms_norm(xs, t, 1e-6), r); }, gain);
}

TEST(TensorTest, EmbeddingGathersRowsAndScattersGradients) {
  const Tensor table = Tensor::from({3, 2}, {0, 1, 10, 11, 20, 21}, true);
  const std::vector<int> ids{2, 0, 2};
  const Tensor e = embedding(table, ids);
  EXPECT_EQ(e.row(0), (std::vector<double>{20, 21}));
  EXPECT_EQ(e.row(1), (std::vector<double>{0, 1}));
  sum(e).backward();
  EXPECT_EQ(table.grad(), (std::vector<double>{1, 1, 0, 0, 2, 2}));
  const std::vector<int> bad{3};
  EXPECT_THROW(embedding(table, bad), ContractError);
}

TEST(TensorTest, RowAndColumnSlicingOps) {
  Rng rng(61);
  const Tensor x = random_tensor({5, 4}, rng);
  const Tensor top = slice_rows(x, 1, 3);
  EXPECT_EQ(top.row(0), x.row(1));
  const std::vector<std::size_t> idx{4, 0};
  const Tensor g = gather_rows(x, idx);
  EXPECT_EQ(g.row(0), x.row(4));
  EXPECT_EQ(g.row(1), x.row(0));
  const Tensor joined = concat_rows({slice_rows(x, 0, 2), slice_rows(x, 2, 5)});
  EXPECT_EQ(std::vector<double>(joined.data().begin(), joined.data().end()),
            std::vector<double>(x.data().begin(), x.data().end()));
  const Tensor cols = concat_cols({slice_cols(x, 0, 1), slice_cols(x, 1, 3)});
  EXPECT_EQ(std::vector<double>(cols.data().begin(), cols.data().end()),
            std::vector<double>(x.data().begin(), x.data().end()));
  EXPECT_THROW(slice_rows(x, 3, 6), ShapeError);

  expect_grad_matches([&](const Tensor& t) { Rng r(6); return weighted_sum(slice_rows(t, 1, 4), r); }, x);
  expect_grad_matches([&](const Tensor& t) { Rng r(6); return weighted_sum(gather_rows(t, idx), r); }, x);
  expect_grad_matches([&](const Tensor& t) { Rng r(6); return weighted_sum(slice_cols(t, 1, 2), r); }, x);
  expect_grad_matches(
      [&](const Tensor& t) { Rng r(6); return weighted_sum(concat_cols({t, slice_cols(t, 0, 2)}), r); }, x);
  expect_grad_matches(
      [&](const Tensor& t) { Rng r(6); return weighted_sum(concat_rows({t, slice_rows(t, 0, 1)}), r); }, x);
  expect_grad_matches([&](const Tensor& t) { Rng r(6); return weighted_sum(reshape(t, {2, 10}), r); }, x);
}

TEST(TensorTest, MeanRowsPoolsChunks) {
  const Tensor x = Tensor::from({4, 1}, {1, 3, 5, 7});
  const std::vector<std::pair<std::size_t, std::size_t>> chunks{{0, 1}, {1, 4}};
  const Tensor m = mean_rows(x, chunks);
  EXPECT_DOUBLE_EQ(m.at(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(m.at(1, 0), 5.0);
  Rng rng(71);
  const Tensor y = random_tensor({4, 3}, rng);
  expect_grad_matches([&](const Tensor& t) { Rng r(7); return weighted_sum(mean_rows(t, chunks), r); }, y);
}

TEST(TensorTest, CrossEntropyMatchesHandComputation) {
  const Tensor logits = Tensor::from({1, 3}, {1.0, 2.0, 3.0});
  const std::vector<int> target{0};
  const double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  EXPECT_NEAR(cross_entropy(logits, target).item(), lse - 1.0, 1e-14);

  Rng rng(81);
  const Tensor x = random_tensor({3, 5}, rng);
  const std::vector<int> targets{4, 0, 2};
  expect_grad_matches([&](const Tensor& t) { return cross_entropy(t, targets); }, x);
  expect_grad_matches([&](const Tensor& t) { return mean(t); }, x);
}
