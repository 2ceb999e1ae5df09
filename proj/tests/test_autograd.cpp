#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "satqa/autograd.hpp"
#include "satqa/errors.hpp"

using namespace satqa;
using satqa::testing::gradcheck;
using satqa::testing::probe;
using satqa::testing::random_tensor;
using Vars = std::vector<ag::Var>;

namespace {

constexpr double kTol = 1e-6;

class AutogradTest : public ::testing::Test {
 protected:
  std::mt19937_64 rng{1234};
};

TEST_F(AutogradTest, ElementwiseOps) {
  auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
  EXPECT_LT(gradcheck([](ag::Graph& g, const Vars& v) { return probe(g, ag::add(v[0], v[1])); }, {a, b}), kTol);
  EXPECT_LT(gradcheck([](ag::Graph& g, const Vars& v) { return probe(g, ag::sub(v[0], v[1])); }, {a, b}), kTol);
  EXPECT_LT(gradcheck([](ag::Graph& g, const Vars& v) { return probe(g, ag::mul(v[0], v[1])); }, {a, b}), kTol);
  EXPECT_LT(gradcheck([](ag::Graph& g, const Vars& v) { return probe(g, ag::gelu(v[0])); }, {a}), kTol);
  EXPECT_LT(gradcheck([](ag::Graph& g, const Vars& v) { return probe(g, ag::sigmoid(v[0])); }, {a}), kTol);
  EXPECT_LT(gradcheck([](ag::Graph& g, const Vars& v) { return probe(g, ag::relu(v[0])); }, {a}), kTol);
}

TEST_F(AutogradTest, BroadcastOps) {
  auto x = random_tensor({3, 4}, rng);
  auto col = random_tensor({1, 4}, rng), row = random_tensor({3, 1}, rng), vec = random_tensor({4}, rng);
  EXPECT_LT(gradcheck([](ag::Graph& g, const Vars& v) { return probe(g, ag::add_bcast(v[0], v[1])); }, {x, vec}), kTol);
  EXPECT_LT(gradcheck([](ag::Graph& g, const Vars& v) { return probe(g, ag::add_bcast(v[0], v[1])); }, {x, row}), kTol);
  EXPECT_LT(gradcheck([](ag::Graph& g, const Vars& v) { return probe(g, ag::mul_bcast(v[0], v[1])); }, {x, col}), kTol);
  EXPECT_LT(gradcheck([](ag::Graph& g, const Vars& v) { return probe(g, ag::mul_bcast(v[0], v[1])); }, {x, row}), kTol);
}

TEST_F(AutogradTest, ShapeOps) {
  auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 2}, rng), c = random_tensor({2, 4}, rng);
  EXPECT_LT(gradcheck([](ag::Graph& g, const Vars& v) { return probe(g, ag::transpose(v[0])); }, {a}), kTol);
  EXPECT_LT(gradcheck([](ag::Graph& g, const Vars& v) { return probe(g, ag::concat_cols({v[0], v[1]})); }, {a, b}), kTol);
  EXPECT_LT(gradcheck([](ag::Graph& g, const Vars& v) { return probe(g, ag::concat_rows({v[0], v[1]})); }, {a, c}), kTol);
  EXPECT_LT(gradcheck([](ag::Graph& g, const Vars& v) { return probe(g, ag::slice_cols(v[0], 1, 2)); }, {a}), kTol);
  EXPECT_LT(gradcheck([](ag::Graph& g, const Vars& v) { return probe(g, ag::slice_rows(v[0], 1, 2)); }, {a}), kTol);
  EXPECT_LT(gradcheck([](ag::Graph& g, const Vars& v) { return probe(g, ag::reshape(v[0], {2, 6})); }, {a}), kTol);
}

TEST_F(AutogradTest, MatmulBothLayouts) {
  auto a = random_tensor({3, 5}, rng), b = random_tensor({5, 2}, rng), bt = random_tensor({2, 5}, rng);
  EXPECT_LT(gradcheck([](ag::Graph& g, const Vars& v) { return probe(g, ag::matmul(v[0], v[1])); }, {a, b}), kTol);
  EXPECT_LT(gradcheck([](ag::Graph& g, const Vars& v) { return probe(g, ag::matmul(v[0], v[1], true)); }, {a, bt}), kTol);
}

TEST_F(AutogradTest, Reductions) {
  auto a = random_tensor({3, 5}, rng);
  EXPECT_LT(gradcheck([](ag::Graph&, const Vars& v) { return ag::mean(v[0]); }, {a}), kTol);
  for (int axis : {0, 1}) {
    EXPECT_LT(gradcheck([axis](ag::Graph& g, const Vars& v) { return probe(g, ag::mean_axis(v[0], axis)); }, {a}), kTol);
    EXPECT_LT(gradcheck([axis](ag::Graph& g, const Vars& v) { return probe(g, ag::max_axis(v[0], axis)); }, {a}), kTol);
  }
}

TEST_F(AutogradTest, Normalisation) {
  auto a = random_tensor({4, 6}, rng), gam = random_tensor({6}, rng), bet = random_tensor({6}, rng);
  EXPECT_LT(gradcheck([](ag::Graph& g, const Vars& v) { return probe(g, ag::softmax_rows(v[0])); }, {a}), kTol);
  EXPECT_LT(gradcheck([](ag::Graph& g, const Vars& v) { return probe(g, ag::l2_normalize_rows(v[0])); }, {a}), kTol);
  EXPECT_LT(gradcheck([](ag::Graph& g, const Vars& v) { return probe(g, ag::layer_norm_rows(v[0], v[1], v[2])); },
                      {a, gam, bet}),
            1e-5);
  auto x = random_tensor({4, 3, 3}, rng), gc = random_tensor({4}, rng), bc = random_tensor({4}, rng);
  EXPECT_LT(gradcheck([](ag::Graph& g, const Vars& v) { return probe(g, ag::group_norm(v[0], 2, v[1], v[2])); },
                      {x, gc, bc}),
            1e-5);
}

TEST_F(AutogradTest, SoftmaxRowsSumToOne) {
  ag::Graph g(false);
  auto s = ag::softmax_rows(g.constant(random_tensor({5, 7}, rng, 30.0)));
  for (int r = 0; r < 5; ++r) {
    double sum = 0.0;
    for (int c = 0; c < 7; ++c) sum += s.value().at(r, c);
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST_F(AutogradTest, Convolutions) {
  auto x = random_tensor({4, 6, 5}, rng), w = random_tensor({3, 4, 3, 3}, rng), b = random_tensor({3}, rng);
  for (int stride : {1, 2})
    for (int pad : {0, 1}) {
      ag::Conv2dGeom geom{stride, pad, 1};
      EXPECT_LT(gradcheck([geom](ag::Graph& g, const Vars& v) { return probe(g, ag::conv2d(v[0], v[1], v[2], geom)); },
                          {x, w, b}),
                kTol);
    }
  auto dw = random_tensor({4, 1, 3, 3}, rng);
  EXPECT_LT(gradcheck([](ag::Graph& g, const Vars& v) { return probe(g, ag::conv2d(v[0], v[1], ag::Var{}, {1, 1, 4})); },
                      {x, dw}),
            kTol);
}

TEST_F(AutogradTest, DeformableConvolutionGradients) {
  auto x = random_tensor({2, 5, 5}, rng), w = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({3}, rng);
  // Fractional offsets keep every sample away from bilinear kinks.
  Tensor off({18, 5, 5});
  std::uniform_real_distribution<double> u(0.1, 0.9);
  for (double& v : off.storage()) v = u(rng) * (u(rng) > 0.5 ? 1 : -1);
  EXPECT_LT(gradcheck([](ag::Graph& g, const Vars& v) { return probe(g, ag::deform_conv2d(v[0], v[1], v[2], v[3], 1, 1)); },
                      {x, off, w, b}),
            1e-5);
}

TEST_F(AutogradTest, DeformableWithZeroOffsetsMatchesConvolution) {
  auto x = random_tensor({3, 6, 6}, rng), w = random_tensor({2, 3, 3, 3}, rng), b = random_tensor({2}, rng);
  ag::Graph g(false);
  auto xv = g.constant(x), wv = g.constant(w), bv = g.constant(b);
  auto plain = ag::conv2d(xv, wv, bv, {1, 1, 1});
  auto deform = ag::deform_conv2d(xv, g.constant(Tensor::zeros({18, 6, 6})), wv, bv, 1, 1);
  ASSERT_EQ(plain.shape(), deform.shape());
  for (std::size_t i = 0; i < plain.value().size(); ++i) EXPECT_NEAR(plain.value()[i], deform.value()[i], 1e-12);
}

TEST_F(AutogradTest, Pooling) {
  auto x = random_tensor({2, 5, 7}, rng);
  EXPECT_LT(gradcheck([](ag::Graph& g, const Vars& v) { return probe(g, ag::max_pool2d(v[0], 2, 2, true)); }, {x}), kTol);
  EXPECT_LT(gradcheck([](ag::Graph& g, const Vars& v) { return probe(g, ag::resize_nearest(v[0], 7, 9)); }, {x}), kTol);
  EXPECT_LT(gradcheck([](ag::Graph& g, const Vars& v) { return probe(g, ag::adaptive_avg_pool2d(v[0], 2, 3)); }, {x}),
            kTol);
  ag::Graph g(false);
  EXPECT_EQ(ag::max_pool2d(g.constant(x), 2, 2, true).shape(), (Shape{2, 3, 4}));
  EXPECT_EQ(ag::max_pool2d(g.constant(x), 2, 2, false).shape(), (Shape{2, 2, 3}));
}

TEST_F(AutogradTest, L1LossContract) {
  ag::Graph g;
  auto p = g.input(Tensor({2}, std::vector<double>{1, 3}), true);
  auto loss = ag::l1_loss(p, {2, 1});
  EXPECT_DOUBLE_EQ(loss.value()[0], 1.5);
  g.backward(loss);
  EXPECT_DOUBLE_EQ(g.grad(p)[0], -0.5);
  EXPECT_DOUBLE_EQ(g.grad(p)[1], 0.5);
  EXPECT_THROW(ag::l1_loss(p, {1.0}), ContractError);
}

TEST_F(AutogradTest, InferenceGraphRecordsNothing) {
  ag::Graph g(false);
  auto a = g.input(random_tensor({2, 2}, rng), true);
  auto s = ag::sum(ag::gelu(a));
  EXPECT_FALSE(g.requires_grad(s));
}

TEST_F(AutogradTest, ShapeErrorsAreContractViolations) {
  ag::Graph g;
  auto a = g.constant(Tensor::zeros({2, 3}));
  auto b = g.constant(Tensor::zeros({2, 3}));
  EXPECT_THROW(ag::matmul(a, b), ContractError);
  EXPECT_THROW(ag::add(a, g.constant(Tensor::zeros({3, 2}))), ContractError);
}

}  // namespace
