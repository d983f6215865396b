#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "mgtd/encoder.hpp"
#include "mgtd/hybrid.hpp"
#include "mgtd/nn.hpp"
#include "support/oracles.hpp"

using namespace mgtd;
using nn::Matrix;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, nn::Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nn::uniform(rng, -scale, scale);
  return m;
}

double weighted_sum(const Matrix& y, const Matrix& w) { return (y.array() * w.array()).sum(); }

/// Analytic gradients of params after one backward pass, as a list of matrices.
std::vector<Matrix> grads_of(const nn::ParamList& params) {
  std::vector<Matrix> out;
  for (auto* p : params) out.push_back(p->grad);
  return out;
}

/// Wraps an input matrix in a Param so finite differences can perturb it.
struct InputParam {
  nn::Param p;
  explicit InputParam(const Matrix& x) : p("input", x.rows(), x.cols()) { p.value = x; }
};

}  // namespace

TEST(Linear, GradientsMatchFiniteDifferences) {
  nn::Rng rng(1);
  nn::Linear lin("fc", 4, 3, rng);
  InputParam x(random_matrix(4, 5, rng));
  const Matrix w = random_matrix(3, 5, rng);
  nn::ParamList params;
  lin.collect(params);
  nn::zero_grads(params);
  const Matrix dx = lin.backward(x.p.value, w);
  auto f = [&] { return weighted_sum(lin.forward(x.p.value), w); };
  EXPECT_LT(oracle::relative_error(grads_of(params), oracle::finite_differences(params, f)), 1e-7);
  EXPECT_LT(oracle::relative_error({dx}, oracle::finite_differences({&x.p}, f)), 1e-7);
}

TEST(Linear, RejectsWrongWidth) {
  nn::Rng rng(1);
  nn::Linear lin("fc", 4, 3, rng);
  EXPECT_THROW(lin.forward(Matrix::Zero(5, 1)), Error);
}

TEST(Norm, LayerNormalizesColumns) {
  nn::Rng rng(2);
  nn::Norm norm("n", nn::NormKind::Layer, 6);
  const Matrix y = norm.forward(random_matrix(6, 4, rng, 3.0), Mode::Train);
  for (Eigen::Index j = 0; j < y.cols(); ++j) {
    EXPECT_NEAR(y.col(j).mean(), 0.0, 1e-12);
    EXPECT_NEAR(y.col(j).squaredNorm() / 6.0, 1.0, 1e-3);
  }
}

TEST(Norm, BatchNormalizesRowsAndTracksRunningStats) {
  nn::Rng rng(3);
  nn::Norm norm("n", nn::NormKind::Batch, 3);
  const Matrix x = random_matrix(3, 8, rng, 2.0);
  const Matrix y = norm.forward(x, Mode::Train);
  for (Eigen::Index i = 0; i < 3; ++i) EXPECT_NEAR(y.row(i).mean(), 0.0, 1e-12);
  const nn::Vector mean = x.rowwise().mean();
  EXPECT_LT((norm.running_mean - 0.1 * mean).norm(), 1e-12);
  const Matrix before = norm.infer(x);
  norm.infer(x);
  EXPECT_EQ(norm.infer(x), before);
}

TEST(Norm, NoneIsIdentityWithoutParams) {
  nn::Norm norm("n", nn::NormKind::None, 3);
  const Matrix x = Matrix::Random(3, 2);
  EXPECT_EQ(norm.forward(x, Mode::Train), x);
  nn::ParamList params;
  norm.collect(params);
  EXPECT_TRUE(params.empty());
}

TEST(Norm, GradientsMatchFiniteDifferences) {
  for (auto kind : {nn::NormKind::Layer, nn::NormKind::Batch}) {
    for (auto mode : {Mode::Train, Mode::Eval}) {
      nn::Rng rng(4);
      nn::Norm norm("n", kind, 4);
      norm.gamma.value = random_matrix(4, 1, rng) + Matrix::Ones(4, 1);
      norm.beta.value = random_matrix(4, 1, rng);
      norm.running_mean = random_matrix(4, 1, rng);
      norm.running_var = random_matrix(4, 1, rng).cwiseAbs() + Matrix::Ones(4, 1);
      InputParam x(random_matrix(4, 5, rng, 2.0));
      const Matrix w = random_matrix(4, 5, rng);
      nn::ParamList params;
      norm.collect(params);
      nn::zero_grads(params);
      // Finite differences must not move the running statistics.
      auto f = [&] {
        nn::Norm copy = norm;
        return weighted_sum(copy.forward(x.p.value, mode), w);
      };
      nn::Norm work = norm;
      nn::Norm::Cache cache;
      work.forward(x.p.value, mode, &cache);
      nn::ParamList work_params;
      work.collect(work_params);
      nn::zero_grads(work_params);
      const Matrix dx = work.backward(cache, w);
      EXPECT_LT(oracle::relative_error(grads_of(work_params), oracle::finite_differences(params, f)), 1e-6);
      EXPECT_LT(oracle::relative_error({dx}, oracle::finite_differences({&x.p}, f)), 1e-6);
    }
  }
}

TEST(Dropout, EvalIsIdentityAndTrainIsInverted) {
  nn::Rng rng(5);
  const Matrix x = Matrix::Ones(50, 40);
  Matrix mask;
  EXPECT_EQ(nn::dropout_forward(x, 0.5, Mode::Eval, rng, &mask), x);
  EXPECT_EQ(mask.size(), 0);
  const Matrix y = nn::dropout_forward(x, 0.5, Mode::Train, rng, &mask);
  for (Eigen::Index i = 0; i < y.size(); ++i) EXPECT_TRUE(y.data()[i] == 0.0 || y.data()[i] == 2.0);
  EXPECT_NEAR(y.mean(), 1.0, 0.1);
  EXPECT_EQ(nn::dropout_backward(mask, x), mask);
}

TEST(Embedding, LookupAndScatter) {
  nn::Rng rng(6);
  nn::Embedding emb("e", 3, 5, rng, -1, 1);
  const std::vector<TokenId> ids{2, 4, 2};
  const Matrix out = emb.lookup(ids);
  EXPECT_EQ(Matrix(out.col(0)), Matrix(emb.table.value.col(2)));
  emb.table.zero_grad();
  emb.backward(ids, Matrix::Ones(3, 3));
  EXPECT_DOUBLE_EQ(emb.table.grad(0, 2), 2.0);
  EXPECT_DOUBLE_EQ(emb.table.grad(0, 4), 1.0);
  EXPECT_DOUBLE_EQ(emb.table.grad(0, 0), 0.0);
  EXPECT_THROW(emb.lookup(std::vector<TokenId>{5}), Error);
}

TEST(AdamW, FirstStepHandValues) {
  nn::Param p("p", 2, 1);
  p.value << 1.0, -2.0;
  p.grad << 0.5, -3.0;
  nn::AdamW opt;
  opt.step({&p}, 0.1);
  // Bias-corrected first step moves each entry by lr * sign(grad), after decay.
  EXPECT_NEAR(p.value(0), 1.0 * (1 - 0.001) - 0.1, 1e-7);
  EXPECT_NEAR(p.value(1), -2.0 * (1 - 0.001) + 0.1, 1e-7);
  EXPECT_EQ(p.step, 1);
}

TEST(AdamW, ZeroLrLeavesValues) {
  nn::Param p("p", 2, 2);
  p.value.setConstant(3.0);
  p.grad.setConstant(1.0);
  nn::AdamW().step({&p}, 0.0);
  EXPECT_EQ(p.value, Matrix::Constant(2, 2, 3.0));
}

TEST(Clip, ScalesToMaxNorm) {
  nn::Param a("a", 1, 2), b("b", 1, 1);
  a.grad << 3.0, 0.0;
  b.grad << 4.0;
  const double before = nn::clip_grad_norm({&a, &b}, 1.0);
  EXPECT_DOUBLE_EQ(before, 5.0);
  EXPECT_NEAR(nn::grad_norm({&a, &b}), 1.0, 1e-6);
  EXPECT_NEAR(a.grad(0, 0) / b.grad(0, 0), 0.75, 1e-12);
  nn::clip_grad_norm({&a, &b}, 10.0);
  EXPECT_NEAR(nn::grad_norm({&a, &b}), 1.0, 1e-6);
}

TEST(Json, ParamsRoundTrip) {
  nn::Rng rng(7);
  nn::Linear a("fc", 3, 2, rng), b("fc", 3, 2, rng);
  nn::ParamList pa, pb;
  a.collect(pa);
  b.collect(pb);
  nn::params_from_json(pb, nn::params_to_json(pa));
  EXPECT_EQ(a.weight.value, b.weight.value);
  EXPECT_EQ(a.bias.value, b.bias.value);
  nn::Linear c("fc", 4, 2, rng);
  nn::ParamList pc;
  c.collect(pc);
  EXPECT_THROW(nn::params_from_json(pc, nn::params_to_json(pa)), Error);
}

TEST(Lstm, GradientsMatchFiniteDifferences) {
  for (bool reverse : {false, true}) {
    nn::Rng rng(8);
    hybrid::LstmDirection lstm("l", 3, 2, reverse, rng);
    InputParam x(random_matrix(3, 4, rng));
    const Matrix w = random_matrix(2, 4, rng);
    nn::ParamList params;
    lstm.collect(params);
    nn::zero_grads(params);
    hybrid::LstmDirection::Cache cache;
    lstm.forward(x.p.value, &cache);
    const Matrix dx = lstm.backward(cache, w);
    auto f = [&] { return weighted_sum(lstm.forward(x.p.value, nullptr), w); };
    EXPECT_LT(oracle::relative_error(grads_of(params), oracle::finite_differences(params, f)), 1e-7);
    EXPECT_LT(oracle::relative_error({dx}, oracle::finite_differences({&x.p}, f)), 1e-7);
  }
}

TEST(Lstm, DirectionMatters) {
  nn::Rng rng(9);
  hybrid::LstmDirection fwd("l", 2, 3, false, rng);
  hybrid::LstmDirection bwd = fwd;
  bwd = hybrid::LstmDirection("l", 2, 3, true, rng);
  bwd.w.value = fwd.w.value;
  bwd.u.value = fwd.u.value;
  bwd.b.value = fwd.b.value;
  const Matrix x = random_matrix(2, 5, rng);
  const Matrix reversed = x.rowwise().reverse();
  // Running backwards over x equals running forwards over reversed x, re-reversed.
  EXPECT_LT((bwd.forward(x, nullptr) - Matrix(fwd.forward(reversed, nullptr).rowwise().reverse())).norm(), 1e-12);
}

TEST(CharCnn, HandCase) {
  hybrid::HybridConfig cfg;
  cfg.char_emb_dim = 1;
  cfg.char_conv_kernel = 2;
  cfg.char_conv_filters = 2;
  nn::Rng rng(10);
  hybrid::CharCnn cnn(cfg, 5, rng);
  cnn.embedding.table.value << 0, 9, 1, 2, 3;  // PAD, UNK, then three chars
  cnn.weight.value << 1, 1, 1, -1;             // filter 0 sums a window, filter 1 is a difference
  cnn.bias.value << 0, 0;
  // Row "2 4 3 PAD": windows (1,3), (3,2): sums 4, 5; differences -2, 1.
  const std::vector<TokenId> row{2, 4, 3, 0, 0};
  const auto f = cnn.features(row);
  EXPECT_DOUBLE_EQ(f(0), 5.0);
  EXPECT_DOUBLE_EQ(f(1), 1.0);
  // Permuting filters permutes features.
  hybrid::CharCnn swapped = cnn;
  swapped.weight.value.row(0).swap(swapped.weight.value.row(1));
  const auto g = swapped.features(row);
  EXPECT_DOUBLE_EQ(g(0), f(1));
  EXPECT_DOUBLE_EQ(g(1), f(0));
  // A one-character token still yields a single padded window.
  const std::vector<TokenId> short_row{3, 0, 0, 0, 0};
  EXPECT_DOUBLE_EQ(cnn.features(short_row)(0), 2.0);
}

TEST(CharCnn, GradientsMatchFiniteDifferences) {
  hybrid::HybridConfig cfg;
  cfg.char_emb_dim = 3;
  cfg.char_conv_kernel = 3;
  cfg.char_conv_filters = 4;
  nn::Rng rng(11);
  hybrid::CharCnn cnn(cfg, 7, rng);
  const std::vector<std::vector<TokenId>> rows{{2, 3, 4, 5, 6, 0}, {6, 2, 0, 0, 0, 0}, {3, 3, 4, 2, 0, 0}};
  const Matrix w = random_matrix(4, 3, rng);
  nn::ParamList params;
  cnn.collect(params);
  nn::zero_grads(params);
  hybrid::CharCnn::Cache cache;
  cnn.forward(rows, &cache);
  cnn.backward(cache, w);
  auto f = [&] { return weighted_sum(cnn.forward(rows, nullptr), w); };
  EXPECT_LT(oracle::relative_error(grads_of(params), oracle::finite_differences(params, f, 1e-7)), 1e-6);
}

TEST(TinyEncoder, GradientsMatchFiniteDifferences) {
  corpus::Vocab vocab;
  for (const char* w : {"a", "b", "c"}) vocab.add_word(w);
  TinyEncoderConfig cfg;
  cfg.hidden_size = 3;
  cfg.layers = 2;
  nn::Rng rng(12);
  TinyEncoder enc(vocab, cfg, rng);
  const std::vector<TokenId> ids{2, 4, 3};
  std::vector<Matrix> weights;
  for (int l = 0; l <= 2; ++l) weights.push_back(random_matrix(3, 5, rng));
  auto f = [&] {
    const auto hs = enc.encode(ids);
    double s = 0;
    for (std::size_t l = 0; l < hs.layers.size(); ++l) s += weighted_sum(hs.layers[l], weights[l]);
    return s;
  };
  auto params = enc.all_params();
  nn::zero_grads(params);
  enc.backward(ids, enc.encode(ids), weights, 0);
  EXPECT_LT(oracle::relative_error(grads_of(params), oracle::finite_differences(params, f)), 1e-7);

  // A lowest layer of 2 touches only layer 2.
  nn::zero_grads(params);
  enc.backward(ids, enc.encode(ids), weights, 2);
  for (int l = 0; l < 2; ++l)
    for (auto* p : enc.layer_params(l)) EXPECT_EQ(p->grad.norm(), 0.0) << p->name;
  for (auto* p : enc.layer_params(2)) EXPECT_GT(p->grad.norm(), 0.0) << p->name;
}

TEST(TinyEncoder, JsonRoundTripPreservesOutputs) {
  corpus::Vocab vocab;
  vocab.add_word("x");
  nn::Rng rng(13);
  TinyEncoder enc(vocab, TinyEncoderConfig{4, 2, 0.5}, rng);
  const auto copy = encoder_from_json(enc.to_json());
  const std::vector<TokenId> ids{2, 1};
  EXPECT_EQ(copy->encode(ids).layers.back(), enc.encode(ids).layers.back());
  EXPECT_EQ(copy->tokenize("x y"), (std::vector<TokenId>{2, 1}));
}
