#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "mgtd/clshead.hpp"
#include "support/oracles.hpp"

using namespace mgtd;
using namespace mgtd::clshead;
using nn::Matrix;
using nn::Vector;

namespace {

HiddenStates ramp_states(int depth, int hidden, int positions) {
  HiddenStates hs;
  for (int l = 0; l <= depth; ++l) {
    Matrix m(hidden, positions);
    for (int i = 0; i < hidden; ++i)
      for (int p = 0; p < positions; ++p) m(i, p) = 100 * l + 10 * p + i;
    hs.layers.push_back(m);
  }
  return hs;
}

corpus::Vocab toy_vocab() {
  corpus::Vocab v;
  for (const char* w : {"alpha", "beta", "gamma", "delta", "eps"}) v.add_word(w);
  return v;
}

SequenceClassifier make_classifier(Task task, ClassifierConfig cfg, int hidden = 3, int layers = 3,
                                   std::uint64_t seed = 1) {
  cfg.task = task;
  nn::Rng rng(seed);
  auto enc = std::make_unique<TinyEncoder>(toy_vocab(), TinyEncoderConfig{hidden, layers, 0.5}, rng);
  return SequenceClassifier(std::move(enc), std::move(cfg), rng);
}

ClassifierConfig no_dropout_config() {
  ClassifierConfig cfg;
  cfg.head.hidden_sizes = {4, 3};
  cfg.head.dropout = 0.0;
  cfg.head.feature_dropout = 0.0;
  cfg.head.norm = nn::NormKind::Layer;
  return cfg;
}

std::vector<SequenceClassifier::Example> examples_for(const SequenceClassifier& model, Task task) {
  const std::vector<std::string> texts{"alpha beta gamma", "delta eps alpha beta", "gamma", "eps eps delta alpha"};
  std::vector<SequenceClassifier::Example> out;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    corpus::TextRecord r;
    r.id = std::to_string(i);
    r.text = texts[i];
    r.label = static_cast<int>(i % static_cast<std::size_t>(is_binary(task) ? 2 : num_labels(task)));
    out.push_back(model.prepare(r));
  }
  return out;
}

}  // namespace

TEST(Features, LastLayerIsFirstPositionOfTopLayer) {
  const auto hs = ramp_states(4, 3, 5);
  const Vector v = select_features(hs, LayerSelection::last_layer());
  ASSERT_EQ(v.size(), 3);
  EXPECT_EQ(v, Vector(hs.layers[4].col(0)));
}

TEST(Features, ConcatLastKHighestFirst) {
  const auto hs = ramp_states(12, 2, 3);
  const Vector v = select_features(hs, LayerSelection::concat_last(4));
  ASSERT_EQ(v.size(), 8);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(Vector(v.segment(2 * i, 2)), Vector(hs.layers[12 - i].col(0)));
  EXPECT_THROW(select_features(hs, LayerSelection::concat_last(13)), Error);
}

TEST(Features, DimensionsAcrossDepths) {
  for (int depth : {1, 4, 12, 24}) {
    for (int hidden : {2, 8}) {
      const auto hs = ramp_states(depth, hidden, 2);
      EXPECT_EQ(select_features(hs, LayerSelection::last_layer()).size(), hidden);
      for (int k = 1; k <= depth; k += 3) EXPECT_EQ(select_features(hs, LayerSelection::concat_last(k)).size(), hidden * k);
    }
  }
}

TEST(Features, DropoutOnlyInTrainMode) {
  const auto hs = ramp_states(2, 50, 2);
  nn::Rng rng(1);
  const Vector base = select_features(hs, LayerSelection::last_layer());
  EXPECT_EQ(extract_features(hs, LayerSelection::last_layer(), 0.3, Mode::Eval, rng), base);
  const Vector dropped = extract_features(hs, LayerSelection::last_layer(), 0.3, Mode::Train, rng);
  EXPECT_NE(dropped, base);
}

TEST(FCBlock, ZeroWeightsGiveHalfProbability) {
  nn::Rng rng(2);
  FCBlock block("head", 6, FCBlockConfig{}, rng);
  for (auto* p : block.params()) p->value.setZero();
  const auto out = fc_forward(block, Vector::Random(6), Mode::Eval, rng);
  ASSERT_TRUE(out.probability.has_value());
  EXPECT_DOUBLE_EQ(*out.probability, 0.5);
  EXPECT_EQ(predict(out, Task::AMono), 1);
}

TEST(FCBlock, HandTanhChainWithoutNorm) {
  FCBlockConfig cfg;
  cfg.hidden_sizes = {2};
  cfg.norm = nn::NormKind::None;
  cfg.output_size = 1;
  nn::Rng rng(3);
  FCBlock block("head", 2, cfg, rng);
  block.linears()[0].weight.value << 1, 0, 0, -1;
  block.linears()[0].bias.value << 0, 0.5;
  block.output_layer().weight.value << 2, 1;
  block.output_layer().bias.value << -0.25;
  const Vector x = Eigen::Vector2d(0.3, 0.2);
  const double expected = 2 * std::tanh(0.3) + std::tanh(-0.2 + 0.5) - 0.25;
  EXPECT_NEAR(fc_forward(block, x, Mode::Eval, rng).logits(0), expected, 1e-15);
}

TEST(FCBlock, RejectsWrongFeatureSize) {
  nn::Rng rng(4);
  FCBlock block("head", 6, FCBlockConfig{}, rng);
  EXPECT_THROW(fc_forward(block, Vector::Zero(5), Mode::Eval, rng), Error);
}

TEST(FCBlock, EvalIsDeterministic) {
  nn::Rng rng(5);
  FCBlockConfig cfg;
  cfg.norm = nn::NormKind::Batch;
  FCBlock block("head", 4, cfg, rng);
  const Vector x = Vector::Random(4);
  const auto a = fc_forward(block, x, Mode::Eval, rng).logits;
  const auto b = fc_forward(block, x, Mode::Eval, rng).logits;
  EXPECT_EQ(a, b);
}

TEST(Predict, ThresholdAndTies) {
  EXPECT_EQ(predict(ClassifierOutput::from_logits(Vector::Constant(1, 0.0)), Task::AMono), 1);
  EXPECT_EQ(predict(ClassifierOutput::from_logits(Vector::Constant(1, -1e-9)), Task::AMono), 0);
  Vector tie(6);
  tie << 0, 3, 1, 3, 2, 3;
  EXPECT_EQ(predict(ClassifierOutput::from_logits(tie), Task::B), 1);
  EXPECT_THROW(predict(ClassifierOutput::from_logits(Vector::Zero(5)), Task::B), Error);
}

TEST(Losses, HandValuesAndGradients) {
  double g = 0;
  EXPECT_NEAR(bce_with_logits(0.0, 1, &g), std::log(2.0), 1e-15);
  EXPECT_DOUBLE_EQ(g, -0.5);
  EXPECT_NEAR(bce_with_logits(800.0, 0), 800.0, 1e-9);
  EXPECT_NEAR(bce_with_logits(-800.0, 0), 0.0, 1e-12);
  Vector grad;
  EXPECT_NEAR(cross_entropy(Vector::Zero(6), 2, &grad), std::log(6.0), 1e-15);
  EXPECT_NEAR(grad(2), 1.0 / 6 - 1, 1e-15);
  EXPECT_NEAR(grad.sum(), 0.0, 1e-15);
}

TEST(Classifier, GradientsMatchFiniteDifferences) {
  struct Case {
    Task task;
    LayerSelection selection;
    textprep::TruncationStrategy longtext;
  };
  const std::vector<Case> cases{
      {Task::AMono, LayerSelection::last_layer(), textprep::TruncationStrategy::head_only()},
      {Task::B, LayerSelection::concat_last(2), textprep::TruncationStrategy::head_only()},
      {Task::AMulti, LayerSelection::concat_last(3), textprep::TruncationStrategy::hierarchical(textprep::PoolMode::Mean, 2)},
      {Task::B, LayerSelection::last_layer(), textprep::TruncationStrategy::hierarchical(textprep::PoolMode::Max, 3)},
  };
  for (const auto& c : cases) {
    auto cfg = no_dropout_config();
    cfg.selection = c.selection;
    cfg.longtext = c.longtext;
    auto model = make_classifier(c.task, cfg);
    const auto examples = examples_for(model, c.task);
    std::vector<const SequenceClassifier::Example*> batch;
    for (const auto& e : examples) batch.push_back(&e);
    auto params = model.all_params();
    nn::zero_grads(params);
    nn::Rng rng(7);
    const double loss = model.accumulate_gradients(batch, 0, rng);
    auto f = [&] { return model.evaluate(examples).loss; };
    EXPECT_NEAR(loss, f(), 1e-12);
    std::vector<Matrix> analytic;
    for (auto* p : params) analytic.push_back(p->grad);
    EXPECT_LT(oracle::relative_error(analytic, oracle::finite_differences(params, f)), 1e-6)
        << task_name(c.task) << " " << selection_name(c.selection);
  }
}

TEST(Classifier, LowestLayerLimitsEncoderGradients) {
  auto cfg = no_dropout_config();
  cfg.selection = LayerSelection::concat_last(2);
  auto model = make_classifier(Task::AMono, cfg);
  const auto examples = examples_for(model, Task::AMono);
  std::vector<const SequenceClassifier::Example*> batch{&examples[0], &examples[1]};
  nn::Rng rng(8);
  nn::zero_grads(model.all_params());
  model.accumulate_gradients(batch, 4, rng);
  for (int l = 0; l <= 3; ++l)
    for (auto* p : model.param_group("encoder.layer." + std::to_string(l))) EXPECT_EQ(p->grad.norm(), 0.0);
  EXPECT_GT(nn::grad_norm(model.param_group("head")), 0.0);
  nn::zero_grads(model.all_params());
  model.accumulate_gradients(batch, 2, rng);
  for (int l = 0; l <= 1; ++l)
    for (auto* p : model.param_group("encoder.layer." + std::to_string(l))) EXPECT_EQ(p->grad.norm(), 0.0);
  EXPECT_GT(nn::grad_norm(model.param_group("encoder.layer.2")), 0.0);
  EXPECT_GT(nn::grad_norm(model.param_group("encoder.layer.3")), 0.0);
  EXPECT_EQ(model.selected_layers(), (std::vector<int>{3, 2}));
  EXPECT_THROW(model.param_group("decoder"), Error);
}

TEST(Classifier, CheckpointRoundTripPreservesPredictions) {
  ClassifierConfig cfg;
  cfg.head.hidden_sizes = {5};
  cfg.head.norm = nn::NormKind::Batch;
  cfg.longtext = textprep::TruncationStrategy::head_and_tail(2, 1);
  cfg.preprocess = textprep::PreprocessLevel::Light;
  auto model = make_classifier(Task::B, cfg, 4, 2);
  const auto examples = examples_for(model, Task::B);
  std::vector<const SequenceClassifier::Example*> batch;
  for (const auto& e : examples) batch.push_back(&e);
  nn::Rng rng(9);
  model.accumulate_gradients(batch, 3, rng);  // moves batch-norm running statistics
  const auto copy = SequenceClassifier::from_json(nlohmann::json::parse(model.to_json().dump()));
  for (const auto& e : examples) EXPECT_EQ(copy.infer(e).logits, model.infer(e).logits);
  EXPECT_EQ(copy.config().manifest(), model.config().manifest());
}

TEST(Classifier, OutputSizeFollowsTask) {
  EXPECT_EQ(make_classifier(Task::AMono, no_dropout_config()).head().config().output_size, 1);
  EXPECT_EQ(make_classifier(Task::B, no_dropout_config()).head().config().output_size, 6);
  EXPECT_THROW(make_classifier(Task::C, no_dropout_config()), Error);
}
