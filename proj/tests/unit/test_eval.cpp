#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "mgtd/eval.hpp"
#include "support/oracles.hpp"

using namespace mgtd;
using namespace mgtd::eval;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Metrics, HandValues) {
  EXPECT_DOUBLE_EQ(accuracy(std::vector<int>{1, 0, 1, 1}, std::vector<int>{1, 1, 1, 0}), 0.5);
  EXPECT_DOUBLE_EQ(mae_boundary(std::vector<int>{3}, std::vector<int>{7}), 4.0);
  EXPECT_DOUBLE_EQ(mae_boundary(std::vector<int>{0, 10}, std::vector<int>{2, 10}), 1.0);
  EXPECT_THROW(accuracy(std::vector<int>{}, std::vector<int>{}), Error);
  EXPECT_THROW(accuracy(std::vector<int>{1}, std::vector<int>{1, 0}), Error);
}

TEST(Metrics, GroupAccuracy) {
  const std::vector<int> p{1, 0, 1, 1, 0}, g{1, 1, 1, 0, 0};
  const std::vector<std::string> gen{"a", "a", "b", "b", "b"};
  const auto acc = group_accuracy(p, g, gen);
  EXPECT_DOUBLE_EQ(acc.at("a"), 0.5);
  EXPECT_NEAR(acc.at("b"), 2.0 / 3, 1e-15);
  EXPECT_EQ(group_counts(gen).at("b"), 3u);
}

TEST(Metrics, WeightedGroupsRecoverOverall) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 200;
    std::vector<int> p(n), g(n), lens(n);
    std::vector<std::string> gen(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = static_cast<int>(rng() % 6);
      g[i] = static_cast<int>(rng() % 6);
      gen[i] = "g" + std::to_string(rng() % 5);
      lens[i] = static_cast<int>(rng() % 6000);
    }
    for (const auto& groups : {gen, length_buckets(lens)}) {
      const auto acc = group_accuracy(p, g, groups);
      const auto counts = group_counts(groups);
      double weighted = 0, mae_weighted = 0;
      const auto mae = group_mae(p, g, groups);
      for (const auto& [k, v] : acc) {
        weighted += v * static_cast<double>(counts.at(k));
        mae_weighted += mae.at(k) * static_cast<double>(counts.at(k));
      }
      EXPECT_NEAR(weighted / static_cast<double>(n), accuracy(p, g), 1e-12);
      EXPECT_NEAR(mae_weighted / static_cast<double>(n), mae_boundary(p, g), 1e-12);
    }
  }
}

TEST(Metrics, MaeIsZeroIffEqual) {
  std::vector<int> a{1, 5, 9};
  EXPECT_EQ(mae_boundary(a, a), 0.0);
  auto b = a;
  b[1] = 6;
  EXPECT_GT(mae_boundary(a, b), 0.0);
  EXPECT_EQ(mae_boundary(a, b), mae_boundary(b, a));
}

TEST(Buckets, EdgesAreHalfOpen) {
  const std::vector<int> counts{0, 249, 250, 999, 1000, 4999, 5000, 12000};
  const auto keys = length_buckets(counts);
  EXPECT_EQ(keys, (std::vector<std::string>{"[0,250)", "[0,250)", "[250,500)", "[500,1000)", "[1000,1500)",
                                            "[2500,5000)", ">=5000", ">=5000"}));
  const std::vector<int> edges{10, 20};
  EXPECT_EQ(bucket_key(3, edges), "<10");
  EXPECT_EQ(bucket_key(10, edges), "[10,20)");
  EXPECT_THROW(length_buckets(counts, std::vector<int>{5, 5}), Error);
  EXPECT_THROW(length_buckets(counts, std::vector<int>{}), Error);
}

TEST(Confusion, RowsAreGold) {
  const auto m = confusion_matrix(std::vector<int>{0, 1, 1, 2}, std::vector<int>{0, 0, 1, 2}, 3);
  EXPECT_EQ(m[0][1], 1u);
  EXPECT_EQ(m[1][0], 0u);
  EXPECT_EQ(m[2][2], 1u);
  EXPECT_THROW(confusion_matrix(std::vector<int>{3}, std::vector<int>{0}, 3), Error);
}

TEST(Report, ClassificationFields) {
  const std::vector<int> p{0, 1, 1, 0}, g{0, 1, 0, 0}, lens{10, 300, 300, 6000};
  const std::vector<std::string> gen{"human", "chatGPT", "cohere", "human"};
  const auto r = classification_report(Task::AMono, p, g, gen, lens);
  EXPECT_EQ(r.task, "A-mono");
  EXPECT_EQ(r.metric, "accuracy");
  EXPECT_EQ(r.count, 4u);
  EXPECT_DOUBLE_EQ(r.overall, 0.75);
  EXPECT_DOUBLE_EQ(r.by_generator.at("cohere"), 0.0);
  EXPECT_DOUBLE_EQ(r.by_length.at("[250,500)"), 0.5);
  EXPECT_EQ(r.prediction_counts.at("1"), 2u);
  EXPECT_EQ(r.confusion[0][1], 1u);
}

TEST(Report, BoundaryUsesMae) {
  const std::vector<int> p{3, 5}, g{7, 5}, lens{20, 40};
  const std::vector<std::string> gen{"gpt", "gpt"};
  const auto r = boundary_report(p, g, gen, lens);
  EXPECT_EQ(r.metric, "mae");
  EXPECT_DOUBLE_EQ(r.overall, 2.0);
  EXPECT_DOUBLE_EQ(r.by_generator.at("gpt"), 2.0);
  EXPECT_TRUE(r.confusion.empty());
}

TEST(Report, JsonRoundTrip) {
  const std::vector<int> p{0, 1, 5, 2}, g{0, 2, 5, 2}, lens{1, 2, 3, 400};
  const std::vector<std::string> gen{"a", "b", "c", "a"};
  const auto r = classification_report(Task::B, p, g, gen, lens);
  EXPECT_EQ(EvalReport::from_json(nlohmann::json::parse(r.to_json().dump())), r);
}

TEST(Render, WritesReportAndCharts) {
  const auto dir = oracle::scratch_dir("render");
  const std::vector<int> p{0, 1, 1}, g{0, 1, 0}, lens{10, 300, 3000};
  const std::vector<std::string> gen{"human", "chatGPT", "cohere"};
  const auto files = render_report(classification_report(Task::AMono, p, g, gen, lens), dir / "sub");
  EXPECT_TRUE(std::filesystem::exists(files.report));
  ASSERT_EQ(files.charts.size(), 2u);
  for (const auto& c : files.charts) {
    const auto bytes = slurp(c);
    ASSERT_GT(bytes.size(), 8u);
    EXPECT_EQ(bytes.substr(1, 3), "PNG");
    EXPECT_NE(bytes.find("Title"), std::string::npos);
  }
  EXPECT_NE(slurp(files.charts[0]).find("chatGPT="), std::string::npos);
  EXPECT_NE(slurp(files.charts[1]).find("[0,250)="), std::string::npos);
  EXPECT_EQ(EvalReport::from_json(nlohmann::json::parse(slurp(files.report))).overall, 2.0 / 3);
}

TEST(Render, EmptyBreakdownEmitsNoChart) {
  const auto dir = oracle::scratch_dir("render-empty");
  EvalReport r;
  r.task = "B";
  const auto files = render_report(r, dir);
  EXPECT_TRUE(std::filesystem::exists(files.report));
  EXPECT_TRUE(files.charts.empty());
  EXPECT_FALSE(std::filesystem::exists(dir / "by_generator.png"));
}
