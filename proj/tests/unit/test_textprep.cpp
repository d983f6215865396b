#include <algorithm>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "mgtd/textprep.hpp"

using namespace mgtd;
using namespace mgtd::textprep;

namespace {

std::vector<TokenId> iota_ids(int n) {
  std::vector<TokenId> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

TEST(Preprocess, NoneIsIdentity) {
  EXPECT_EQ(preprocess("AbC!", PreprocessLevel::None), "AbC!");
  const std::string messy = "  Tabs\tand\n newlines <pad> 42 http://x.y ";
  EXPECT_EQ(preprocess(messy, PreprocessLevel::None), messy);
}

TEST(Preprocess, Light) {
  EXPECT_EQ(preprocess("AbC! 9", PreprocessLevel::Light), "abc");
  EXPECT_EQ(preprocess("Hello,   World 2024!!", PreprocessLevel::Light), "hello world");
  EXPECT_EQ(preprocess("ÉCOLE Straße", PreprocessLevel::Light), "école straße");
}

TEST(Preprocess, Heavy) {
  EXPECT_EQ(preprocess("<pad> see http://x.y", PreprocessLevel::Heavy), "see");
  EXPECT_EQ(preprocess("<s>I have 3 cats</s>", PreprocessLevel::Heavy), "I have three cats");
  EXPECT_EQ(preprocess("mail me@example.com now", PreprocessLevel::Heavy), "mail now");
  EXPECT_EQ(preprocess("pi is 3.14, not 3", PreprocessLevel::Heavy), "pi is 3.14 not three");
  EXPECT_EQ(preprocess("year 1999 www.site.org", PreprocessLevel::Heavy), "year one thousand nine hundred ninety nine");
}

TEST(NumberWords, HandValues) {
  EXPECT_EQ(number_to_words("0"), "zero");
  EXPECT_EQ(number_to_words("13"), "thirteen");
  EXPECT_EQ(number_to_words("40"), "forty");
  EXPECT_EQ(number_to_words("105"), "one hundred five");
  EXPECT_EQ(number_to_words("2000001"), "two million one");
  EXPECT_FALSE(number_to_words("12a").has_value());
  EXPECT_FALSE(number_to_words("").has_value());
}

TEST(Truncate, HeadOnlyKeepsFirst510) {
  const auto ids = iota_ids(1000);
  const auto out = truncate(ids, TruncationStrategy::head_only());
  ASSERT_EQ(out.size(), 510u);
  EXPECT_TRUE(std::equal(out.begin(), out.end(), ids.begin()));
}

TEST(Truncate, TailOnlyKeepsLast510) {
  const auto ids = iota_ids(1000);
  const auto out = truncate(ids, TruncationStrategy::tail_only());
  ASSERT_EQ(out.size(), 510u);
  EXPECT_EQ(out.front(), 490);
  EXPECT_EQ(out.back(), 999);
}

TEST(Truncate, HeadAndTail) {
  const auto ids = iota_ids(1000);
  const auto out = truncate(ids, TruncationStrategy::head_and_tail());
  std::vector<TokenId> expected(ids.begin(), ids.begin() + 128);
  expected.insert(expected.end(), ids.begin() + 616, ids.end());
  EXPECT_EQ(out, expected);
  EXPECT_THROW(truncate(ids, TruncationStrategy::head_and_tail(), 510), Error);
  EXPECT_EQ(truncate(ids, TruncationStrategy::head_and_tail(), 512), expected);
}

TEST(Truncate, UnderBudgetUnchanged) {
  const auto ids = iota_ids(300);
  for (const auto& s : {TruncationStrategy::head_only(), TruncationStrategy::tail_only(), TruncationStrategy::head_and_tail()})
    EXPECT_EQ(truncate(ids, s), ids);
}

TEST(Truncate, Errors) {
  const auto ids = iota_ids(10);
  EXPECT_THROW(truncate(ids, TruncationStrategy::hierarchical(PoolMode::Mean)), Error);
  EXPECT_THROW(truncate(ids, TruncationStrategy::head_only(), 0), Error);
}

TEST(Truncate, LengthAndPrefixSuffixProperties) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const int L = static_cast<int>(rng() % 1500);
    const int budget = 1 + static_cast<int>(rng() % 700);
    const auto ids = iota_ids(L);
    const auto head = truncate(ids, TruncationStrategy::head_only(), budget);
    const auto tail = truncate(ids, TruncationStrategy::tail_only(), budget);
    ASSERT_EQ(head.size(), static_cast<std::size_t>(std::min(L, budget)));
    ASSERT_EQ(tail.size(), head.size());
    EXPECT_TRUE(std::equal(head.begin(), head.end(), ids.begin()));
    EXPECT_TRUE(std::equal(tail.rbegin(), tail.rend(), ids.rbegin()));
    const auto ht = truncate(ids, TruncationStrategy::head_and_tail());
    EXPECT_LE(ht.size(), 512u);
  }
}

TEST(Chunk, Examples) {
  const auto a = chunk(iota_ids(1024));
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[0].size(), 512u);
  EXPECT_EQ(a[1].size(), 512u);
  const auto b = chunk(iota_ids(512));
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(b[0], iota_ids(512));
  const auto c = chunk(iota_ids(700));
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[0].size(), 512u);
  EXPECT_EQ(c[1].size(), 188u);
  EXPECT_THROW(chunk({}), Error);
  EXPECT_THROW(chunk(iota_ids(3), 0), Error);
}

TEST(Chunk, ConcatenationIsIdentity) {
  for (int L = 1; L <= 1200; L += 37) {
    for (int len : {1, 7, 512}) {
      const auto ids = iota_ids(L);
      const auto parts = chunk(ids, len);
      EXPECT_EQ(parts.size(), static_cast<std::size_t>((L + len - 1) / len));
      std::vector<TokenId> joined;
      for (const auto& p : parts) joined.insert(joined.end(), p.begin(), p.end());
      EXPECT_EQ(joined, ids);
    }
  }
}

TEST(Pool, HandArithmetic) {
  const std::vector<Eigen::VectorXd> v{Eigen::Vector2d(1, 2), Eigen::Vector2d(3, 0)};
  EXPECT_EQ(pool_chunks(v, PoolMode::Mean), Eigen::VectorXd(Eigen::Vector2d(2, 1)));
  EXPECT_EQ(pool_chunks(v, PoolMode::Max), Eigen::VectorXd(Eigen::Vector2d(3, 2)));
  const std::vector<Eigen::VectorXd> one{Eigen::Vector3d(1, -2, 5)};
  EXPECT_EQ(pool_chunks(one, PoolMode::Mean), one[0]);
  EXPECT_EQ(pool_chunks(one, PoolMode::Max), one[0]);
  EXPECT_THROW(pool_chunks({Eigen::Vector2d(1, 2), Eigen::Vector3d(1, 2, 3)}, PoolMode::Mean), Error);
  EXPECT_THROW(pool_chunks({}, PoolMode::Max), Error);
}

TEST(Pool, Properties) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::VectorXd v = Eigen::VectorXd::Random(6);
    const std::vector<Eigen::VectorXd> copies(1 + trial % 7, v);
    EXPECT_LE((pool_chunks(copies, PoolMode::Mean) - v).cwiseAbs().maxCoeff(), 1e-12);
    std::vector<Eigen::VectorXd> many;
    for (int i = 0; i < 5; ++i) many.push_back(Eigen::VectorXd::Random(6));
    const auto m = pool_chunks(many, PoolMode::Max);
    std::shuffle(many.begin(), many.end(), rng);
    EXPECT_EQ(pool_chunks(many, PoolMode::Max), m);
  }
}

TEST(Pool, BackwardMatchesFiniteDifferences) {
  const std::vector<Eigen::VectorXd> v{Eigen::Vector3d(1, 5, -1), Eigen::Vector3d(2, 0, -3), Eigen::Vector3d(0, 1, 4)};
  const Eigen::VectorXd g = Eigen::Vector3d(1, -2, 0.5);
  for (auto mode : {PoolMode::Mean, PoolMode::Max}) {
    const auto grads = pool_chunks_backward(v, mode, g);
    for (std::size_t c = 0; c < v.size(); ++c) {
      for (Eigen::Index d = 0; d < 3; ++d) {
        auto up = v, down = v;
        up[c](d) += 1e-6;
        down[c](d) -= 1e-6;
        const double fd = (g.dot(pool_chunks(up, mode)) - g.dot(pool_chunks(down, mode))) / 2e-6;
        EXPECT_NEAR(grads[c](d), fd, 1e-6);
      }
    }
  }
}

TEST(Names, RoundTrip) {
  for (auto k : {TruncationKind::HeadOnly, TruncationKind::TailOnly, TruncationKind::HeadAndTail, TruncationKind::Hierarchical})
    EXPECT_EQ(parse_truncation(truncation_name(k)), k);
  for (auto l : {PreprocessLevel::None, PreprocessLevel::Light, PreprocessLevel::Heavy}) EXPECT_EQ(parse_level(level_name(l)), l);
  EXPECT_THROW(parse_truncation("middle"), Error);
}
