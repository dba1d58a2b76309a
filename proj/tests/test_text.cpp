#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "dfw/text.hpp"

using namespace dfw;

TEST(tokenize, punctuation_splits_off) {
  EXPECT_EQ(tokenize("Hello, traveler!"), (token_list{"hello", ",", "traveler", "!"}));
}

TEST(tokenize, empty) { EXPECT_TRUE(tokenize("").empty()); }

TEST(tokenize, apostrophe_clitic) {
  const auto t = tokenize("I'm going to steal your money");
  EXPECT_EQ(t, (token_list{"i", "'m", "going", "to", "steal", "your", "money"}));
  EXPECT_EQ(t.size(), 7u);
}

TEST(tokenize, whitespace_and_case) {
  EXPECT_EQ(tokenize("  A\tB\nc  "), (token_list{"a", "b", "c"}));
  EXPECT_EQ(tokenize("'quoted'"), (token_list{"'", "quoted", "'"}));
}

TEST(vocab, reserved_ids) {
  const auto v = build_vocab({"a b"});
  EXPECT_EQ(v.id("<pad>"), pad_id);
  EXPECT_EQ(v.id("<unk>"), unk_id);
  EXPECT_EQ(v.id("<sep>"), sep_id);
  EXPECT_EQ(v.id("never seen"), unk_id);
  EXPECT_EQ(v.size(), 5);
}

TEST(vocab, df_and_idf) {
  const auto v = build_vocab({"a b", "a"});
  EXPECT_EQ(v.df("a"), 2);
  EXPECT_EQ(v.df("b"), 1);
  EXPECT_DOUBLE_EQ(v.idf("a"), 0.0);
  EXPECT_DOUBLE_EQ(v.idf("b"), std::log(2.0));
}

TEST(vocab, min_freq_drops_rare_tokens) {
  const auto v = build_vocab({"a b", "a"}, 2);
  EXPECT_TRUE(v.contains("a"));
  EXPECT_FALSE(v.contains("b"));
  EXPECT_EQ(v.id("b"), unk_id);
}

TEST(vocab, empty_corpus_is_an_error) { EXPECT_THROW(build_vocab({}), error); }

// property: ids are dense and df never exceeds the document count
TEST(vocab, ids_dense_and_df_bounded) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> w(0, 40), n(1, 8);
  std::vector<std::string> docs;
  for (int d = 0; d < 100; ++d) {
    std::string s;
    for (int k = n(rng); k > 0; --k) s += "w" + std::to_string(w(rng)) + " ";
    docs.push_back(s);
  }
  const auto v = build_vocab(docs);
  for (std::int32_t i = 0; i < v.size(); ++i) {
    EXPECT_EQ(v.id(v.token(i)), i);
    EXPECT_LE(v.df(v.token(i)), v.num_documents());
  }
}

TEST(nidf, extremes_and_hand_example) {
  const auto v = build_vocab({"a b", "a c", "a"});
  EXPECT_DOUBLE_EQ(v.idf("b"), std::log(3.0));
  EXPECT_DOUBLE_EQ(nidf("a", v), 0.0);
  EXPECT_DOUBLE_EQ(nidf("b", v), 1.0);
  EXPECT_DOUBLE_EQ(nidf("c", v), 1.0);
  EXPECT_DOUBLE_EQ(nidf("zzz", v), 1.0);  // unseen
}

TEST(specificity, examples) {
  const auto v = build_vocab({"a b", "a c", "a"});
  EXPECT_DOUBLE_EQ(specificity("b", v), 1.0);
  EXPECT_DOUBLE_EQ(specificity("", v), 0.0);
  EXPECT_DOUBLE_EQ(specificity("a b", v), 0.5);
}

TEST(specificity, order_and_repetition_invariant) {
  const auto v = build_vocab({"a b", "a c", "a", "b d e", "e"});
  EXPECT_DOUBLE_EQ(specificity("a b e", v), specificity("e a b", v));
  EXPECT_DOUBLE_EQ(specificity("a b e", v), specificity("a b e a b e", v));
}

TEST(expression_ratios, identity_is_one) {
  const std::vector<std::string> a{"x y z", "x y"};
  const auto r = expression_ratios(a, a, 1, 100, expression_direction::over);
  ASSERT_EQ(r.rows.size(), 3u);
  for (const auto& row : r.rows) EXPECT_DOUBLE_EQ(row.ratio, 1.0);
}

TEST(expression_ratios, hand_count) {
  const auto r = expression_ratios({"x x x x y"}, {"x y y y y"}, 1, 10, expression_direction::over);
  ASSERT_EQ(r.rows.size(), 2u);
  EXPECT_EQ(r.rows[0].word, "x");
  EXPECT_DOUBLE_EQ(r.rows[0].ratio, 4.0);
  EXPECT_DOUBLE_EQ(r.rows[1].ratio, 0.25);
}

TEST(expression_ratios, stab_at_eight_and_a_half) {
  // "stab" is 17 of 200 tokens in a and 2 of 200 in b
  std::string a, b;
  for (int i = 0; i < 17; ++i) a += "stab ";
  for (int i = 0; i < 183; ++i) a += "the ";
  for (int i = 0; i < 2; ++i) b += "stab ";
  for (int i = 0; i < 198; ++i) b += "the ";
  const auto r = expression_ratios({a}, {b}, 1, 1, expression_direction::over);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.rows[0].word, "stab");
  EXPECT_DOUBLE_EQ(r.rows[0].ratio, 8.5);
}

TEST(expression_ratios, reciprocity_and_ordering) {
  const std::vector<std::string> a{"p q q r r r s", "p p t"}, b{"p q r r s s s", "t t q"};
  const auto ab = expression_ratios(a, b, 1, 100, expression_direction::over);
  const auto ba = expression_ratios(b, a, 1, 100, expression_direction::under);
  ASSERT_EQ(ab.rows.size(), ba.rows.size());
  for (std::size_t i = 0; i < ab.rows.size(); ++i) {
    if (i) {
      EXPECT_GE(ab.rows[i - 1].ratio, ab.rows[i].ratio);
    }
    EXPECT_EQ(ab.rows[i].word, ba.rows[i].word);
    EXPECT_NEAR(ab.rows[i].ratio, 1.0 / ba.rows[i].ratio, 1e-12);
  }
}

TEST(expression_ratios, min_count_and_csv) {
  const auto r = expression_ratios({"a a b"}, {"a b b"}, 2, 10, expression_direction::over);
  ASSERT_EQ(r.rows.size(), 0u);
  std::ostringstream os;
  expression_ratios({"a a b"}, {"a b b"}, 1, 10, expression_direction::over).write_csv(os);
  EXPECT_EQ(os.str().substr(0, os.str().find("\r\n")), "word,ratio,count_a,count_b");
  EXPECT_THROW(expression_ratios({}, {"a"}, 1, 1, expression_direction::over), error);
}
