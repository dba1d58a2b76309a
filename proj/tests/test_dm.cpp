#include <gtest/gtest.h>

#include <map>
#include <random>
#include <thread>

#include "dfw/dm.hpp"
#include "support.hpp"

using namespace dfw;

TEST(stars, fixed_thresholds) {
  const star_thresholds t;
  EXPECT_EQ(t.stars_for_rank(1), 4);
  EXPECT_EQ(t.stars_for_rank(50), 4);
  EXPECT_EQ(t.stars_for_rank(100), 4);
  EXPECT_EQ(t.stars_for_rank(101), 3);
  EXPECT_EQ(t.stars_for_rank(1000), 3);
  EXPECT_EQ(t.stars_for_rank(1500), 2);
  EXPECT_EQ(t.stars_for_rank(2000), 2);
  EXPECT_EQ(t.stars_for_rank(5000), 1);
}

TEST(stars, proportional_thresholds_scale_and_stay_ordered) {
  star_thresholds t;
  t.proportional_mode = true;
  const auto full = t.effective(reference_bank_size);
  EXPECT_EQ(full.four_star_rank, 100);
  EXPECT_EQ(full.two_star_rank, 2000);
  const auto small = t.effective(reference_bank_size / 100);
  EXPECT_EQ(small.four_star_rank, 1);
  EXPECT_EQ(small.three_star_rank, 10);
  EXPECT_EQ(small.two_star_rank, 20);
  const auto tiny = t.effective(3);
  EXPECT_LT(tiny.four_star_rank, tiny.three_star_rank);
  EXPECT_LT(tiny.three_star_rank, tiny.two_star_rank);
  star_thresholds bad;
  bad.three_star_rank = 50;
  EXPECT_THROW(bad.effective(10), error);
}

// property: stars never increase as rank worsens
TEST(stars, monotone_in_rank) {
  const star_thresholds t;
  int prev = 4;
  for (std::int64_t r = 1; r < 3000; ++r) {
    const int s = t.stars_for_rank(r);
    EXPECT_LE(s, prev);
    EXPECT_GE(s, 1);
    prev = s;
  }
}

namespace {

// scores a candidate by how many context tokens it repeats
struct overlap_scorer {
  using context_state = token_list;
  using candidate_state = token_list;
  vocabulary v = build_vocab({"the dragon guards gold cave"});
  context_state encode_context(const token_list& t) const { return t; }
  candidate_state encode_candidate(std::string_view s) const { return tokenize(s); }
  double score(const context_state& c, const candidate_state& u) const {
    double n = 0;
    for (const auto& a : u) n += std::count(c.begin(), c.end(), a);
    return n;
  }
  const vocabulary& vocab() const { return v; }
};

}  // namespace

TEST(acting_score, human_ranked_first_gets_four_stars) {
  std::vector<std::string> texts;
  for (int i = 0; i < 500; ++i) texts.push_back("filler " + std::to_string(i));
  auto bank = std::make_shared<candidate_bank>(candidate_bank::from_texts(texts));
  bank->vet(blocklist{});
  const overlap_scorer s;
  const encoded_bank<overlap_scorer> enc(s, bank);
  const auto r = acting_score(s, tokenize("dragon gold cave"), "the dragon guards gold", enc, star_thresholds{});
  EXPECT_EQ(r.rank, 1);
  EXPECT_EQ(r.stars, 4);
}

TEST(acting_score, human_loses_ties_and_empty_text_is_last) {
  std::vector<std::string> texts;
  for (int i = 0; i < 150; ++i) texts.push_back("gold " + std::to_string(i));
  auto bank = std::make_shared<candidate_bank>(candidate_bank::from_texts(texts));
  bank->vet(blocklist{});
  const overlap_scorer s;
  const encoded_bank<overlap_scorer> enc(s, bank);
  star_thresholds t;
  const auto tie = acting_score(s, tokenize("gold"), "gold", enc, t);
  EXPECT_EQ(tie.rank, 151);
  EXPECT_EQ(tie.stars, 3);
  const auto empty = acting_score(s, tokenize("gold"), "  ", enc, t);
  EXPECT_EQ(empty.stars, 1);
  EXPECT_EQ(empty.rank, 151);
  const auto unknown = acting_score(s, tokenize("gold"), "zzyzx qwop", enc, t);
  EXPECT_EQ(unknown.stars, 1);
  EXPECT_EQ(unknown.rank, 151);
}

TEST(quality, sums_stars) {
  EXPECT_EQ(episode_quality(testing_support::scripted_episode("a", {1, 1, 1, 1, 1, 1})), 6);
  EXPECT_EQ(episode_quality(testing_support::scripted_episode("b", {4, 4, 4, 4, 4, 4})), 24);
  EXPECT_EQ(episode_quality(testing_support::scripted_episode("c", {1, 2, 1})), 4);
}

TEST(badges, thresholds) {
  EXPECT_EQ(award_badges(10), 0);
  EXPECT_EQ(award_badges(11), 1);
  EXPECT_EQ(award_badges(15), 1);
  EXPECT_EQ(award_badges(16), 2);
  EXPECT_EQ(award_badges(24), 2);
  EXPECT_THROW(award_badges(12, {16, 11}), error);
}

TEST(leaderboard, basic_updates) {
  leaderboard b;
  leaderboard_update(b, "new", 4);
  EXPECT_EQ(b.total("new"), 4);
  b.update("p1", 10);
  b.update("p2", 9);
  EXPECT_EQ(b.top(1)[0].player_id, "p1");
  b.update("p2", 2);
  EXPECT_EQ(b.top(1)[0].player_id, "p2");
  EXPECT_EQ(b.total("nobody"), 0);
  EXPECT_THROW(b.update("p1", -1), error);
}

TEST(leaderboard, ties_keep_join_order) {
  leaderboard b;
  b.update("late", 0);
  b.update("early", 5);
  b.update("late", 5);
  const auto top = b.top();
  EXPECT_EQ(top[0].player_id, "late");
  EXPECT_EQ(top[1].player_id, "early");
}

TEST(leaderboard, matches_plain_tally) {
  leaderboard b;
  std::map<std::string, std::int64_t> tally;
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> who(0, 49), stars(0, 24);
  for (int i = 0; i < 1000; ++i) {
    const auto p = "p" + std::to_string(who(rng));
    const int d = stars(rng);
    b.update(p, d);
    tally[p] += d;
  }
  EXPECT_EQ(b.size(), tally.size());
  for (const auto& [p, t] : tally) EXPECT_EQ(b.total(p), t);
  const auto top = b.top();
  for (std::size_t i = 1; i < top.size(); ++i) EXPECT_GE(top[i - 1].total, top[i].total);
}

TEST(leaderboard, concurrent_writers) {
  leaderboard b;
  std::vector<std::thread> ts;
  for (int t = 0; t < 8; ++t)
    ts.emplace_back([&, t] {
      for (int i = 0; i < 500; ++i) b.update("p" + std::to_string(i % 10), t + 1);
    });
  for (auto& t : ts) t.join();
  std::int64_t sum = 0;
  for (const auto& r : b.top()) sum += r.total;
  EXPECT_EQ(sum, 500 * (1 + 2 + 3 + 4 + 5 + 6 + 7 + 8));
}
