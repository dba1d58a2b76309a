#include <gtest/gtest.h>

#include <random>

#include "dfw/context.hpp"
#include "dfw/core.hpp"
#include "dfw/json_io.hpp"
#include "support.hpp"

using namespace dfw;
using testing_support::scripted_episode;

TEST(episode, complete_episode_validates) {
  auto ep = scripted_episode("e1", {1, 2, 3, 4, 1, 2});
  EXPECT_TRUE(ep.complete);
  EXPECT_EQ(ep.turns.size(), 12u);
  EXPECT_EQ(*ep.quality, 13);
  EXPECT_EQ(validate_episode(ep), "");
}

TEST(episode, quality_bounds_for_complete_episodes) {
  EXPECT_EQ(*scripted_episode("lo", {1, 1, 1, 1, 1, 1}).quality, 6);
  EXPECT_EQ(*scripted_episode("hi", {4, 4, 4, 4, 4, 4}).quality, 24);
}

TEST(episode, incomplete_episode_quality_is_partial_sum) {
  auto ep = scripted_episode("e2", {1, 2, 1});
  EXPECT_FALSE(ep.complete);
  EXPECT_EQ(*ep.quality, 4);
  EXPECT_EQ(validate_episode(ep), "");
}

TEST(episode, rejects_broken_invariants) {
  auto base = scripted_episode("e3", {2, 2, 2, 2, 2, 2});

  auto a = base;
  a.round_id = 0;
  EXPECT_NE(validate_episode(a), "");

  auto b = base;
  std::swap(b.turns[0], b.turns[1]);
  b.turns[1].who = speaker::human;
  EXPECT_NE(validate_episode(b), "");  // two human turns in a row

  auto c = base;
  c.turns[1].stars = 5;
  c.quality = recompute_quality(c);
  EXPECT_NE(validate_episode(c), "");

  auto d = base;
  d.quality = 99;
  EXPECT_NE(validate_episode(d), "");

  auto e = base;
  e.complete = false;
  EXPECT_NE(validate_episode(e), "");

  auto f = base;
  f.turns[0].candidate_id.reset();
  EXPECT_NE(validate_episode(f), "");

  auto g = base;
  g.turns[0].stars = 3;
  EXPECT_NE(validate_episode(g), "");
}

TEST(episode, enums_parse_back) {
  for (auto c : {end_choice::move_location, end_choice::wait_new_partner, end_choice::new_pair, end_choice::end_game})
    EXPECT_EQ(parse_end_choice(to_string(c)), c);
  EXPECT_THROW(parse_end_choice("fly_away"), error);
  EXPECT_EQ(parse_speaker("model"), speaker::model);
  EXPECT_THROW(parse_speaker("narrator"), error);
  EXPECT_FALSE(is_continue(end_choice::end_game));
  EXPECT_TRUE(is_continue(end_choice::new_pair));
}

// property: random valid episodes survive a JSON round trip unchanged and keep
// their invariants
TEST(episode, json_round_trip_property) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> star(1, 4), len(0, 6), coin(0, 1);
  for (int i = 0; i < 200; ++i) {
    std::vector<int> stars(static_cast<std::size_t>(len(rng)));
    for (auto& s : stars) s = star(rng);
    auto ep = scripted_episode("rt" + std::to_string(i), stars, coin(rng) == 1);
    if (ep.complete && coin(rng)) ep.choice = end_choice::new_pair;
    if (!ep.turns.empty()) ep.turns[0].text += " \"quoted\" \xc3\xa9";
    ASSERT_EQ(validate_episode(ep), "");
    const auto back = json::parse(json(ep).dump()).get<episode>();
    EXPECT_EQ(back, ep);
    EXPECT_EQ(*back.quality, recompute_quality(back));
    EXPECT_TRUE(turns_alternate(back));
  }
}

TEST(episode, rejects_unknown_schema_version) {
  json j = scripted_episode("v", {1});
  j["schema_version"] = 99;
  EXPECT_THROW(j.get<episode>(), error);
}

TEST(training_pair, json_round_trip) {
  training_pair p;
  p.context = {"a dark cave", "i am a bat", "owl", {{"owl", "hello there"}, {"bat", "squeak"}}};
  p.target = "who goes there ?";
  p.source = data_source::wild;
  p.round_id = 2;
  p.quality = 14;
  p.target_author = speaker::model;
  p.episode_id = "ep1";
  EXPECT_EQ(json::parse(json(p).dump()).get<training_pair>(), p);
}

TEST(serialize_context, empty_history_layout) {
  context_bundle b;
  b.location_description = "castle";
  b.self_persona = "a knight";
  const token_list want{"castle", "<sep>", "a", "knight", "<sep>"};
  EXPECT_EQ(serialize_context(b), want);
  EXPECT_EQ(serialize_context(b), serialize_context(b));
}

TEST(serialize_context, custom_separator) {
  context_bundle b{"castle", "a knight", "", {}};
  context_options opt;
  opt.separator = "|";
  EXPECT_EQ(serialize_context(b, opt), (token_list{"castle", "|", "a", "knight", "|"}));
}

namespace {

// builds the full sequence first, then keeps the header and the newest tail
token_list reference_serialize(const context_bundle& b, std::size_t cap) {
  token_list head = tokenize(b.location_description);
  head.push_back("<sep>");
  for (auto& t : tokenize(b.self_persona)) head.push_back(t);
  head.push_back("<sep>");
  token_list full = head;
  for (const auto& h : b.dialogue_history) {
    for (auto& t : tokenize(h.speaker_name)) full.push_back(t);
    full.push_back(":");
    for (auto& t : tokenize(h.text)) full.push_back(t);
  }
  if (full.size() <= cap) return full;
  token_list out = head;
  out.insert(out.end(), full.end() - static_cast<std::ptrdiff_t>(cap - head.size()), full.end());
  return out;
}

}  // namespace

TEST(serialize_context, truncation_matches_reference) {
  context_bundle b{"the castle keep", "i am a knight of the realm", "wizard", {}};
  for (int k = 0; k < 50; ++k)
    b.dialogue_history.push_back({k % 2 ? "knight" : "wizard", "turn number " + std::to_string(k) + " , more words"});
  context_options opt;
  opt.max_context_tokens = 64;
  opt.max_history = 1000;
  const auto got = serialize_context(b, opt);
  EXPECT_EQ(got.size(), 64u);
  EXPECT_EQ(got, reference_serialize(b, 64));
  const auto last = tokenize("turn number 49 , more words");
  EXPECT_TRUE(std::equal(last.rbegin(), last.rend(), got.rbegin()));
}

TEST(serialize_context, history_is_capped) {
  context_bundle b{"hall", "me", "you", {}};
  for (int k = 0; k < 20; ++k) b.dialogue_history.push_back({"x", "w" + std::to_string(k)});
  context_options opt;
  opt.max_history = 3;
  const auto got = serialize_context(b, opt);
  EXPECT_EQ(std::count(got.begin(), got.end(), ":"), 3);
  EXPECT_EQ(got.back(), "w19");
}
