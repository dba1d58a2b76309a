#include <gtest/gtest.h>

#include <thread>

#include "dfw/game.hpp"
#include "dfw/pipeline.hpp"
#include "dfw/sim.hpp"
#include "support.hpp"

using namespace dfw;
namespace pr = dfw::protocol;

namespace {

std::shared_ptr<const candidate_bank> bank_of(const synthetic_world& w, const std::string& prefix, std::size_t n = 30) {
  std::vector<std::string> texts;
  for (const auto& p : w.seed_pairs(n, 1)) texts.push_back(p.target);
  auto b = std::make_shared<candidate_bank>(candidate_bank::from_texts(texts, prefix));
  b->vet(w.safety());
  return b;
}

std::shared_ptr<const model_t> model_of(const synthetic_world& w, std::uint64_t seed = 1) {
  poly_lite_config c;
  c.embed_dim = 16;
  c.num_codes = 3;
  c.seed = seed;
  c.init_scale = 0.5;
  return std::make_shared<const model_t>(c, vocab_for(w.seed_pairs(30, 1)));
}

struct rig {
  synthetic_world w;
  std::unique_ptr<game_server> server;

  explicit rig(game_config cfg = {}, double alpha = 0.0) {
    server = std::make_unique<game_server>(w.catalog(), w.safety(), cfg);
    model_variant v;
    v.variant_id = "A";
    server->redeploy({{v, deployment::make("A", model_of(w), bank_of(w, "old"), {alpha})}});
  }

  std::vector<pr::server_message> send(const std::string& sid, pr::client_message m) { return server->handle(sid, m); }

  // a line the DM will accept for the current human character
  std::string line(const std::string& sid, rng_t& rng) {
    const auto ep = *server->current_episode(sid);
    return w.wild_utterance(w.character_index(ep.human_character.id), w.location_index(ep.where.id), rng);
  }

  // plays the open episode to its end; returns the last batch of messages
  std::vector<pr::server_message> finish(const std::string& sid, rng_t& rng) {
    std::vector<pr::server_message> out;
    while (server->phase(sid) == session_phase::in_episode) out = send(sid, pr::turn{line(sid, rng)});
    return out;
  }
};

template <class T>
const T* find_msg(const std::vector<pr::server_message>& ms) {
  for (const auto& m : ms)
    if (auto* p = std::get_if<T>(&m)) return p;
  return nullptr;
}

}  // namespace

TEST(game, join_starts_with_one_model_turn) {
  rig r;
  const auto sid = r.server->create_session();
  const auto ms = r.send(sid, pr::join{});
  ASSERT_EQ(ms.size(), 2u);
  EXPECT_TRUE(std::holds_alternative<pr::assigned>(ms[0]));
  EXPECT_TRUE(std::holds_alternative<pr::model_turn>(ms[1]));
  const auto ep = *r.server->current_episode(sid);
  ASSERT_EQ(ep.turns.size(), 1u);
  EXPECT_EQ(ep.turns[0].who, speaker::model);
  EXPECT_NE(ep.human_character.id, ep.model_character.id);
}

TEST(game, human_may_speak_first_when_configured) {
  game_config cfg;
  cfg.model_speaks_first = false;
  rig r(cfg);
  const auto sid = r.server->create_session();
  EXPECT_EQ(r.send(sid, pr::join{}).size(), 1u);
  EXPECT_TRUE(r.server->current_episode(sid)->turns.empty());
  rng_t rng(1);
  r.finish(sid, rng);
  const auto ep = *r.server->current_episode(sid);
  EXPECT_EQ(ep.turns.size(), 12u);
  EXPECT_EQ(ep.turns.back().who, speaker::model);
}

TEST(game, sixth_human_turn_ends_episode) {
  rig r;
  const auto sid = r.server->create_session();
  r.send(sid, pr::join{});
  rng_t rng(2);
  for (int k = 0; k < 5; ++k) {
    const auto ms = r.send(sid, pr::turn{r.line(sid, rng)});
    ASSERT_NE(find_msg<pr::stars>(ms), nullptr);
    EXPECT_EQ(find_msg<pr::episode_end>(ms), nullptr);
  }
  const auto ms = r.send(sid, pr::turn{r.line(sid, rng)});
  const auto* end = find_msg<pr::episode_end>(ms);
  ASSERT_NE(end, nullptr);
  const auto ep = *r.server->current_episode(sid);
  EXPECT_TRUE(ep.complete);
  EXPECT_EQ(end->quality, *ep.quality);
  EXPECT_GE(end->quality, 6);
  EXPECT_LE(end->quality, 24);
  EXPECT_EQ(end->badges, award_badges(end->quality));
  EXPECT_EQ(end->options, pr::end_options());
  EXPECT_EQ(validate_episode(ep), "");
}

TEST(game, blocklisted_turn_is_rejected_without_change) {
  rig r;
  const auto sid = r.server->create_session();
  r.send(sid, pr::join{});
  const auto before = *r.server->current_episode(sid);
  const auto ms = r.send(sid, pr::turn{"you are an IDIOT"});
  ASSERT_EQ(ms.size(), 1u);
  EXPECT_TRUE(std::holds_alternative<pr::safety_rejected>(ms[0]));
  EXPECT_EQ(*r.server->current_episode(sid), before);
  EXPECT_EQ(r.server->safety_rejections(), 1u);
  const auto empty = r.send(sid, pr::turn{"   "});
  ASSERT_NE(find_msg<pr::error_msg>(empty), nullptr);
  EXPECT_EQ(*r.server->current_episode(sid), before);
}

TEST(game, reply_is_top_ranked_candidate_offline) {
  rig r({}, 0.7);
  const auto sid = r.server->create_session();
  r.send(sid, pr::join{});
  rng_t rng(3);
  r.finish(sid, rng);
  const auto ep = *r.server->current_episode(sid);
  const auto dep = r.server->pool().deployment_of("A");
  std::set<std::string> used;
  for (std::size_t k = 0; k < ep.turns.size(); ++k) {
    if (ep.turns[k].who != speaker::model) continue;
    const auto ranked = rank_candidates(*dep->model, context_for(ep, speaker::model, k), dep->bank, {0.7}, used);
    EXPECT_EQ(*ep.turns[k].candidate_id, ranked.front().id) << "turn " << k;
    EXPECT_EQ(ep.turns[k].text, (*dep->bank.bank)[ranked.front().index].text);
    used.insert(ranked.front().id);
  }
}

TEST(game, stars_match_offline_acting_score) {
  rig r;
  const auto sid = r.server->create_session();
  r.send(sid, pr::join{});
  rng_t rng(4);
  r.finish(sid, rng);
  const auto ep = *r.server->current_episode(sid);
  const auto dm = r.server->dm();
  const auto t = r.server->config().thresholds;
  for (std::size_t k = 0; k < ep.turns.size(); ++k)
    if (ep.turns[k].who == speaker::human) {
      EXPECT_EQ(*ep.turns[k].stars,
                acting_score(*dm->model, context_for(ep, speaker::human, k), ep.turns[k].text, dm->bank, t).stars);
    }
}

TEST(game, end_game_closes_without_continue) {
  rig r;
  const auto sid = r.server->create_session();
  r.send(sid, pr::join{});
  rng_t rng(5);
  r.finish(sid, rng);
  const auto ms = r.send(sid, pr::choice{"end_game"});
  ASSERT_NE(find_msg<pr::leaderboard>(ms), nullptr);
  EXPECT_EQ(r.server->phase(sid), session_phase::closed);
  const auto v = r.server->pool().snapshot()[0];
  EXPECT_EQ(v.episodes_served, 1);
  EXPECT_EQ(v.continues, 0);
  EXPECT_EQ(r.server->board().total(*r.server->player_of(sid)), find_msg<pr::leaderboard>(ms)->top_n[0].total);
}

TEST(game, move_location_keeps_character) {
  rig r;
  const auto sid = r.server->create_session();
  r.send(sid, pr::join{});
  rng_t rng(6);
  for (int i = 0; i < 10; ++i) {
    r.finish(sid, rng);
    const auto prev = *r.server->current_episode(sid);
    r.send(sid, pr::choice{"move_location"});
    const auto next = *r.server->current_episode(sid);
    EXPECT_EQ(next.human_character, prev.human_character);
    EXPECT_NE(next.where.id, prev.where.id);
    EXPECT_NE(next.model_character.id, prev.model_character.id);
    EXPECT_NE(next.episode_id, prev.episode_id);
  }
  EXPECT_EQ(r.server->pool().snapshot()[0].continues, 10);
}

TEST(game, wait_new_partner_keeps_character_and_location) {
  rig r;
  const auto sid = r.server->create_session();
  r.send(sid, pr::join{});
  rng_t rng(7);
  r.finish(sid, rng);
  const auto prev = *r.server->current_episode(sid);
  r.send(sid, pr::choice{"wait_new_partner"});
  const auto next = *r.server->current_episode(sid);
  EXPECT_EQ(next.human_character, prev.human_character);
  EXPECT_EQ(next.where, prev.where);
  EXPECT_NE(next.model_character.id, prev.model_character.id);
}

TEST(game, new_pair_counts_as_continue) {
  rig r;
  const auto sid = r.server->create_session();
  r.send(sid, pr::join{});
  rng_t rng(8);
  r.finish(sid, rng);
  const auto ms = r.send(sid, pr::choice{"new_pair"});
  EXPECT_NE(find_msg<pr::assigned>(ms), nullptr);
  EXPECT_EQ(r.server->pool().snapshot()[0].continues, 1);
  EXPECT_EQ(r.server->current_episode(sid)->turns.size(), 1u);
}

TEST(game, disconnect_logs_incomplete_episode) {
  const auto dir = testing_support::scratch_dir("disconnect");
  rig r;
  r.server->open_log((dir / "log.jsonl").string());
  const auto sid = r.server->create_session();
  r.send(sid, pr::join{});
  rng_t rng(9);
  r.send(sid, pr::turn{r.line(sid, rng)});
  r.server->disconnect(sid);
  EXPECT_FALSE(r.server->has_session(sid));
  const auto logged = read_episode_log((dir / "log.jsonl").string()).episodes;
  ASSERT_EQ(logged.size(), 1u);
  EXPECT_FALSE(logged[0].complete);
  EXPECT_FALSE(logged[0].choice.has_value());
  EXPECT_EQ(logged[0].turns.size(), 3u);
  EXPECT_EQ(validate_episode(logged[0]), "");
  const auto v = r.server->pool().snapshot()[0];
  EXPECT_EQ(v.episodes_served, 1);
  EXPECT_EQ(v.continues, 0);
}

TEST(game, protocol_errors) {
  rig r;
  const auto sid = r.server->create_session();
  auto code = [](const std::vector<pr::server_message>& ms) {
    const auto* e = find_msg<pr::error_msg>(ms);
    return e ? e->code : std::string();
  };
  EXPECT_EQ(code(r.send(sid, pr::turn{"hello"})), "out_of_turn");
  EXPECT_EQ(code(r.send(sid, pr::choice{"new_pair"})), "out_of_turn");
  r.send(sid, pr::join{});
  EXPECT_EQ(code(r.send(sid, pr::join{})), "out_of_turn");
  EXPECT_EQ(code(r.server->handle("nope", pr::join{})), "unknown_session");
  rng_t rng(10);
  r.finish(sid, rng);
  EXPECT_EQ(code(r.send(sid, pr::choice{"dance"})), "bad_choice");
  EXPECT_EQ(code(r.send(sid, pr::turn{"more"})), "out_of_turn");
  const auto bad = r.server->handle_json(sid, json{{"type", "shout"}});
  ASSERT_EQ(bad.size(), 1u);
  EXPECT_EQ(bad[0]["code"], "unknown_type");
}

TEST(game, concurrent_players_are_independent) {
  const auto dir = testing_support::scratch_dir("concurrent");
  rig r;
  model_variant b;
  b.variant_id = "B";
  model_variant a;
  a.variant_id = "A";
  r.server->redeploy({{a, r.server->pool().deployment_of("A")},
                      {b, deployment::make("B", model_of(r.w, 2), bank_of(r.w, "bb"), {})}});
  r.server->open_log((dir / "log.jsonl").string());
  std::vector<std::thread> ts;
  for (int t = 0; t < 8; ++t)
    ts.emplace_back([&, t] {
      sim_policy p;
      p.seed = static_cast<std::uint64_t>(t);
      sim_player player(r.w, p);
      const auto sid = r.server->create_session();
      play_session(r.w, player, loopback(*r.server, sid), 4);
      r.server->disconnect(sid);
    });
  for (auto& t : ts) t.join();
  const auto logged = read_episode_log((dir / "log.jsonl").string()).episodes;
  std::set<std::string> ids;
  std::int64_t stars = 0;
  for (const auto& ep : logged) {
    EXPECT_EQ(validate_episode(ep), "");
    EXPECT_TRUE(ids.insert(ep.episode_id).second);
    stars += *ep.quality;
    // replies come from the variant the episode was assigned
    const std::string prefix = ep.variant_id == "A" ? "old" : "bb";
    for (const auto& t : ep.turns)
      if (t.candidate_id) {
        EXPECT_EQ(t.candidate_id->rfind(prefix, 0), 0u);
      }
  }
  EXPECT_EQ(static_cast<std::int64_t>(logged.size()), r.server->pool().total_served());
  std::int64_t board = 0;
  for (const auto& row : r.server->board().top()) board += row.total;
  EXPECT_EQ(board, stars);
}

TEST(game, redeploy_mid_episode_keeps_old_snapshot) {
  rig r;
  const auto sid = r.server->create_session();
  r.send(sid, pr::join{});
  rng_t rng(11);
  r.send(sid, pr::turn{r.line(sid, rng)});
  model_variant v;
  v.variant_id = "N";
  r.server->redeploy({{v, deployment::make("N", model_of(r.w, 3), bank_of(r.w, "new"), {})}});
  r.finish(sid, rng);
  const auto ep = *r.server->current_episode(sid);
  EXPECT_EQ(ep.variant_id, "A");
  for (const auto& t : ep.turns)
    if (t.candidate_id) {
      EXPECT_EQ(t.candidate_id->rfind("old", 0), 0u);
    }
  r.send(sid, pr::choice{"new_pair"});
  const auto next = *r.server->current_episode(sid);
  EXPECT_EQ(next.variant_id, "N");
  EXPECT_EQ(next.turns[0].candidate_id->rfind("new", 0), 0u);
  const auto snap = r.server->pool().snapshot();
  ASSERT_EQ(snap.size(), 2u);
  EXPECT_FALSE(snap[0].active);
  EXPECT_EQ(snap[0].episodes_served, 1);
  EXPECT_EQ(snap[0].continues, 1);  // outcome lands on the retired variant
  EXPECT_EQ(snap[1].episodes_served, 1);
  EXPECT_EQ(snap[1].continues, 0);
}

TEST(game, shutdown_flushes_all_sessions) {
  const auto dir = testing_support::scratch_dir("shutdown");
  rig r;
  r.server->open_log((dir / "log.jsonl").string());
  rng_t rng(12);
  for (int i = 0; i < 3; ++i) {
    const auto sid = r.server->create_session();
    r.send(sid, pr::join{});
    if (i == 2) r.finish(sid, rng);
  }
  r.server->shutdown();
  EXPECT_EQ(r.server->session_count(), 0u);
  const auto logged = read_episode_log((dir / "log.jsonl").string()).episodes;
  ASSERT_EQ(logged.size(), 3u);
  int complete = 0;
  for (const auto& ep : logged) {
    EXPECT_FALSE(ep.choice.has_value());
    complete += ep.complete ? 1 : 0;
  }
  EXPECT_EQ(complete, 1);
}

// property: arbitrary message streams never break episode invariants
TEST(game, fuzzed_message_streams) {
  const auto dir = testing_support::scratch_dir("fuzz");
  rig r;
  r.server->open_log((dir / "log.jsonl").string());
  rng_t rng(13);
  std::vector<std::string> sids;
  for (int i = 0; i < 6; ++i) sids.push_back(r.server->create_session());
  const std::vector<std::string> options = {"move_location", "wait_new_partner", "new_pair", "end_game", "bogus"};
  for (int step = 0; step < 3000; ++step) {
    const auto& sid = sids[uniform_index(rng, sids.size())];
    const auto roll = uniform_index(rng, 10);
    if (roll == 0) {
      r.send(sid, pr::join{});
    } else if (roll == 1) {
      r.send(sid, pr::choice{options[uniform_index(rng, options.size())]});
    } else if (roll == 2) {
      r.send(sid, pr::turn{"shut up"});
    } else if (roll == 3 && uniform01(rng) < 0.05) {
      r.server->disconnect(sid);
    } else if (r.server->phase(sid) == session_phase::in_episode) {
      r.send(sid, pr::turn{r.line(sid, rng)});
    } else {
      r.send(sid, pr::turn{"hello"});
    }
    if (auto ep = r.server->current_episode(sid)) {
      ASSERT_TRUE(turns_alternate(*ep));
      ASSERT_LE(ep->turns.size(), 12u);
    }
  }
  r.server->shutdown();
  const auto logged = read_episode_log((dir / "log.jsonl").string()).episodes;
  EXPECT_GT(logged.size(), 0u);
  for (const auto& ep : logged) EXPECT_EQ(validate_episode(ep), "");
  EXPECT_EQ(static_cast<std::int64_t>(logged.size()), r.server->pool().total_served());
}

TEST(game, recover_restores_counters_and_sequence) {
  const auto dir = testing_support::scratch_dir("recover");
  const auto path = (dir / "log.jsonl").string();
  std::vector<std::string> ids_before;
  {
    rig r;
    r.server->open_log(path);
    sim_population players(r.w, sim_policy{}, 4);
    players.play(*r.server, 10);
    r.server->shutdown();
  }
  const auto logged = read_episode_log(path).episodes;
  rig again;
  again.server->recover(logged);
  const auto v = again.server->pool().snapshot()[0];
  const auto oracle = testing_support::replay_oracle(path);
  EXPECT_EQ(v.episodes_served, oracle.variants.at("A").first);
  EXPECT_EQ(v.continues, oracle.variants.at("A").second);
  for (const auto& [p, s] : oracle.stars) EXPECT_EQ(again.server->board().total(p), s);
  EXPECT_EQ(again.server->episodes_started(), logged.size());
}

TEST(catalog, validation) {
  scenario_catalog c;
  c.locations = {{"l", "hall", "a hall"}};
  c.characters = {{"a", "ann", "i sing"}, {"b", "bob", "i dig"}};
  EXPECT_NO_THROW(c.validate(blocklist{}));
  auto dup = c;
  dup.characters.push_back({"a", "again", "x"});
  EXPECT_THROW(dup.validate(blocklist{}), error);
  auto empty = c;
  empty.locations[0].description = " ";
  EXPECT_THROW(empty.validate(blocklist{}), error);
  EXPECT_THROW(c.validate(blocklist({"dig"})), error);
  EXPECT_EQ(json(c).get<scenario_catalog>().characters, c.characters);
}
