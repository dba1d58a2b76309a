#pragma once

#include <atomic>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "dfw/core.hpp"
#include "dfw/deployment.hpp"
#include "dfw/dm.hpp"
#include "dfw/episode_log.hpp"
#include "dfw/json_io.hpp"
#include "dfw/pool.hpp"
#include "dfw/protocol.hpp"
#include "dfw/rng.hpp"
#include "dfw/safety.hpp"

namespace dfw {

struct scenario_catalog {
  std::vector<location> locations;
  std::vector<character> characters;

  // Unique ids, non-empty texts, nothing the blocklist matches.
  void validate(const blocklist& bl) const {
    std::unordered_set<std::string> ids;
    for (const auto& l : locations) {
      if (!ids.insert("l:" + l.id).second) throw error("duplicate location id '" + l.id + "'");
      if (tokenize(l.description).empty()) throw error("location '" + l.id + "' has an empty description");
      if (bl.matches(l.name) || bl.matches(l.description)) throw error("location '" + l.id + "' fails vetting");
    }
    for (const auto& c : characters) {
      if (!ids.insert("c:" + c.id).second) throw error("duplicate character id '" + c.id + "'");
      if (tokenize(c.persona).empty()) throw error("character '" + c.id + "' has an empty persona");
      if (bl.matches(c.name) || bl.matches(c.persona)) throw error("character '" + c.id + "' fails vetting");
    }
  }

  const character* find_character_by_name(const std::string& name) const {
    for (const auto& c : characters)
      if (c.name == name) return &c;
    return nullptr;
  }
};

inline void to_json(json& j, const scenario_catalog& c) { j = json{{"locations", c.locations}, {"characters", c.characters}}; }
inline void from_json(const json& j, scenario_catalog& c) {
  j.at("locations").get_to(c.locations);
  j.at("characters").get_to(c.characters);
}

inline scenario_catalog load_catalog(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw error("cannot open catalog '" + path + "'");
  return json::parse(in).get<scenario_catalog>();
}

struct game_config {
  bool model_speaks_first = true;
  star_thresholds thresholds{100, 1000, 2000, true, reference_bank_size};
  badge_rule badges;
  std::size_t max_history = 11;
  std::uint64_t seed = 1;
  int round_id = 1;
  std::size_t leaderboard_top_n = 10;
  bool dm_follows_redeploy = true;
};

inline context_bundle context_for(const episode& ep, speaker perspective, std::size_t upto) {
  const bool human = perspective == speaker::human;
  context_bundle b;
  b.location_description = ep.where.description;
  b.self_persona = human ? ep.human_character.persona : ep.model_character.persona;
  b.partner_name = human ? ep.model_character.name : ep.human_character.name;
  for (std::size_t k = 0; k < upto && k < ep.turns.size(); ++k) {
    const auto& t = ep.turns[k];
    b.dialogue_history.push_back(
        {t.who == speaker::human ? ep.human_character.name : ep.model_character.name, t.text});
  }
  return b;
}

enum class session_phase { lobby, in_episode, episode_end, closed };

// Runs the mini-game for many concurrent sessions. Each session is a strictly
// sequential message stream; the log, leaderboard and pool counters are the
// shared state, each behind its own serialized writer.
class game_server {
 public:
  using episode_callback = std::function<void(const episode&)>;

  game_server(scenario_catalog catalog, blocklist safety, game_config cfg)
      : catalog_(std::move(catalog)), safety_(std::move(safety)), cfg_(cfg), round_id_(cfg.round_id) {
    catalog_.validate(safety_);
  }

  ~game_server() = default;

  model_pool& pool() { return pool_; }
  const model_pool& pool() const { return pool_; }
  dfw::leaderboard& board() { return board_; }
  const scenario_catalog& catalog() const { return catalog_; }
  const blocklist& safety() const { return safety_; }
  const game_config& config() const { return cfg_; }
  void set_round(int round_id) { round_id_.store(round_id); }
  int round() const { return round_id_.load(); }

  void open_log(const std::string& path) { log_.open(path); }
  episode_log& log() { return log_; }
  void on_episode_logged(episode_callback cb) {
    std::lock_guard lock(finalize_mu_);
    on_logged_ = std::move(cb);
  }

  void set_dm(std::shared_ptr<const deployment> dm) {
    std::lock_guard lock(dm_mu_);
    dm_ = std::move(dm);
  }
  std::shared_ptr<const deployment> dm() const {
    std::lock_guard lock(dm_mu_);
    return dm_;
  }

  // Swaps the active variants (and the DM when configured to follow). New
  // episodes see the new snapshots; running ones finish on their own.
  void redeploy(std::vector<std::pair<model_variant, std::shared_ptr<const deployment>>> next) {
    auto first = next.empty() ? nullptr : next.front().second;
    pool_.redeploy(std::move(next));
    if (cfg_.dm_follows_redeploy && first) set_dm(first);
  }

  // Rebuilds counters from previously logged episodes; call before serving.
  void recover(const std::vector<episode>& logged) {
    std::unordered_set<std::string> players;
    for (const auto& ep : logged) {
      pool_.replay_episode(ep.variant_id, ep.choice && is_continue(*ep.choice));
      board_.update(ep.player_id, ep.quality.value_or(recompute_quality(ep)));
      players.insert(ep.player_id);
    }
    episode_seq_ = logged.size();
    join_seq_ = players.size();
  }

  std::string create_session() {
    auto s = std::make_shared<session>();
    const std::uint64_t seq = join_seq_.fetch_add(1);
    s->player_id = "p" + hex_token(mix_seed(cfg_.seed ^ 0x706c61796572ULL, seq));
    s->id = "s" + hex_token(mix_seed(cfg_.seed ^ 0x73657373ULL, seq));
    std::lock_guard lock(sessions_mu_);
    sessions_[s->id] = s;
    return s->id;
  }

  bool has_session(const std::string& id) const {
    std::lock_guard lock(sessions_mu_);
    return sessions_.count(id) != 0;
  }

  std::optional<session_phase> phase(const std::string& id) const {
    auto s = find(id);
    if (!s) return std::nullopt;
    std::lock_guard lock(s->mu);
    return s->phase;
  }

  std::optional<std::string> player_of(const std::string& id) const {
    auto s = find(id);
    if (!s) return std::nullopt;
    return s->player_id;
  }

  // Copy of the session's current episode, if any.
  std::optional<episode> current_episode(const std::string& id) const {
    auto s = find(id);
    if (!s) return std::nullopt;
    std::lock_guard lock(s->mu);
    if (s->phase == session_phase::in_episode || s->phase == session_phase::episode_end) return s->ep;
    return std::nullopt;
  }

  std::vector<protocol::server_message> handle(const std::string& session_id, const protocol::client_message& msg) {
    auto s = find(session_id);
    if (!s) return {protocol::error_msg{"unknown_session", "no session '" + session_id + "'"}};
    std::lock_guard lock(s->mu);
    try {
      if (std::holds_alternative<protocol::join>(msg)) {
        if (s->phase != session_phase::lobby) return {protocol::error_msg{"out_of_turn", "already joined"}};
        return start_episode(*s);
      }
      if (auto* t = std::get_if<protocol::turn>(&msg)) {
        if (s->phase != session_phase::in_episode || awaiting(*s) != speaker::human)
          return {protocol::error_msg{"out_of_turn", "not awaiting a human turn"}};
        return submit_human_turn(*s, t->text);
      }
      const auto& c = std::get<protocol::choice>(msg);
      if (s->phase != session_phase::episode_end) return {protocol::error_msg{"out_of_turn", "episode has not ended"}};
      const auto parsed = try_parse_end_choice(c.option);
      if (!parsed) return {protocol::error_msg{"bad_choice", "unknown option '" + c.option + "'"}};
      return choose(*s, *parsed);
    } catch (const protocol::protocol_error& e) {
      return {protocol::error_msg{e.code(), e.what()}};
    } catch (const error& e) {
      return {protocol::error_msg{"server_error", e.what()}};
    }
  }

  std::vector<json> handle_json(const std::string& session_id, const json& msg) {
    std::vector<json> out;
    try {
      for (const auto& m : handle(session_id, protocol::decode_client(msg))) out.push_back(protocol::encode(m));
    } catch (const protocol::protocol_error& e) {
      out.push_back(protocol::encode(protocol::error_msg{e.code(), e.what()}));
    }
    return out;
  }

  // Logs the in-flight episode (complete=false, or complete without a choice)
  // and removes the session.
  void disconnect(const std::string& session_id) {
    std::shared_ptr<session> s;
    {
      std::lock_guard lock(sessions_mu_);
      auto it = sessions_.find(session_id);
      if (it == sessions_.end()) return;
      s = it->second;
      sessions_.erase(it);
    }
    std::lock_guard lock(s->mu);
    abandon(*s);
  }

  // Graceful shutdown: flush every in-flight episode.
  void shutdown() {
    std::vector<std::string> ids;
    {
      std::lock_guard lock(sessions_mu_);
      for (const auto& [id, s] : sessions_) ids.push_back(id);
    }
    for (const auto& id : ids) disconnect(id);
  }

  std::size_t session_count() const {
    std::lock_guard lock(sessions_mu_);
    return sessions_.size();
  }

  std::uint64_t safety_rejections() const { return safety_rejections_.load(); }
  std::uint64_t episodes_started() const { return episode_seq_.load(); }

 private:
  struct session {
    std::mutex mu;
    std::string id;
    std::string player_id;
    session_phase phase = session_phase::lobby;
    episode ep;
    std::shared_ptr<const deployment> replier;
    std::shared_ptr<const deployment> dm;
    std::set<std::string> used_candidates;
    std::optional<character> retained_character;
    std::optional<location> retained_location;
    std::optional<std::string> last_partner_id;
  };

  std::shared_ptr<session> find(const std::string& id) const {
    std::lock_guard lock(sessions_mu_);
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
  }

  static speaker awaiting(const session& s) {
    return s.ep.turns.empty() ? speaker::human
                              : (s.ep.turns.back().who == speaker::human ? speaker::model : speaker::human);
  }

  std::vector<protocol::server_message> start_episode(session& s) {
    const auto& locs = catalog_.locations;
    const auto& chars = catalog_.characters;
    if (locs.empty() || chars.size() < 2) throw error("empty catalog");

    const std::uint64_t seq = episode_seq_.fetch_add(1);
    rng_t rng(mix_seed(cfg_.seed, seq));

    episode ep;
    ep.episode_id = "ep" + hex_token(mix_seed(cfg_.seed ^ 0x6570ULL, seq));
    ep.round_id = round_id_.load();
    ep.player_id = s.player_id;

    if (s.retained_location) {
      ep.where = *s.retained_location;
    } else {
      // a fresh location differs from the previous one when possible
      std::vector<const location*> options;
      for (const auto& l : locs)
        if (locs.size() == 1 || l.id != s.ep.where.id) options.push_back(&l);
      ep.where = *options[uniform_index(rng, options.size())];
    }
    ep.human_character = s.retained_character ? *s.retained_character : chars[uniform_index(rng, chars.size())];
    std::vector<const character*> partners;
    for (const auto& c : chars) {
      if (c.id == ep.human_character.id) continue;
      if (s.last_partner_id && c.id == *s.last_partner_id && chars.size() > 2) continue;
      partners.push_back(&c);
    }
    ep.model_character = *partners[uniform_index(rng, partners.size())];

    auto a = pool_.assign_variant(rng);
    ep.variant_id = a.variant_id;
    s.replier = a.snapshot;
    s.dm = dm();
    if (!s.dm) s.dm = s.replier;
    s.used_candidates.clear();
    s.retained_character.reset();
    s.retained_location.reset();
    s.last_partner_id = ep.model_character.id;
    s.ep = std::move(ep);
    s.phase = session_phase::in_episode;

    std::vector<protocol::server_message> out;
    out.push_back(protocol::assigned{s.ep.where, s.ep.human_character, s.ep.model_character.name});
    if (cfg_.model_speaks_first) out.push_back(model_reply(s));
    return out;
  }

  protocol::server_message model_reply(session& s) {
    const auto best = s.replier->reply(context_for(s.ep, speaker::model, s.ep.turns.size()), s.used_candidates);
    s.used_candidates.insert(best.id);
    utterance u;
    u.who = speaker::model;
    u.text = s.replier->text(best);
    u.candidate_id = best.id;
    u.timestamp = s.ep.turns.size();
    s.ep.turns.push_back(u);
    return protocol::model_turn{u.text};
  }

  std::vector<protocol::server_message> submit_human_turn(session& s, const std::string& text) {
    if (tokenize(text).empty()) return {protocol::error_msg{"empty_turn", "turn text is empty"}};
    if (safety_.matches(text)) {
      safety_rejections_.fetch_add(1);
      return {protocol::safety_rejected{}};
    }
    const auto& dm = *s.dm;
    const auto score = acting_score(*dm.model, dm.encode(context_for(s.ep, speaker::human, s.ep.turns.size())), text,
                                    dm.bank, cfg_.thresholds);
    utterance u;
    u.who = speaker::human;
    u.text = text;
    u.stars = score.stars;
    u.timestamp = s.ep.turns.size();
    s.ep.turns.push_back(std::move(u));

    std::vector<protocol::server_message> out;
    out.push_back(protocol::stars{score.stars, score.rank});
    if (!finished(s)) out.push_back(model_reply(s));
    if (finished(s)) {
      s.ep.complete = true;
      s.ep.quality = recompute_quality(s.ep);
      s.phase = session_phase::episode_end;
      out.push_back(protocol::episode_end{*s.ep.quality, award_badges(*s.ep.quality, cfg_.badges), protocol::end_options()});
    }
    return out;
  }

  static bool finished(const session& s) { return s.ep.turns.size() >= static_cast<std::size_t>(episode_turns); }

  std::vector<protocol::server_message> choose(session& s, end_choice c) {
    s.ep.choice = c;
    finalize(s.ep);
    const character human = s.ep.human_character;
    const location where = s.ep.where;
    switch (c) {
      case end_choice::move_location:
        s.retained_character = human;
        break;
      case end_choice::wait_new_partner:
        s.retained_character = human;
        s.retained_location = where;
        break;
      case end_choice::new_pair:
        s.last_partner_id.reset();
        break;
      case end_choice::end_game:
        s.phase = session_phase::closed;
        return {protocol::leaderboard{board_.top(cfg_.leaderboard_top_n)}};
    }
    return start_episode(s);
  }

  void abandon(session& s) {
    if (s.phase == session_phase::in_episode || s.phase == session_phase::episode_end) {
      s.ep.complete = s.phase == session_phase::episode_end;
      s.ep.choice.reset();
      finalize(s.ep);
    }
    s.phase = session_phase::closed;
  }

  void finalize(episode& ep) {
    ep.quality = recompute_quality(ep);
    if (auto problem = validate_episode(ep); !problem.empty()) throw error("refusing to log episode: " + problem);
    std::lock_guard lock(finalize_mu_);
    if (log_.is_open()) log_.append(ep);
    board_.update(ep.player_id, *ep.quality);
    pool_.record_outcome(ep.variant_id, ep.choice && is_continue(*ep.choice));
    if (on_logged_) on_logged_(ep);
  }

  scenario_catalog catalog_;
  blocklist safety_;
  game_config cfg_;
  model_pool pool_;
  dfw::leaderboard board_;
  episode_log log_;

  mutable std::mutex dm_mu_;
  std::shared_ptr<const deployment> dm_;

  mutable std::mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<session>> sessions_;

  std::mutex finalize_mu_;
  episode_callback on_logged_;

  std::atomic<std::uint64_t> join_seq_{0};
  std::atomic<std::uint64_t> episode_seq_{0};
  std::atomic<std::uint64_t> safety_rejections_{0};
  std::atomic<int> round_id_{1};
};

}  // namespace dfw
