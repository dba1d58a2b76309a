#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dfw {

// Thrown for contract violations and invalid input across the library.
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class speaker { human, model };
enum class end_choice { move_location, wait_new_partner, new_pair, end_game };
enum class data_source { seed_corpus, wild };

inline constexpr int episode_turns = 12;
inline constexpr int human_turns_per_episode = 6;
inline constexpr int min_stars = 1;
inline constexpr int max_stars = 4;

inline std::string_view to_string(speaker s) { return s == speaker::human ? "human" : "model"; }

inline std::string_view to_string(end_choice c) {
  switch (c) {
    case end_choice::move_location: return "move_location";
    case end_choice::wait_new_partner: return "wait_new_partner";
    case end_choice::new_pair: return "new_pair";
    case end_choice::end_game: return "end_game";
  }
  return "end_game";
}

inline std::string_view to_string(data_source s) { return s == data_source::wild ? "wild" : "seed_corpus"; }

inline speaker parse_speaker(std::string_view s) {
  if (s == "human") return speaker::human;
  if (s == "model") return speaker::model;
  throw error("unknown speaker '" + std::string(s) + "'");
}

inline std::optional<end_choice> try_parse_end_choice(std::string_view s) {
  if (s == "move_location") return end_choice::move_location;
  if (s == "wait_new_partner") return end_choice::wait_new_partner;
  if (s == "new_pair") return end_choice::new_pair;
  if (s == "end_game") return end_choice::end_game;
  return std::nullopt;
}

inline end_choice parse_end_choice(std::string_view s) {
  if (auto c = try_parse_end_choice(s)) return *c;
  throw error("unknown end choice '" + std::string(s) + "'");
}

inline data_source parse_data_source(std::string_view s) {
  if (s == "wild") return data_source::wild;
  if (s == "seed_corpus") return data_source::seed_corpus;
  throw error("unknown data source '" + std::string(s) + "'");
}

inline bool is_continue(end_choice c) { return c != end_choice::end_game; }

struct character {
  std::string id;
  std::string name;
  std::string persona;

  friend bool operator==(const character&, const character&) = default;
};

struct location {
  std::string id;
  std::string name;
  std::string description;

  friend bool operator==(const location&, const location&) = default;
};

struct utterance {
  speaker who = speaker::model;
  std::string text;
  std::optional<int> stars;               // human turns only
  std::optional<std::string> candidate_id;  // model turns only
  std::uint64_t timestamp = 0;

  friend bool operator==(const utterance&, const utterance&) = default;
};

struct episode {
  std::string episode_id;
  int round_id = 1;
  std::string variant_id;
  location where;
  character human_character;
  character model_character;
  std::string player_id;
  std::vector<utterance> turns;
  bool complete = false;
  std::optional<end_choice> choice;
  std::optional<int> quality;

  friend bool operator==(const episode&, const episode&) = default;
};

struct history_turn {
  std::string speaker_name;
  std::string text;

  friend bool operator==(const history_turn&, const history_turn&) = default;
};

struct context_bundle {
  std::string location_description;
  std::string self_persona;
  std::string partner_name;
  std::vector<history_turn> dialogue_history;

  friend bool operator==(const context_bundle&, const context_bundle&) = default;
};

struct training_pair {
  context_bundle context;
  std::string target;
  data_source source = data_source::seed_corpus;
  int round_id = 1;
  int quality = 0;
  speaker target_author = speaker::human;
  std::string episode_id;

  friend bool operator==(const training_pair&, const training_pair&) = default;
};

// Sum of stars over scored human turns.
inline int recompute_quality(const episode& ep) {
  int q = 0;
  for (const auto& t : ep.turns)
    if (t.who == speaker::human && t.stars) q += *t.stars;
  return q;
}

inline int count_turns(const episode& ep, speaker who) {
  int n = 0;
  for (const auto& t : ep.turns) n += t.who == who ? 1 : 0;
  return n;
}

inline bool turns_alternate(const episode& ep) {
  for (std::size_t k = 1; k < ep.turns.size(); ++k)
    if (ep.turns[k].who == ep.turns[k - 1].who) return false;
  return true;
}

// Checks the stored-episode invariants; returns an empty string when valid.
inline std::string validate_episode(const episode& ep) {
  if (ep.round_id < 1) return "round_id must be >= 1";
  if (ep.turns.size() > static_cast<std::size_t>(episode_turns)) return "more than 12 turns";
  if (!turns_alternate(ep)) return "turns do not alternate";
  for (const auto& t : ep.turns) {
    if (t.who == speaker::model && !t.candidate_id) return "model turn without candidate_id";
    if (t.who == speaker::human && t.candidate_id) return "human turn with candidate_id";
    if (t.who == speaker::model && t.stars) return "model turn with stars";
    if (t.stars && (*t.stars < min_stars || *t.stars > max_stars)) return "stars out of range";
  }
  const bool full = ep.turns.size() == static_cast<std::size_t>(episode_turns) &&
                    count_turns(ep, speaker::human) == human_turns_per_episode;
  if (ep.complete != full) return "complete flag disagrees with turn count";
  if (ep.quality && *ep.quality != recompute_quality(ep)) return "stored quality disagrees with stars";
  if (ep.complete && ep.quality && (*ep.quality < 6 || *ep.quality > 24)) return "complete episode quality out of [6,24]";
  return {};
}

}  // namespace dfw
