#pragma once

#include <string>

#include "dfw/core.hpp"
#include "json.hpp"

namespace dfw {

using json = nlohmann::json;

inline constexpr int schema_version = 1;

inline void to_json(json& j, const character& c) { j = json{{"id", c.id}, {"name", c.name}, {"persona", c.persona}}; }
inline void from_json(const json& j, character& c) {
  j.at("id").get_to(c.id);
  j.at("name").get_to(c.name);
  j.at("persona").get_to(c.persona);
}

inline void to_json(json& j, const location& l) {
  j = json{{"id", l.id}, {"name", l.name}, {"description", l.description}};
}
inline void from_json(const json& j, location& l) {
  j.at("id").get_to(l.id);
  j.at("name").get_to(l.name);
  j.at("description").get_to(l.description);
}

inline void to_json(json& j, const utterance& u) {
  j = json{{"speaker", to_string(u.who)},
           {"text", u.text},
           {"stars", u.stars ? json(*u.stars) : json(nullptr)},
           {"candidate_id", u.candidate_id ? json(*u.candidate_id) : json(nullptr)},
           {"ts", u.timestamp}};
}
inline void from_json(const json& j, utterance& u) {
  u.who = parse_speaker(j.at("speaker").get<std::string>());
  j.at("text").get_to(u.text);
  u.stars.reset();
  u.candidate_id.reset();
  if (auto it = j.find("stars"); it != j.end() && !it->is_null()) u.stars = it->get<int>();
  if (auto it = j.find("candidate_id"); it != j.end() && !it->is_null()) u.candidate_id = it->get<std::string>();
  u.timestamp = j.value("ts", std::uint64_t{0});
}

// One line of the episode log (the release format).
inline void to_json(json& j, const episode& e) {
  j = json{{"schema_version", schema_version},
           {"episode_id", e.episode_id},
           {"round_id", e.round_id},
           {"variant_id", e.variant_id},
           {"player_id", e.player_id},
           {"location", e.where},
           {"human_character", e.human_character},
           {"model_character", e.model_character},
           {"turns", e.turns},
           {"complete", e.complete},
           {"end_choice", e.choice ? json(std::string(to_string(*e.choice))) : json(nullptr)},
           {"quality", e.quality ? json(*e.quality) : json(nullptr)}};
}
inline void from_json(const json& j, episode& e) {
  const int version = j.at("schema_version").get<int>();
  if (version != schema_version) throw error("unsupported schema_version " + std::to_string(version));
  j.at("episode_id").get_to(e.episode_id);
  j.at("round_id").get_to(e.round_id);
  j.at("variant_id").get_to(e.variant_id);
  j.at("player_id").get_to(e.player_id);
  j.at("location").get_to(e.where);
  j.at("human_character").get_to(e.human_character);
  j.at("model_character").get_to(e.model_character);
  j.at("turns").get_to(e.turns);
  j.at("complete").get_to(e.complete);
  e.choice.reset();
  e.quality.reset();
  if (const auto& c = j.at("end_choice"); !c.is_null()) e.choice = parse_end_choice(c.get<std::string>());
  if (const auto& q = j.at("quality"); !q.is_null()) e.quality = q.get<int>();
}

inline void to_json(json& j, const history_turn& h) { j = json{{"speaker", h.speaker_name}, {"text", h.text}}; }
inline void from_json(const json& j, history_turn& h) {
  j.at("speaker").get_to(h.speaker_name);
  j.at("text").get_to(h.text);
}

inline void to_json(json& j, const context_bundle& b) {
  j = json{{"location_description", b.location_description},
           {"self_persona", b.self_persona},
           {"partner_name", b.partner_name},
           {"dialogue_history", b.dialogue_history}};
}
inline void from_json(const json& j, context_bundle& b) {
  j.at("location_description").get_to(b.location_description);
  j.at("self_persona").get_to(b.self_persona);
  j.at("partner_name").get_to(b.partner_name);
  j.at("dialogue_history").get_to(b.dialogue_history);
}

inline void to_json(json& j, const training_pair& p) {
  j = json{{"context", p.context},       {"target", p.target},
           {"source", to_string(p.source)}, {"round_id", p.round_id},
           {"quality", p.quality},        {"target_author", to_string(p.target_author)},
           {"episode_id", p.episode_id}};
}
inline void from_json(const json& j, training_pair& p) {
  j.at("context").get_to(p.context);
  j.at("target").get_to(p.target);
  p.source = parse_data_source(j.at("source").get<std::string>());
  j.at("round_id").get_to(p.round_id);
  j.at("quality").get_to(p.quality);
  p.target_author = parse_speaker(j.at("target_author").get<std::string>());
  j.at("episode_id").get_to(p.episode_id);
}

}  // namespace dfw
