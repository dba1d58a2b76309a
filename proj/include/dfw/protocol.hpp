#pragma once

#include <string>
#include <variant>
#include <vector>

#include "dfw/core.hpp"
#include "dfw/dm.hpp"
#include "dfw/json_io.hpp"

// Gameplay messages. Every message is a JSON object with a "type" tag.
//   client -> server: join{} | turn{text} | choice{option}
//   server -> client: assigned{location, personas, partner_name} | model_turn{text}
//                     | stars{value, rank} | episode_end{quality, badges, options}
//                     | safety_rejected{} | leaderboard{top_n} | error{code, detail}
namespace dfw::protocol {

struct join {};
struct turn {
  std::string text;
};
struct choice {
  std::string option;
};
using client_message = std::variant<join, turn, choice>;

struct assigned {
  location where;
  character self;
  std::string partner_name;
};
struct model_turn {
  std::string text;
};
struct stars {
  int value = 1;
  std::int64_t rank = 0;
};
struct episode_end {
  int quality = 0;
  int badges = 0;
  std::vector<std::string> options;
};
struct safety_rejected {};
struct leaderboard {
  std::vector<leaderboard_row> top_n;
};
struct error_msg {
  std::string code;
  std::string detail;
};
using server_message = std::variant<assigned, model_turn, stars, episode_end, safety_rejected, leaderboard, error_msg>;

inline const std::vector<std::string>& end_options() {
  static const std::vector<std::string> o = {"move_location", "wait_new_partner", "new_pair", "end_game"};
  return o;
}

class protocol_error : public error {
 public:
  protocol_error(std::string code, const std::string& detail) : error(detail), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

inline json encode(const server_message& m) {
  struct visitor {
    json operator()(const assigned& a) const {
      return {{"type", "assigned"},
              {"location", a.where},
              {"personas", {{"self", a.self}}},
              {"partner_name", a.partner_name}};
    }
    json operator()(const model_turn& t) const { return {{"type", "model_turn"}, {"text", t.text}}; }
    json operator()(const stars& s) const { return {{"type", "stars"}, {"value", s.value}, {"rank", s.rank}}; }
    json operator()(const episode_end& e) const {
      return {{"type", "episode_end"}, {"quality", e.quality}, {"badges", e.badges}, {"options", e.options}};
    }
    json operator()(const safety_rejected&) const { return {{"type", "safety_rejected"}}; }
    json operator()(const leaderboard& l) const {
      json rows = json::array();
      for (const auto& r : l.top_n) rows.push_back({{"player_id", r.player_id}, {"total", r.total}});
      return {{"type", "leaderboard"}, {"top_n", rows}};
    }
    json operator()(const error_msg& e) const { return {{"type", "error"}, {"code", e.code}, {"detail", e.detail}}; }
  };
  return std::visit(visitor{}, m);
}

inline server_message decode_server(const json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "assigned")
    return assigned{j.at("location").get<location>(), j.at("personas").at("self").get<character>(),
                    j.at("partner_name").get<std::string>()};
  if (type == "model_turn") return model_turn{j.at("text").get<std::string>()};
  if (type == "stars") return stars{j.at("value").get<int>(), j.at("rank").get<std::int64_t>()};
  if (type == "episode_end")
    return episode_end{j.at("quality").get<int>(), j.at("badges").get<int>(),
                       j.at("options").get<std::vector<std::string>>()};
  if (type == "safety_rejected") return safety_rejected{};
  if (type == "leaderboard") {
    leaderboard l;
    for (const auto& r : j.at("top_n")) l.top_n.push_back({r.at("player_id").get<std::string>(), r.at("total").get<std::int64_t>()});
    return l;
  }
  if (type == "error") return error_msg{j.at("code").get<std::string>(), j.at("detail").get<std::string>()};
  throw protocol_error("unknown_type", "unknown server message type '" + type + "'");
}

inline json encode(const client_message& m) {
  struct visitor {
    json operator()(const join&) const { return {{"type", "join"}}; }
    json operator()(const turn& t) const { return {{"type", "turn"}, {"text", t.text}}; }
    json operator()(const choice& c) const { return {{"type", "choice"}, {"option", c.option}}; }
  };
  return std::visit(visitor{}, m);
}

inline client_message decode_client(const json& j) {
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string())
    throw protocol_error("bad_message", "message must be an object with a string 'type'");
  const auto type = j["type"].get<std::string>();
  if (type == "join") return join{};
  if (type == "turn") {
    if (!j.contains("text") || !j["text"].is_string()) throw protocol_error("bad_message", "turn requires string 'text'");
    return turn{j["text"].get<std::string>()};
  }
  if (type == "choice") {
    if (!j.contains("option") || !j["option"].is_string())
      throw protocol_error("bad_message", "choice requires string 'option'");
    return choice{j["option"].get<std::string>()};
  }
  throw protocol_error("unknown_type", "unknown message type '" + type + "'");
}

}  // namespace dfw::protocol
