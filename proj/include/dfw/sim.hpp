#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "dfw/core.hpp"
#include "dfw/game.hpp"
#include "dfw/json_io.hpp"
#include "dfw/protocol.hpp"
#include "dfw/rng.hpp"
#include "dfw/safety.hpp"
#include "dfw/text.hpp"

namespace dfw {

struct world_config {
  int num_locations = 12;
  int num_characters = 60;
  int persona_words = 3;
  int seed_words = 10;   // per character, crowdsourced register
  int wild_words = 10;   // per character, in-game register
  int location_words = 4;
  double wild_shared_prob = 0.5;  // chance a wild utterance carries a seed-register word
  double location_word_prob = 0.5;
  int noise_vocab = 200;
  std::uint64_t seed = 7;
};

// A small fantasy world with a synthetic grammar. Crowdsourced ("seed")
// dialogue and in-game ("wild") player dialogue draw each character's
// content words from two different registers, which is the distribution
// shift the learning experiments rely on.
class synthetic_world {
 public:
  explicit synthetic_world(const world_config& cfg = {}) : cfg_(cfg) { build(); }

  const world_config& config() const { return cfg_; }
  const scenario_catalog& catalog() const { return catalog_; }
  const blocklist& safety() const { return safety_; }

  std::size_t character_index(const std::string& id) const { return char_index_.at(id); }
  std::size_t location_index(const std::string& id) const { return loc_index_.at(id); }
  std::optional<std::size_t> character_index_by_name(const std::string& name) const {
    auto it = char_by_name_.find(name);
    if (it == char_by_name_.end()) return std::nullopt;
    return it->second;
  }

  std::string seed_utterance(std::size_t c, std::size_t l, rng_t& rng) const {
    std::vector<std::string> w;
    w.push_back(pick(seed_words_[c], rng));
    w.push_back(pick(seed_words_[c], rng));
    if (uniform01(rng) < cfg_.location_word_prob) w.push_back(pick(location_words_[l], rng));
    w.push_back(pick(common_fillers(), rng));
    w.push_back(pick(common_fillers(), rng));
    w.push_back(pick(seed_fillers(), rng));
    return compose(w, rng);
  }

  std::string wild_utterance(std::size_t c, std::size_t l, rng_t& rng) const {
    std::vector<std::string> w;
    w.push_back(pick(wild_words_[c], rng));
    w.push_back(pick(wild_words_[c], rng));
    if (uniform01(rng) < cfg_.wild_shared_prob) w.push_back(pick(seed_words_[c], rng));
    if (uniform01(rng) < cfg_.location_word_prob) w.push_back(pick(location_words_[l], rng));
    w.push_back(pick(common_fillers(), rng));
    w.push_back(pick(common_fillers(), rng));
    w.push_back(pick(wild_fillers(), rng));
    return compose(w, rng);
  }

  std::string noise_utterance(rng_t& rng) const {
    std::vector<std::string> w;
    const std::size_t n = 4 + uniform_index(rng, 3);
    for (std::size_t i = 0; i < n; ++i) w.push_back(pick(noise_words_, rng));
    return compose(w, rng, false);
  }

  // Keyword-match judgement of how in-character `text` is for character c:
  // the share of its character keywords that belong to c. Independent of any
  // trained model.
  double oracle_quality(const std::string& text, std::size_t c) const {
    std::size_t mine = 0, any = 0;
    for (const auto& t : tokenize(text)) {
      auto it = keyword_owner_.find(t);
      if (it == keyword_owner_.end()) continue;
      ++any;
      if (it->second == c) ++mine;
    }
    return any == 0 ? 0.0 : static_cast<double>(mine) / static_cast<double>(any);
  }

  // A crowdsourced dialogue: both sides written in the seed register.
  episode seed_dialogue(rng_t& rng, const std::string& id) const {
    episode ep = blank_episode(rng, id);
    ep.round_id = 1;
    const auto l = location_index(ep.where.id);
    const auto h = character_index(ep.human_character.id), m = character_index(ep.model_character.id);
    for (int k = 0; k < episode_turns; ++k) {
      utterance u;
      u.who = k % 2 == 0 ? speaker::model : speaker::human;
      u.text = seed_utterance(u.who == speaker::human ? h : m, l, rng);
      if (u.who == speaker::model) u.candidate_id = "seed";
      u.timestamp = static_cast<std::uint64_t>(k);
      ep.turns.push_back(std::move(u));
    }
    ep.complete = true;
    return ep;
  }

  // Seed corpus: every utterance of every crowdsourced dialogue is a target.
  std::vector<training_pair> seed_pairs(std::size_t num_dialogues, std::uint64_t seed) const {
    rng_t rng(mix_seed(seed, 0x5eed));
    std::vector<training_pair> out;
    for (std::size_t i = 0; i < num_dialogues; ++i) {
      const auto ep = seed_dialogue(rng, "seed" + hex_token(i, 6));
      for (std::size_t k = 0; k < ep.turns.size(); ++k) {
        training_pair p;
        p.context = context_for(ep, ep.turns[k].who, k);
        p.target = ep.turns[k].text;
        p.source = data_source::seed_corpus;
        p.round_id = 0;
        p.quality = 0;
        p.target_author = speaker::human;
        p.episode_id = ep.episode_id;
        out.push_back(std::move(p));
      }
    }
    return out;
  }

  struct wild_episode_options {
    double clean_prob = 1.0;  // chance a human turn is an in-character wild utterance
    int human_turns = human_turns_per_episode;
    int round_id = 1;
    bool score_with_oracle = true;  // clean turns 2..4 stars, noise turns 1 star
  };

  // An in-game episode without a server: model turns are in-character seed
  // utterances, human turns follow the options.
  episode wild_episode(rng_t& rng, const std::string& id, const wild_episode_options& opt) const {
    episode ep = blank_episode(rng, id);
    ep.round_id = opt.round_id;
    ep.variant_id = "synthetic";
    ep.player_id = "p" + hex_token(uniform_index(rng, 1u << 20), 6);
    const auto l = location_index(ep.where.id);
    const auto h = character_index(ep.human_character.id), m = character_index(ep.model_character.id);
    const int total = std::min(episode_turns, 2 * opt.human_turns);
    for (int k = 0; k < total; ++k) {
      utterance u;
      u.timestamp = static_cast<std::uint64_t>(k);
      if (k % 2 == 0) {
        u.who = speaker::model;
        u.text = seed_utterance(m, l, rng);
        u.candidate_id = "synthetic";
      } else {
        u.who = speaker::human;
        const bool clean = uniform01(rng) < opt.clean_prob;
        u.text = clean ? wild_utterance(h, l, rng) : noise_utterance(rng);
        if (opt.score_with_oracle) u.stars = clean ? 2 + static_cast<int>(uniform_index(rng, 3)) : 1;
      }
      ep.turns.push_back(std::move(u));
    }
    ep.complete = total == episode_turns;
    ep.quality = recompute_quality(ep);
    return ep;
  }

  struct noisy_corpus_options {
    double quit_when_idle = 0.3;  // chance to leave after each turn while every turn so far was level 1
    double underrate = 0.4;       // chance a turn above level 1 is judged one star lower
    int round_id = 1;
  };

  // A human turn of effort level k in 1..4: 2k-1 in-character words and two
  // noise words.
  std::string leveled_utterance(std::size_t c, int k, rng_t& rng) const {
    std::vector<std::string> w;
    for (int i = 0; i < 2 * k - 1; ++i) w.push_back(pick(wild_words_[c], rng));
    for (int i = 0; i < 2; ++i) w.push_back(pick(noise_words_, rng));
    w.push_back(pick(common_fillers(), rng));
    return compose(w, rng, false);
  }

  // A played episode from a player whose skill is skewed low (square of a
  // uniform draw): each human turn has level 1 + Binomial(3, skill) and is
  // judged at that level or one below; a player who has only managed level-1
  // turns may leave early.
  episode noisy_episode(rng_t& rng, const std::string& id, const noisy_corpus_options& opt) const {
    episode ep = blank_episode(rng, id);
    ep.round_id = opt.round_id;
    ep.variant_id = "synthetic";
    ep.player_id = "p" + hex_token(uniform_index(rng, 1u << 20), 6);
    const double u = uniform01(rng);
    const double skill = u * u;
    const auto l = location_index(ep.where.id);
    const auto h = character_index(ep.human_character.id), m = character_index(ep.model_character.id);
    int human_turns = 0;
    bool idle = true;
    while (human_turns < human_turns_per_episode) {
      utterance mu;
      mu.who = speaker::model;
      mu.text = seed_utterance(m, l, rng);
      mu.candidate_id = "synthetic";
      mu.timestamp = ep.turns.size();
      ep.turns.push_back(std::move(mu));

      int k = 1;
      for (int i = 0; i < 3; ++i) k += uniform01(rng) < skill ? 1 : 0;
      utterance hu;
      hu.who = speaker::human;
      hu.text = leveled_utterance(h, k, rng);
      hu.stars = k > 1 && uniform01(rng) < opt.underrate ? k - 1 : k;
      hu.timestamp = ep.turns.size();
      ep.turns.push_back(std::move(hu));
      ++human_turns;
      idle = idle && k == 1;
      if (idle && human_turns < human_turns_per_episode && uniform01(rng) < opt.quit_when_idle) break;
    }
    ep.complete = human_turns == human_turns_per_episode;
    ep.quality = recompute_quality(ep);
    return ep;
  }

  std::vector<episode> noisy_corpus(std::size_t n, std::uint64_t seed) const { return noisy_corpus(n, seed, {}); }
  std::vector<episode> noisy_corpus(std::size_t n, std::uint64_t seed, const noisy_corpus_options& opt) const {
    rng_t rng(mix_seed(seed, 0x9015e));
    std::vector<episode> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(noisy_episode(rng, "nz" + hex_token(mix_seed(seed, i), 12), opt));
    return out;
  }

  // Permutes human turn texts across every episode with quality below
  // `below`, so those episodes pair contexts with someone else's lines.
  static void shuffle_low_quality_targets(std::vector<episode>& eps, int below, std::uint64_t seed) {
    std::vector<utterance*> slots;
    for (auto& ep : eps)
      if (ep.quality.value_or(recompute_quality(ep)) < below)
        for (auto& t : ep.turns)
          if (t.who == speaker::human) slots.push_back(&t);
    std::vector<std::string> texts;
    for (auto* t : slots) texts.push_back(t->text);
    rng_t rng(mix_seed(seed, 0x5a1f1eULL));
    std::shuffle(texts.begin(), texts.end(), rng);
    for (std::size_t i = 0; i < slots.size(); ++i) slots[i]->text = texts[i];
  }

  static const std::vector<std::string>& common_fillers() {
    static const std::vector<std::string> w = {"i", "the", "you", "a", "to", "my", "is", "we", "of", "and", "it", "here"};
    return w;
  }
  static const std::vector<std::string>& seed_fillers() {
    static const std::vector<std::string> w = {"indeed", "perhaps", "certainly", "kindly", "truly", "quite",
                                               "splendid", "lovely", "pleasant", "gladly"};
    return w;
  }
  static const std::vector<std::string>& wild_fillers() {
    static const std::vector<std::string> w = {"stab", "dagger", "club", "kills", "blade", "loot",
                                               "run", "grab", "fight", "gold"};
    return w;
  }

 private:
  static const std::string& pick(const std::vector<std::string>& v, rng_t& rng) { return v[uniform_index(rng, v.size())]; }

  static std::string compose(std::vector<std::string> words, rng_t& rng, bool punctuate = true) {
    std::shuffle(words.begin(), words.end(), rng);
    std::string s;
    for (const auto& w : words) {
      if (!s.empty()) s += ' ';
      s += w;
    }
    if (punctuate) s += uniform01(rng) < 0.3 ? " !" : " .";
    return s;
  }

  episode blank_episode(rng_t& rng, const std::string& id) const {
    episode ep;
    ep.episode_id = id;
    ep.where = catalog_.locations[uniform_index(rng, catalog_.locations.size())];
    const auto h = uniform_index(rng, catalog_.characters.size());
    auto m = uniform_index(rng, catalog_.characters.size() - 1);
    if (m >= h) ++m;
    ep.human_character = catalog_.characters[h];
    ep.model_character = catalog_.characters[m];
    ep.player_id = "crowd";
    ep.variant_id = "seed";
    return ep;
  }

  void build() {
    if (cfg_.num_characters < 2 || cfg_.num_locations < 1) throw error("world needs >= 2 characters and >= 1 location");
    rng_t rng(mix_seed(cfg_.seed, 0x3071d));
    std::unordered_set<std::string> used;
    for (const auto& v : {common_fillers(), seed_fillers(), wild_fillers()})
      for (const auto& w : v) used.insert(w);
    for (const auto& w : {"am", "the", "love", "and", "place", "with", "a"}) used.insert(w);
    auto fresh = [&](int syllables) {
      static const char* cons[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "th", "dr", "gr", "br"};
      static const char* vow[] = {"a", "e", "i", "o", "u", "ai", "or", "en"};
      for (;;) {
        std::string w;
        for (int s = 0; s < syllables; ++s) {
          w += cons[uniform_index(rng, std::size(cons))];
          w += vow[uniform_index(rng, std::size(vow))];
        }
        if (used.insert(w).second) return w;
      }
    };
    auto words = [&](int n, int syllables) {
      std::vector<std::string> v;
      for (int i = 0; i < n; ++i) v.push_back(fresh(syllables));
      return v;
    };

    for (int l = 0; l < cfg_.num_locations; ++l) {
      location loc;
      loc.id = "loc" + std::to_string(l);
      loc.name = fresh(3);
      location_words_.push_back(words(cfg_.location_words, 2));
      std::string d = "a place with";
      for (std::size_t i = 0; i < location_words_.back().size(); ++i)
        d += (i ? " and " : " ") + location_words_.back()[i];
      loc.description = d + " .";
      loc_index_[loc.id] = catalog_.locations.size();
      catalog_.locations.push_back(std::move(loc));
    }
    for (int c = 0; c < cfg_.num_characters; ++c) {
      character ch;
      ch.id = "char" + std::to_string(c);
      ch.name = fresh(3);
      const auto pw = words(cfg_.persona_words, 3);
      std::string p = "i am the " + pw[0] + " .";
      for (std::size_t i = 1; i < pw.size(); ++i) p += " i love " + pw[i] + " .";
      ch.persona = p;
      seed_words_.push_back(words(cfg_.seed_words, 2));
      wild_words_.push_back(words(cfg_.wild_words, 2));
      for (const auto& w : seed_words_.back()) keyword_owner_[w] = static_cast<std::size_t>(c);
      for (const auto& w : wild_words_.back()) keyword_owner_[w] = static_cast<std::size_t>(c);
      for (const auto& w : pw) keyword_owner_[w] = static_cast<std::size_t>(c);
      char_index_[ch.id] = catalog_.characters.size();
      char_by_name_[ch.name] = catalog_.characters.size();
      catalog_.characters.push_back(std::move(ch));
    }
    noise_words_ = words(cfg_.noise_vocab, 2);
    safety_ = blocklist({"kill yourself", "idiot", "moron", "stupid", "shut up"});
    catalog_.validate(safety_);
  }

  world_config cfg_;
  scenario_catalog catalog_;
  blocklist safety_;
  std::vector<std::vector<std::string>> seed_words_, wild_words_, location_words_;
  std::vector<std::string> noise_words_;
  std::unordered_map<std::string, std::size_t> keyword_owner_;
  std::unordered_map<std::string, std::size_t> char_index_, loc_index_, char_by_name_;
};

struct sim_policy {
  double quality_level = 0.9;
  double base_continue_prob = 0.5;
  double engagement_slope = 0.3;
  std::uint64_t seed = 1;

  void validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(quality_level) || !prob(base_continue_prob)) throw error("sim_policy: probabilities must be in [0,1]");
  }
};

// One synthetic player: scripted in-character replies or noise, and an end
// choice driven by how in-character the model's replies were.
class sim_player {
 public:
  sim_player(const synthetic_world& world, sim_policy policy)
      : world_(&world), policy_(policy), rng_(mix_seed(policy.seed, 0x51a)) {
    policy_.validate();
  }

  const sim_policy& policy() const { return policy_; }

  std::string turn(const std::string& character_id, const std::string& location_id) {
    if (uniform01(rng_) < policy_.quality_level)
      return world_->wild_utterance(world_->character_index(character_id), world_->location_index(location_id), rng_);
    return world_->noise_utterance(rng_);
  }

  double continue_probability(double oracle_quality) const {
    return std::clamp(policy_.base_continue_prob + policy_.engagement_slope * oracle_quality, 0.0, 1.0);
  }

  end_choice choose(double oracle_quality) {
    if (uniform01(rng_) >= continue_probability(oracle_quality)) return end_choice::end_game;
    static constexpr end_choice options[] = {end_choice::move_location, end_choice::wait_new_partner, end_choice::new_pair};
    return options[uniform_index(rng_, 3)];
  }

 private:
  const synthetic_world* world_;
  sim_policy policy_;
  rng_t rng_;
};

inline std::string sim_turn(sim_player& player, const std::string& character_id, const std::string& location_id) {
  return player.turn(character_id, location_id);
}

// Mean oracle quality of the model's turns in an episode.
inline double model_reply_quality(const synthetic_world& world, const episode& ep) {
  const auto c = world.character_index(ep.model_character.id);
  double s = 0.0;
  int n = 0;
  for (const auto& t : ep.turns)
    if (t.who == speaker::model) {
      s += world.oracle_quality(t.text, c);
      ++n;
    }
  return n ? s / n : 0.0;
}

inline end_choice sim_end_choice(sim_player& player, const synthetic_world& world, const episode& ep) {
  return player.choose(model_reply_quality(world, ep));
}

using transport_fn = std::function<std::vector<json>(const json&)>;

struct sim_session_result {
  int episodes_finished = 0;
  int continues = 0;
  int safety_rejections = 0;
  std::vector<std::string> transcript;  // every server message, JSON encoded
};

// Plays one connection through the gameplay protocol until the player ends
// the game (or max_episodes is reached, at which point it chooses end_game).
inline sim_session_result play_session(const synthetic_world& world, sim_player& player, const transport_fn& send,
                                       int max_episodes = 50) {
  sim_session_result res;
  std::string self_id, location_id;
  std::optional<std::size_t> partner;
  std::vector<std::string> model_turns;
  enum class next { human_turn, choice, done } state = next::human_turn;

  auto process = [&](const std::vector<json>& msgs) {
    for (const auto& j : msgs) {
      res.transcript.push_back(j.dump());
      const auto m = protocol::decode_server(j);
      if (auto* a = std::get_if<protocol::assigned>(&m)) {
        self_id = a->self.id;
        location_id = a->where.id;
        partner = world.character_index_by_name(a->partner_name);
        model_turns.clear();
        state = next::human_turn;
      } else if (auto* t = std::get_if<protocol::model_turn>(&m)) {
        model_turns.push_back(t->text);
      } else if (std::holds_alternative<protocol::episode_end>(m)) {
        state = next::choice;
      } else if (std::holds_alternative<protocol::safety_rejected>(m)) {
        ++res.safety_rejections;
      } else if (std::holds_alternative<protocol::leaderboard>(m)) {
        state = next::done;
      } else if (auto* e = std::get_if<protocol::error_msg>(&m)) {
        throw error("sim player got protocol error " + e->code + ": " + e->detail);
      }
    }
  };

  process(send(protocol::encode(protocol::client_message{protocol::join{}})));
  while (state != next::done) {
    if (state == next::human_turn) {
      process(send(protocol::encode(protocol::client_message{protocol::turn{player.turn(self_id, location_id)}})));
    } else {
      double q = 0.0;
      if (partner && !model_turns.empty()) {
        for (const auto& t : model_turns) q += world.oracle_quality(t, *partner);
        q /= static_cast<double>(model_turns.size());
      }
      ++res.episodes_finished;
      auto c = player.choose(q);
      if (res.episodes_finished >= max_episodes) c = end_choice::end_game;
      if (is_continue(c)) ++res.continues;
      process(send(protocol::encode(protocol::client_message{protocol::choice{std::string(to_string(c))}})));
    }
  }
  return res;
}

// In-process loopback transport to a game_server session.
inline transport_fn loopback(game_server& server, const std::string& session_id) {
  return [&server, session_id](const json& msg) { return server.handle_json(session_id, msg); };
}

// A stream of sim players, one connection each, played back to back so the
// result is deterministic for a given seed.
class sim_population {
 public:
  sim_population(const synthetic_world& world, sim_policy base, std::uint64_t seed)
      : world_(&world), base_(base), seed_(seed) {
    base_.validate();
  }

  // Plays sessions until exactly n more episodes have been finished.
  std::size_t play(game_server& server, std::size_t n) {
    std::size_t done = 0;
    while (done < n) {
      const auto sid = server.create_session();
      sim_policy p = base_;
      p.seed = mix_seed(seed_, next_++);
      sim_player player(*world_, p);
      const auto r = play_session(*world_, player, loopback(server, sid), static_cast<int>(n - done));
      done += static_cast<std::size_t>(r.episodes_finished);
      server.disconnect(sid);
    }
    return done;
  }

  std::uint64_t sessions() const { return next_; }

 private:
  const synthetic_world* world_;
  sim_policy base_;
  std::uint64_t seed_;
  std::uint64_t next_ = 0;
};

}  // namespace dfw
