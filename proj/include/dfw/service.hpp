#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "httplib.h"

#include "dfw/checkpoint.hpp"
#include "dfw/episode_log.hpp"
#include "dfw/game.hpp"
#include "dfw/orchestrator.hpp"
#include "dfw/pool.hpp"
#include "dfw/sim.hpp"

namespace dfw {

struct variant_section {
  std::string name;
  std::string checkpoint;
  variant_factors factors;
  double decoding_alpha = 0.5;
};

// present keys must parse; absent keys keep the default
template <class T>
T ini_value(const boost::property_tree::ptree& pt, const std::string& key, const T& fallback) {
  if (!pt.get_child_optional(key)) return fallback;
  return pt.get<T>(key);
}

// Flat INI config. Every key and its default is listed in
// config/dfw.example.ini.
struct service_config {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string log_path = "episodes.jsonl";
  int session_idle_seconds = 600;

  game_config game;

  std::string world = "synthetic";  // "synthetic" | "files"
  std::uint64_t world_seed = 7;
  std::size_t seed_dialogues = 300;
  std::uint64_t seed_corpus_seed = 1;
  std::string catalog_path;
  std::string blocklist_path;
  std::string bank_path;
  std::string dm_checkpoint;

  std::vector<variant_section> variants;

  static service_config from_ptree(const boost::property_tree::ptree& pt, const std::filesystem::path& base = {}) {
    service_config c;
    auto rel = [&](const std::string& p) {
      if (p.empty() || std::filesystem::path(p).is_absolute() || base.empty()) return p;
      return (base / p).string();
    };
    try {
      c.host = ini_value(pt, "server.host", c.host);
      c.port = ini_value(pt, "server.port", c.port);
      c.log_path = rel(ini_value(pt, "server.log", c.log_path));
      c.session_idle_seconds = ini_value(pt, "server.session_idle_seconds", c.session_idle_seconds);

      auto& g = c.game;
      g.seed = ini_value(pt, "game.seed", g.seed);
      g.round_id = ini_value(pt, "game.round_id", g.round_id);
      g.model_speaks_first = ini_value(pt, "game.model_speaks_first", g.model_speaks_first);
      g.max_history = ini_value(pt, "game.max_history", g.max_history);
      g.leaderboard_top_n = ini_value(pt, "game.leaderboard_top_n", g.leaderboard_top_n);
      g.dm_follows_redeploy = ini_value(pt, "game.dm_follows_redeploy", g.dm_follows_redeploy);
      g.thresholds.four_star_rank = ini_value(pt, "stars.four_star_rank", g.thresholds.four_star_rank);
      g.thresholds.three_star_rank = ini_value(pt, "stars.three_star_rank", g.thresholds.three_star_rank);
      g.thresholds.two_star_rank = ini_value(pt, "stars.two_star_rank", g.thresholds.two_star_rank);
      g.thresholds.proportional_mode = ini_value(pt, "stars.proportional_mode", g.thresholds.proportional_mode);
      g.thresholds.reference_size = ini_value(pt, "stars.reference_size", g.thresholds.reference_size);
      g.badges.one_badge_points = ini_value(pt, "badges.one_badge_points", g.badges.one_badge_points);
      g.badges.two_badge_points = ini_value(pt, "badges.two_badge_points", g.badges.two_badge_points);

      c.world = ini_value(pt, "data.world", c.world);
      c.world_seed = ini_value(pt, "data.world_seed", c.world_seed);
      c.seed_dialogues = ini_value(pt, "data.seed_dialogues", c.seed_dialogues);
      c.seed_corpus_seed = ini_value(pt, "data.seed_corpus_seed", c.seed_corpus_seed);
      c.catalog_path = rel(ini_value(pt, "data.catalog", c.catalog_path));
      c.blocklist_path = rel(ini_value(pt, "data.blocklist", c.blocklist_path));
      c.bank_path = rel(ini_value(pt, "data.bank", c.bank_path));
      c.dm_checkpoint = rel(ini_value(pt, "data.dm_checkpoint", c.dm_checkpoint));

      for (const auto& [section, body] : pt) {
        if (section.rfind("variant.", 0) != 0) continue;
        variant_section v;
        v.name = section.substr(8);
        v.checkpoint = rel(body.get<std::string>("checkpoint"));
        v.factors.train_data = ini_value(body, "train_data", v.factors.train_data);
        v.factors.size_tag = ini_value(body, "size_tag", v.factors.size_tag);
        v.factors.negative_context = ini_value(body, "negative_context", v.factors.negative_context);
        v.factors.decoding_control = ini_value(body, "decoding_control", v.factors.decoding_control);
        v.decoding_alpha = ini_value(body, "decoding_alpha", v.decoding_alpha);
        c.variants.push_back(std::move(v));
      }
    } catch (const boost::property_tree::ptree_error& e) {
      throw error(std::string("bad config: ") + e.what());
    }
    c.validate();
    return c;
  }

  static service_config load(const std::string& path) {
    boost::property_tree::ptree pt;
    try {
      boost::property_tree::ini_parser::read_ini(path, pt);
    } catch (const boost::property_tree::ptree_error& e) {
      throw error("cannot read config '" + path + "': " + e.what());
    }
    return from_ptree(pt, std::filesystem::path(path).parent_path());
  }

  void validate() const {
    if (port < 0 || port > 65535) throw error("bad config: server.port out of range");
    if (session_idle_seconds < 1) throw error("bad config: server.session_idle_seconds must be >= 1");
    if (world != "synthetic" && world != "files") throw error("bad config: data.world must be synthetic or files");
    if (world == "files" && (catalog_path.empty() || blocklist_path.empty() || bank_path.empty()))
      throw error("bad config: data.catalog, data.blocklist and data.bank are required when data.world = files");
    if (variants.empty()) throw error("bad config: no [variant.*] sections");
    (void)game.thresholds.effective(game.thresholds.reference_size);
    (void)award_badges(0, game.badges);
  }
};

// Catalog, blocklist and vetted bank a service runs with.
struct service_resources {
  scenario_catalog catalog;
  blocklist safety;
  std::shared_ptr<const candidate_bank> bank;
};

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw error("cannot open '" + path + "'");
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

inline std::shared_ptr<const candidate_bank> vetted_bank(const std::vector<std::string>& texts, const blocklist& bl) {
  auto b = std::make_shared<candidate_bank>(candidate_bank::from_texts(texts, "c"));
  b->vet(bl);
  if (b->empty()) throw error("candidate bank is empty after vetting");
  return b;
}

// Bank of every target utterance in the synthetic seed corpus.
inline std::shared_ptr<const candidate_bank> synthetic_bank(const synthetic_world& w, std::size_t dialogues,
                                                            std::uint64_t seed) {
  std::vector<std::string> texts;
  for (const auto& p : w.seed_pairs(dialogues, seed)) texts.push_back(p.target);
  return vetted_bank(texts, w.safety());
}

inline service_resources load_resources(const service_config& c) {
  if (c.world == "synthetic") {
    world_config wc;
    wc.seed = c.world_seed;
    synthetic_world w(wc);
    return {w.catalog(), w.safety(), synthetic_bank(w, c.seed_dialogues, c.seed_corpus_seed)};
  }
  service_resources r;
  r.catalog = load_catalog(c.catalog_path);
  r.safety = blocklist::load(c.blocklist_path);
  r.bank = vetted_bank(read_lines(c.bank_path), r.safety);
  return r;
}

inline std::vector<checkpoint_entry> checkpoint_entries(const std::vector<variant_section>& vs) {
  std::vector<checkpoint_entry> out;
  for (const auto& v : vs) {
    checkpoint_entry e;
    e.variant.variant_id = v.name;
    e.variant.factors = v.factors;
    e.path = v.checkpoint;
    e.control = {v.factors.decoding_control ? v.decoding_alpha : 0.0};
    out.push_back(std::move(e));
  }
  return out;
}

inline variant_section variant_from_json(const json& j) {
  variant_section v;
  v.name = j.at("variant_id").get<std::string>();
  v.checkpoint = j.at("checkpoint").get<std::string>();
  if (j.contains("factors")) {
    const auto& f = j.at("factors");
    v.factors.train_data = f.value("train_data", v.factors.train_data);
    v.factors.size_tag = f.value("size_tag", v.factors.size_tag);
    v.factors.negative_context = f.value("negative_context", v.factors.negative_context);
    v.factors.decoding_control = f.value("decoding_control", v.factors.decoding_control);
  }
  v.decoding_alpha = j.value("decoding_alpha", v.decoding_alpha);
  return v;
}

// The HTTP front of a game_server. Gameplay is request/response: each POST
// /play carries one client message and returns every server message it
// produced, in order.
class service {
 public:
  explicit service(service_config cfg) : cfg_(std::move(cfg)), res_(load_resources(cfg_)) {
    server_ = std::make_unique<game_server>(res_.catalog, res_.safety, cfg_.game);
    if (!cfg_.dm_checkpoint.empty()) {
      auto m = std::make_shared<const model_t>(load_checkpoint<float>(cfg_.dm_checkpoint));
      server_->set_dm(deployment::make("dm", m, res_.bank, {}, cfg_.dm_checkpoint));
    }
    redeploy_checkpoints(*server_, checkpoint_entries(cfg_.variants), res_.bank);
    recovered_ = read_episode_log(cfg_.log_path);
    server_->recover(recovered_.episodes);
    server_->open_log(cfg_.log_path);
    routes();
  }

  ~service() { stop(); }

  game_server& game() { return *server_; }
  const service_config& config() const { return cfg_; }
  std::size_t recovered_episodes() const { return recovered_.episodes.size(); }
  bool recovered_torn_tail() const { return recovered_.torn_tail; }

  // Binds cfg host:port (a free port when it is 0) and returns the port;
  // throws when the port is busy.
  int bind() {
    const int p = cfg_.port == 0 ? http_.bind_to_any_port(cfg_.host)
                                 : (http_.bind_to_port(cfg_.host, cfg_.port) ? cfg_.port : -1);
    if (p < 0) throw error("cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
    return p;
  }

  // Serves until stop(); call bind() first.
  void listen() {
    start_reaper();
    http_.listen_after_bind();
  }

  bool running() const { return http_.is_running(); }

  // Stops accepting requests and flushes in-flight episodes as incomplete.
  void stop() {
    if (stopped_.exchange(true)) return;
    http_.stop();
    {
      std::lock_guard lock(reaper_mu_);
      reaper_stop_ = true;
    }
    reaper_cv_.notify_all();
    if (reaper_.joinable()) reaper_.join();
    server_->shutdown();
  }

  json leaderboard_json() const {
    json rows = json::array();
    for (const auto& r : server_->board().top(cfg_.game.leaderboard_top_n))
      rows.push_back({{"player_id", r.player_id}, {"total", r.total}});
    return {{"top_n", rows}, {"players", server_->board().size()}};
  }

  json metrics() const {
    auto m = metrics_json(server_->pool().snapshot());
    m["episodes_logged"] = server_->log().appended() + recovered_.episodes.size();
    m["safety_rejections"] = server_->safety_rejections();
    m["sessions_open"] = server_->session_count();
    return m;
  }

  // Redeploys under the admin lock; the pool is untouched on any failure.
  json admin_redeploy(const json& body) {
    std::vector<variant_section> vs;
    for (const auto& v : body.at("variants")) vs.push_back(variant_from_json(v));
    std::lock_guard lock(admin_mu_);
    redeploy_checkpoints(*server_, checkpoint_entries(vs), res_.bank);
    if (body.contains("round_id")) server_->set_round(body.at("round_id").get<int>());
    json ids = json::array();
    for (const auto& v : server_->pool().active_variants()) ids.push_back(v.variant_id);
    return {{"active", ids}, {"round_id", server_->round()}};
  }

 private:
  static void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  void touch(const std::string& sid) {
    std::lock_guard lock(seen_mu_);
    last_seen_[sid] = std::chrono::steady_clock::now();
  }

  void forget(const std::string& sid) {
    std::lock_guard lock(seen_mu_);
    last_seen_.erase(sid);
  }

  void routes() {
    http_.Post("/play", [this](const httplib::Request& req, httplib::Response& res) {
      json body;
      try {
        body = json::parse(req.body);
      } catch (const std::exception&) {
        return reply(res, 400, {{"error", "bad_request"}, {"detail", "body is not JSON"}});
      }
      if (!body.is_object() || !body.contains("message"))
        return reply(res, 400, {{"error", "bad_request"}, {"detail", "missing message"}});
      std::string sid = body.value("session", "");
      if (sid.empty()) {
        sid = server_->create_session();
      } else if (!server_->has_session(sid)) {
        return reply(res, 404, {{"error", "unknown_session"}, {"detail", sid}});
      }
      touch(sid);
      json out = json::array();
      for (auto& m : server_->handle_json(sid, body.at("message"))) out.push_back(std::move(m));
      if (server_->phase(sid) == session_phase::closed) {
        server_->disconnect(sid);
        forget(sid);
      }
      reply(res, 200, {{"session", sid}, {"messages", out}});
    });
    http_.Delete("/play", [this](const httplib::Request& req, httplib::Response& res) {
      const auto sid = req.get_param_value("session");
      if (sid.empty()) return reply(res, 400, {{"error", "bad_request"}, {"detail", "missing session"}});
      server_->disconnect(sid);
      forget(sid);
      reply(res, 200, {{"session", sid}, {"closed", true}});
    });
    http_.Get("/leaderboard", [this](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, leaderboard_json());
    });
    http_.Get("/metrics", [this](const httplib::Request& req, httplib::Response& res) {
      if (req.get_param_value("format") == "csv") {
        std::ostringstream os;
        write_metrics_csv(os, server_->pool().snapshot());
        res.set_content(os.str(), "text/csv");
        return;
      }
      reply(res, 200, metrics());
    });
    http_.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, {{"status", "ok"}, {"round_id", server_->round()}, {"recovered", recovered_.episodes.size()}});
    });
    http_.Post("/admin/redeploy", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        reply(res, 200, admin_redeploy(json::parse(req.body)));
      } catch (const std::exception& e) {
        reply(res, 400, {{"error", "redeploy_failed"}, {"detail", e.what()}});
      }
    });
    http_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string what = "unknown";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        what = e.what();
      } catch (...) {
      }
      reply(res, 500, {{"error", "server_error"}, {"detail", what}});
    });
  }

  // Sessions idle past the limit count as disconnected.
  void start_reaper() {
    if (reaper_.joinable()) return;
    reaper_ = std::thread([this] {
      std::unique_lock lock(reaper_mu_);
      while (!reaper_stop_) {
        reaper_cv_.wait_for(lock, std::chrono::seconds(1));
        if (reaper_stop_) break;
        const auto limit = std::chrono::seconds(cfg_.session_idle_seconds);
        std::vector<std::string> idle;
        {
          std::lock_guard seen(seen_mu_);
          const auto now = std::chrono::steady_clock::now();
          for (const auto& [sid, t] : last_seen_)
            if (now - t > limit) idle.push_back(sid);
        }
        for (const auto& sid : idle) {
          server_->disconnect(sid);
          forget(sid);
        }
      }
    });
  }

  service_config cfg_;
  service_resources res_;
  std::unique_ptr<game_server> server_;
  log_read_result recovered_;
  httplib::Server http_;
  std::mutex admin_mu_;
  std::mutex seen_mu_;
  std::map<std::string, std::chrono::steady_clock::time_point> last_seen_;
  std::mutex reaper_mu_;
  std::condition_variable reaper_cv_;
  bool reaper_stop_ = false;
  std::thread reaper_;
  std::atomic<bool> stopped_{false};
};

// Gameplay transport to a running service over HTTP.
class http_transport {
 public:
  http_transport(const std::string& host, int port) : cli_(host, port) {
    cli_.set_read_timeout(60, 0);
    cli_.set_connection_timeout(5, 0);
  }

  std::vector<json> send(const json& msg) {
    json body{{"message", msg}};
    if (!session_.empty()) body["session"] = session_;
    auto r = cli_.Post("/play", body.dump(), "application/json");
    if (!r) throw error("gameplay request failed: " + httplib::to_string(r.error()));
    const auto j = json::parse(r->body);
    if (r->status != 200) throw error("gameplay request rejected: " + r->body);
    session_ = j.at("session").get<std::string>();
    return j.at("messages").get<std::vector<json>>();
  }

  void close() {
    if (session_.empty()) return;
    cli_.Delete("/play?session=" + session_);
    session_.clear();
  }

  transport_fn fn() {
    return [this](const json& m) { return send(m); };
  }

  const std::string& session() const { return session_; }

  json get(const std::string& path) {
    auto r = cli_.Get(path);
    if (!r) throw error("GET " + path + " failed: " + httplib::to_string(r.error()));
    return json::parse(r->body);
  }

 private:
  httplib::Client cli_;
  std::string session_;
};

}  // namespace dfw
