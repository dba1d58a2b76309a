#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "dfw/checkpoint.hpp"
#include "dfw/core.hpp"
#include "dfw/deployment.hpp"
#include "dfw/evaluation.hpp"
#include "dfw/game.hpp"
#include "dfw/json_io.hpp"
#include "dfw/pipeline.hpp"
#include "dfw/pool.hpp"
#include "dfw/training.hpp"

namespace dfw {

class round_aborted : public error {
 public:
  using error::error;
};

struct variant_spec {
  std::string name;
  variant_factors factors;
};

struct round_plan {
  int round_id = 1;
  std::size_t target_episode_count = 500;
  std::vector<variant_spec> pool;
  poly_lite_config train;
  double decoding_alpha = 0.5;  // used by variants with decoding_control
  quality_filter_config filter;

  void validate() const {
    if (round_id < 1) throw error("round plan: round_id must be >= 1");
    if (target_episode_count < 1) throw error("round plan: target_episode_count must be >= 1");
    if (pool.empty()) throw error("round plan: empty variant pool");
    std::set<std::string> names;
    for (const auto& v : pool)
      if (v.name.empty() || !names.insert(v.name).second) throw error("round plan: variant names must be unique");
    train.validate();
    filter.validate();
  }
};

// Training config a variant's factors imply.
inline poly_lite_config variant_config(const round_plan& plan, const variant_factors& f) {
  auto c = plan.train;
  if (!f.negative_context) c.history_negatives = 0;
  if (f.size_tag == "large") c.num_codes = 20;
  else if (f.size_tag == "small") c.num_codes = 5;
  else throw error("unknown size_tag '" + f.size_tag + "'");
  if (f.train_data != "seed" && f.train_data != "seed+wild") throw error("unknown train_data '" + f.train_data + "'");
  return c;
}

inline decoding_control variant_control(const round_plan& plan, const variant_factors& f) {
  return {f.decoding_control ? plan.decoding_alpha : 0.0};
}

struct checkpoint_entry {
  model_variant variant;
  std::string path;
  decoding_control control;
};

// Loads every checkpoint, checks each one can score and reply, then swaps
// them in at once. Nothing changes if any step fails.
inline void redeploy_checkpoints(game_server& server, const std::vector<checkpoint_entry>& entries,
                                 std::shared_ptr<const candidate_bank> bank) {
  if (entries.empty()) throw error("redeploy: no checkpoints");
  std::vector<std::pair<model_variant, std::shared_ptr<const deployment>>> next;
  for (const auto& e : entries) {
    auto model = std::make_shared<const model_t>(load_checkpoint<float>(e.path));
    auto dep = deployment::make(e.variant.variant_id, model, bank, e.control, e.path);
    context_bundle probe;
    probe.location_description = "smoke test";
    const auto best = dep->reply(probe);
    if (!std::isfinite(best.final_score)) throw error("redeploy: smoke test failed for '" + e.path + "'");
    auto v = e.variant;
    v.checkpoint_ref = e.path;
    next.emplace_back(std::move(v), std::move(dep));
  }
  server.redeploy(std::move(next));
}

using player_source = std::function<void(game_server&, std::size_t episodes)>;

struct orchestrator_config {
  std::string out_dir = "rounds";
  std::uint64_t eval_seed = 5;
  std::string seed_version = "seed-v1";
};

// Drives collect -> assemble -> train -> evaluate -> redeploy. Rounds are
// synchronous: collection finishes before training starts.
class orchestrator {
 public:
  orchestrator(game_server& server, std::vector<training_pair> seed_pairs, std::shared_ptr<const candidate_bank> bank,
               orchestrator_config cfg)
      : server_(server), seed_pairs_(std::move(seed_pairs)), bank_(std::move(bank)), cfg_(std::move(cfg)) {
    if (!bank_ || !bank_->vetted()) throw error("orchestrator: bank must be vetted");
    std::filesystem::create_directories(cfg_.out_dir);
    server_.on_episode_logged([this](const episode& ep) {
      std::lock_guard lock(mu_);
      collected_.push_back(ep);
    });
  }

  ~orchestrator() { server_.on_episode_logged(nullptr); }

  // Frozen evaluation sets; their episodes are never trained on.
  void set_eval_sets(std::map<std::string, std::vector<training_pair>> sets, std::set<std::string> episode_ids) {
    eval_banks_.clear();
    for (const auto& [name, set] : sets) {
      if (set.empty()) throw error("orchestrator: eval set '" + name + "' is empty");
      eval_banks_.emplace(name, eval_bank(set));
    }
    eval_sets_ = std::move(sets);
    eval_ids_ = std::move(episode_ids);
  }

  // Adds already-logged episodes (for example after a restart).
  void adopt(const std::vector<episode>& eps) {
    std::lock_guard lock(mu_);
    collected_.insert(collected_.end(), eps.begin(), eps.end());
  }

  std::vector<episode> collected() const {
    std::lock_guard lock(mu_);
    return collected_;
  }

  // Round-1 models: every variant trained on the seed corpus only.
  json bootstrap(const round_plan& plan) {
    plan.validate();
    const auto ds = assemble_round(1, seed_pairs_, {}, assembly(plan));
    write_json(path("round1_manifest.json"), ds.manifest);
    auto trained = train_variants(plan, 1, ds.pairs, ds.pairs);
    redeploy_checkpoints(server_, trained, bank_);
    return evaluate(trained);
  }

  // Serves round `plan.round_id` with the current pool, then trains and
  // deploys the models for the next round.
  json run_round(const round_plan& plan, const player_source& players) {
    plan.validate();
    if (server_.pool().active_variants().empty()) throw error("run_round: no deployed variants (bootstrap first)");
    if (eval_sets_.empty()) throw error("run_round: no evaluation sets");
    const int k = plan.round_id;

    json report;
    report["round_id"] = k;
    report["deployed"] = evaluate_deployed();

    server_.set_round(k);
    const auto before = count_round(k);
    players(server_, plan.target_episode_count);
    const auto collected = count_round(k) - before;
    report["episodes_collected"] = collected;
    if (collected != plan.target_episode_count)
      throw error("run_round: collected " + std::to_string(collected) + " episodes, expected " +
                  std::to_string(plan.target_episode_count));

    json rates = json::array();
    for (const auto& v : server_.pool().active_variants()) {
      json r{{"variant_id", v.variant_id}, {"n", v.episodes_served}, {"continues", v.continues}};
      if (v.episodes_served > 0) {
        const auto e = continue_rate(v);
        r["rate"] = e.rate;
        r["stderr"] = e.std_error;
      }
      rates.push_back(std::move(r));
    }
    report["continue_rates"] = std::move(rates);

    const auto eps = collected_snapshot();
    std::size_t new_pairs = 0;
    for (const auto& ep : eps)
      if (ep.round_id == k && !eval_ids_.count(ep.episode_id))
        new_pairs += filter_by_quality(extract_pairs(ep), plan.filter).size();
    report["pairs_extracted"] = new_pairs;

    const auto ds = assemble_round(k + 1, seed_pairs_, eps, assembly(plan));
    const auto manifest_path = path("round" + std::to_string(k + 1) + "_manifest.json");
    write_json(manifest_path, ds.manifest);
    report["dataset"] = {{"round_id", k + 1}, {"pairs", ds.pairs.size()}, {"manifest", manifest_path}};

    const auto seed_only = assemble_round(1, seed_pairs_, {}, assembly(plan));
    std::vector<checkpoint_entry> trained;
    try {
      trained = train_variants(plan, k + 1, seed_only.pairs, ds.pairs);
      redeploy_checkpoints(server_, trained, bank_);
    } catch (const training_diverged& e) {
      report["aborted"] = e.what();
      write_json(path("round" + std::to_string(k) + "_report.json"), report);
      throw round_aborted(std::string("round ") + std::to_string(k) + " aborted: " + e.what());
    }
    report["trained"] = evaluate(trained);
    write_json(path("round" + std::to_string(k) + "_report.json"), report);
    return report;
  }

  std::string path(const std::string& name) const { return (std::filesystem::path(cfg_.out_dir) / name).string(); }

 private:
  assembly_config assembly(const round_plan& plan) const {
    assembly_config a;
    a.filter = plan.filter;
    a.seed_version = cfg_.seed_version;
    a.exclude_episode_ids = eval_ids_;
    return a;
  }

  std::vector<episode> collected_snapshot() const {
    std::lock_guard lock(mu_);
    return collected_;
  }

  std::size_t count_round(int k) const {
    std::lock_guard lock(mu_);
    return static_cast<std::size_t>(
        std::count_if(collected_.begin(), collected_.end(), [&](const episode& e) { return e.round_id == k; }));
  }

  std::vector<checkpoint_entry> train_variants(const round_plan& plan, int for_round,
                                               const std::vector<training_pair>& seed_only,
                                               const std::vector<training_pair>& full) {
    std::vector<checkpoint_entry> out;
    for (const auto& spec : plan.pool) {
      const auto cfg = variant_config(plan, spec.factors);
      const auto& data = spec.factors.train_data == "seed" ? seed_only : full;
      const auto model = fit_model(data, cfg);
      checkpoint_entry e;
      e.variant.variant_id = "r" + std::to_string(for_round) + "-" + spec.name;
      e.variant.factors = spec.factors;
      e.path = path(e.variant.variant_id + ".ckpt");
      e.control = variant_control(plan, spec.factors);
      save_checkpoint(e.path, model);
      out.push_back(std::move(e));
    }
    return out;
  }

  json hits_of(const model_t& m) const {
    json h;
    for (const auto& [name, set] : eval_sets_)
      h[name] = evaluate_hits(m, set, eval_banks_.at(name), cfg_.eval_seed).hits_at_1_of_20;
    return h;
  }

  json evaluate(const std::vector<checkpoint_entry>& entries) const {
    json out = json::array();
    for (const auto& e : entries) {
      const auto dep = server_.pool().deployment_of(e.variant.variant_id);
      out.push_back({{"variant_id", e.variant.variant_id}, {"checkpoint", e.path}, {"hits", hits_of(*dep->model)}});
    }
    return out;
  }

  json evaluate_deployed() const {
    json out = json::array();
    for (const auto& v : server_.pool().active_variants()) {
      const auto dep = server_.pool().deployment_of(v.variant_id);
      out.push_back({{"variant_id", v.variant_id}, {"checkpoint", v.checkpoint_ref}, {"hits", hits_of(*dep->model)}});
    }
    return out;
  }

  static void write_json(const std::string& p, const json& j) {
    std::ofstream os(p, std::ios::trunc);
    if (!os) throw error("cannot write '" + p + "'");
    os << j.dump(2) << "\n";
  }

  game_server& server_;
  std::vector<training_pair> seed_pairs_;
  std::shared_ptr<const candidate_bank> bank_;
  std::map<std::string, std::vector<training_pair>> eval_sets_;
  std::map<std::string, candidate_bank> eval_banks_;
  std::set<std::string> eval_ids_;
  orchestrator_config cfg_;
  mutable std::mutex mu_;
  std::vector<episode> collected_;
};

}  // namespace dfw
