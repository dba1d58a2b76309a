#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <mutex>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "dfw/core.hpp"
#include "dfw/csv.hpp"
#include "dfw/deployment.hpp"
#include "dfw/json_io.hpp"
#include "dfw/rng.hpp"

namespace dfw {

struct variant_factors {
  std::string train_data = "seed";  // "seed" | "seed+wild"
  std::string size_tag = "small";
  bool negative_context = false;
  bool decoding_control = false;

  static const std::vector<std::string>& names() {
    static const std::vector<std::string> n = {"train_data", "size_tag", "negative_context", "decoding_control"};
    return n;
  }

  std::string get(const std::string& factor) const {
    if (factor == "train_data") return train_data;
    if (factor == "size_tag") return size_tag;
    if (factor == "negative_context") return negative_context ? "true" : "false";
    if (factor == "decoding_control") return decoding_control ? "true" : "false";
    throw error("unknown factor '" + factor + "'");
  }

  friend bool operator==(const variant_factors&, const variant_factors&) = default;
};

struct model_variant {
  std::string variant_id;
  std::string checkpoint_ref;
  variant_factors factors;
  std::int64_t episodes_served = 0;
  std::int64_t continues = 0;
  bool active = true;

  friend bool operator==(const model_variant&, const model_variant&) = default;
};

struct rate_estimate {
  double rate = 0.0;
  double std_error = 0.0;
  std::int64_t n = 0;
};

inline rate_estimate continue_rate(const model_variant& v) {
  if (v.episodes_served < 1) throw error("continue_rate: variant '" + v.variant_id + "' has served no episodes");
  const double n = static_cast<double>(v.episodes_served);
  const double r = static_cast<double>(v.continues) / n;
  return {r, std::sqrt(r * (1.0 - r) / n), v.episodes_served};
}

// Mean of (rate_b - rate_a) over variant pairs that differ only in `factor`;
// stderr = sqrt(sum(se_a^2 + se_b^2)) / pairs.
inline rate_estimate factor_effect(const std::vector<model_variant>& variants, const std::string& factor,
                                   const std::string& level_a, const std::string& level_b) {
  const auto& names = variant_factors::names();
  if (std::find(names.begin(), names.end(), factor) == names.end()) throw error("unknown factor '" + factor + "'");
  auto others_equal = [&](const model_variant& x, const model_variant& y) {
    for (const auto& f : names)
      if (f != factor && x.factors.get(f) != y.factors.get(f)) return false;
    return true;
  };
  // canonical pair order so that swapping the levels negates the sum exactly
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (index of a, index of b)
  for (std::size_t i = 0; i < variants.size(); ++i) {
    if (variants[i].factors.get(factor) != level_a || variants[i].episodes_served < 1) continue;
    for (std::size_t j = 0; j < variants.size(); ++j) {
      if (i == j || variants[j].factors.get(factor) != level_b || variants[j].episodes_served < 1) continue;
      if (others_equal(variants[i], variants[j])) pairs.emplace_back(i, j);
    }
  }
  if (pairs.empty()) throw error("factor_effect: no matched variant pairs for " + factor);
  std::sort(pairs.begin(), pairs.end(), [](const auto& x, const auto& y) {
    return std::minmax(x.first, x.second) < std::minmax(y.first, y.second);
  });
  double sum = 0.0, var = 0.0;
  for (auto [a, b] : pairs) {
    const auto ra = continue_rate(variants[a]), rb = continue_rate(variants[b]);
    sum += rb.rate - ra.rate;
    var += ra.std_error * ra.std_error + rb.std_error * rb.std_error;
  }
  const double k = static_cast<double>(pairs.size());
  std::int64_t n = 0;
  for (auto [a, b] : pairs) n += variants[a].episodes_served + variants[b].episodes_served;
  return {sum / k, std::sqrt(var) / k, n};
}

// Variants currently deployed plus the statistics of every variant that was
// ever deployed (retired variants keep counting outcomes of their episodes).
class model_pool {
 public:
  struct assignment {
    std::string variant_id;
    std::shared_ptr<const deployment> snapshot;
  };

  void add_variant(model_variant v, std::shared_ptr<const deployment> snap) {
    std::lock_guard lock(mu_);
    add_locked(std::move(v), std::move(snap));
  }

  // Uniform draw over active variants; counts the episode as served.
  assignment assign_variant(rng_t& rng) {
    std::lock_guard lock(mu_);
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < slots_.size(); ++i)
      if (slots_[i].stats.active) active.push_back(i);
    if (active.empty()) throw error("assign_variant: empty pool");
    auto& s = slots_[active[uniform_index(rng, active.size())]];
    ++s.stats.episodes_served;
    return {s.stats.variant_id, s.snapshot};
  }

  void record_outcome(const std::string& variant_id, bool continued) {
    std::lock_guard lock(mu_);
    auto& s = find_locked(variant_id);
    if (continued) {
      if (s.stats.continues >= s.stats.episodes_served) throw error("record_outcome: more continues than episodes");
      ++s.stats.continues;
    }
  }

  // Used by log replay; creates a retired stats entry for unknown variants.
  void replay_episode(const std::string& variant_id, bool continued) {
    std::lock_guard lock(mu_);
    auto it = std::find_if(slots_.begin(), slots_.end(), [&](const slot& s) { return s.stats.variant_id == variant_id; });
    if (it == slots_.end()) {
      model_variant v;
      v.variant_id = variant_id;
      v.active = false;
      add_locked(std::move(v), nullptr);
      it = slots_.end() - 1;
    }
    ++it->stats.episodes_served;
    if (continued) ++it->stats.continues;
  }

  rate_estimate continue_rate(const std::string& variant_id) const {
    std::lock_guard lock(mu_);
    return dfw::continue_rate(find_locked(variant_id).stats);
  }

  rate_estimate factor_effect(const std::string& factor, const std::string& level_a, const std::string& level_b) const {
    return dfw::factor_effect(snapshot(), factor, level_a, level_b);
  }

  std::vector<model_variant> snapshot() const {
    std::lock_guard lock(mu_);
    std::vector<model_variant> out;
    for (const auto& s : slots_) out.push_back(s.stats);
    return out;
  }

  std::vector<model_variant> active_variants() const {
    auto all = snapshot();
    std::erase_if(all, [](const model_variant& v) { return !v.active; });
    return all;
  }

  std::shared_ptr<const deployment> deployment_of(const std::string& variant_id) const {
    std::lock_guard lock(mu_);
    return find_locked(variant_id).snapshot;
  }

  // Atomically replaces the active set. Retired variants keep their counters;
  // re-listed ids keep theirs and get the new snapshot.
  void redeploy(std::vector<std::pair<model_variant, std::shared_ptr<const deployment>>> next) {
    if (next.empty()) throw error("redeploy: empty variant list");
    for (const auto& [v, snap] : next)
      if (!snap) throw error("redeploy: variant '" + v.variant_id + "' has no snapshot");
    std::lock_guard lock(mu_);
    for (auto& s : slots_) s.stats.active = false;
    for (auto& [v, snap] : next) {
      auto it = std::find_if(slots_.begin(), slots_.end(), [&](const slot& s) { return s.stats.variant_id == v.variant_id; });
      if (it == slots_.end()) {
        v.episodes_served = 0;
        v.continues = 0;
        v.active = true;
        add_locked(std::move(v), std::move(snap));
      } else {
        it->stats.active = true;
        it->stats.factors = v.factors;
        it->stats.checkpoint_ref = v.checkpoint_ref;
        it->snapshot = std::move(snap);
      }
    }
  }

  std::int64_t total_served() const {
    std::lock_guard lock(mu_);
    std::int64_t n = 0;
    for (const auto& s : slots_) n += s.stats.episodes_served;
    return n;
  }

 private:
  struct slot {
    model_variant stats;
    std::shared_ptr<const deployment> snapshot;
  };

  void add_locked(model_variant v, std::shared_ptr<const deployment> snap) {
    for (const auto& s : slots_)
      if (s.stats.variant_id == v.variant_id) throw error("duplicate variant id '" + v.variant_id + "'");
    slots_.push_back({std::move(v), std::move(snap)});
  }

  slot& find_locked(const std::string& id) {
    for (auto& s : slots_)
      if (s.stats.variant_id == id) return s;
    throw error("unknown variant '" + id + "'");
  }
  const slot& find_locked(const std::string& id) const { return const_cast<model_pool*>(this)->find_locked(id); }

  mutable std::mutex mu_;
  std::vector<slot> slots_;
};

// Per-variant rates and every computable factor effect.
inline json metrics_json(const std::vector<model_variant>& variants) {
  json out;
  out["uncertainty"] = "one binomial standard error: sqrt(rate*(1-rate)/n)";
  json rows = json::array();
  for (const auto& v : variants) {
    json r{{"variant_id", v.variant_id},
           {"checkpoint", v.checkpoint_ref},
           {"active", v.active},
           {"n", v.episodes_served},
           {"continues", v.continues},
           {"factors",
            {{"train_data", v.factors.train_data},
             {"size_tag", v.factors.size_tag},
             {"negative_context", v.factors.negative_context},
             {"decoding_control", v.factors.decoding_control}}}};
    if (v.episodes_served > 0) {
      const auto e = continue_rate(v);
      r["rate"] = e.rate;
      r["stderr"] = e.std_error;
    } else {
      r["rate"] = nullptr;
      r["stderr"] = nullptr;
    }
    rows.push_back(std::move(r));
  }
  out["variants"] = std::move(rows);
  json effects = json::array();
  const std::vector<std::pair<std::string, std::pair<std::string, std::string>>> grid = {
      {"train_data", {"seed", "seed+wild"}},
      {"negative_context", {"false", "true"}},
      {"decoding_control", {"false", "true"}}};
  for (const auto& [factor, levels] : grid) {
    try {
      const auto e = factor_effect(variants, factor, levels.first, levels.second);
      effects.push_back({{"factor", factor},
                         {"level_a", levels.first},
                         {"level_b", levels.second},
                         {"delta", e.rate},
                         {"stderr", e.std_error}});
    } catch (const error&) {
      // no matched pairs for this factor
    }
  }
  out["factor_effects"] = std::move(effects);
  return out;
}

inline void write_metrics_csv(std::ostream& os, const std::vector<model_variant>& variants) {
  csv::write_row(os, {"variant_id", "n", "continues", "rate", "stderr"});
  for (const auto& v : variants) {
    if (v.episodes_served < 1) {
      csv::write_row(os, {v.variant_id, "0", "0", "", ""});
      continue;
    }
    const auto e = continue_rate(v);
    csv::write_row(os, {v.variant_id, std::to_string(v.episodes_served), std::to_string(v.continues),
                        csv::number(e.rate), csv::number(e.std_error)});
  }
}

}  // namespace dfw
