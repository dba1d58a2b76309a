#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "dfw/context.hpp"
#include "dfw/core.hpp"
#include "dfw/ranking.hpp"
#include "dfw/scorer.hpp"

namespace dfw {

inline constexpr std::int64_t reference_bank_size = 110877;

struct star_thresholds {
  std::int64_t four_star_rank = 100;
  std::int64_t three_star_rank = 1000;
  std::int64_t two_star_rank = 2000;
  bool proportional_mode = false;
  std::int64_t reference_size = reference_bank_size;

  // Thresholds in effect for a bank of `bank_size` candidates. Proportional
  // thresholds are rounded, floored at 1 and kept strictly increasing.
  star_thresholds effective(std::int64_t bank_size) const {
    if (!(four_star_rank < three_star_rank && three_star_rank < two_star_rank) || four_star_rank < 1)
      throw error("star thresholds must satisfy 1 <= four < three < two");
    if (!proportional_mode) return *this;
    if (reference_size < 1) throw error("reference bank size must be >= 1");
    const double f = static_cast<double>(bank_size) / static_cast<double>(reference_size);
    auto scaled = [&](std::int64_t r) { return std::max<std::int64_t>(1, std::llround(static_cast<double>(r) * f)); };
    star_thresholds t = *this;
    t.proportional_mode = false;
    t.four_star_rank = scaled(four_star_rank);
    t.three_star_rank = std::max(scaled(three_star_rank), t.four_star_rank + 1);
    t.two_star_rank = std::max(scaled(two_star_rank), t.three_star_rank + 1);
    return t;
  }

  int stars_for_rank(std::int64_t rank) const {
    if (rank <= four_star_rank) return 4;
    if (rank <= three_star_rank) return 3;
    if (rank <= two_star_rank) return 2;
    return 1;
  }
};

struct acting_result {
  int stars = 1;
  std::int64_t rank = 0;
};

// Ranks the human response among the bank (human loses ties) and maps the
// 1-based rank to stars. Text with no in-vocabulary token ranks last. The context state is reusable across calls.
template <candidate_scorer S>
acting_result acting_score(const S& scorer, const typename S::context_state& ctx, const std::string& human_text,
                           const encoded_bank<S>& enc, const star_thresholds& thresholds) {
  const auto& bank = *enc.bank;
  if (!bank.vetted() || bank.empty()) throw error("acting_score: bank must be vetted and non-empty");
  const auto n = static_cast<std::int64_t>(bank.size());
  const auto toks = tokenize(human_text);
  // nothing the scorer knows: judged like an empty turn
  if (std::none_of(toks.begin(), toks.end(), [&](const std::string& t) { return scorer.vocab().contains(t); }))
    return {1, n + 1};
  const double mine = scorer.score(ctx, scorer.encode_candidate(human_text));
  std::int64_t better = 0;
  for (const auto& st : enc.states)
    if (scorer.score(ctx, st) >= mine) ++better;
  const std::int64_t rank = better + 1;
  return {thresholds.effective(n).stars_for_rank(rank), rank};
}

template <candidate_scorer S>
acting_result acting_score(const S& scorer, const context_bundle& ctx, const std::string& human_text,
                           const encoded_bank<S>& enc, const star_thresholds& thresholds, const context_options& opt = {}) {
  return acting_score(scorer, scorer.encode_context(serialize_context(ctx, opt)), human_text, enc, thresholds);
}

inline int episode_quality(const episode& ep) { return recompute_quality(ep); }

struct badge_rule {
  int one_badge_points = 11;
  int two_badge_points = 16;
};

inline int award_badges(int quality, const badge_rule& rule = {}) {
  if (rule.one_badge_points >= rule.two_badge_points) throw error("badge rule: one_badge_points must be < two_badge_points");
  if (quality >= rule.two_badge_points) return 2;
  if (quality >= rule.one_badge_points) return 1;
  return 0;
}

struct leaderboard_row {
  std::string player_id;
  std::int64_t total = 0;

  friend bool operator==(const leaderboard_row&, const leaderboard_row&) = default;
};

// Cumulative stars per player; one writer at a time, concurrent readers.
// Ordered by total descending, earliest-joined first on ties.
class leaderboard {
 public:
  void update(const std::string& player_id, std::int64_t stars_delta) {
    if (stars_delta < 0) throw error("leaderboard: negative stars delta");
    std::unique_lock lock(mu_);
    auto [it, inserted] = players_.try_emplace(player_id, entry{0, next_seq_});
    if (inserted) ++next_seq_;
    it->second.total += stars_delta;
  }

  std::int64_t total(const std::string& player_id) const {
    std::shared_lock lock(mu_);
    auto it = players_.find(player_id);
    return it == players_.end() ? 0 : it->second.total;
  }

  std::vector<leaderboard_row> top(std::size_t n = static_cast<std::size_t>(-1)) const {
    std::vector<std::pair<entry, std::string>> rows;
    {
      std::shared_lock lock(mu_);
      rows.reserve(players_.size());
      for (const auto& [id, e] : players_) rows.emplace_back(e, id);
    }
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
      if (a.first.total != b.first.total) return a.first.total > b.first.total;
      return a.first.join_seq < b.first.join_seq;
    });
    std::vector<leaderboard_row> out;
    for (std::size_t i = 0; i < rows.size() && i < n; ++i) out.push_back({rows[i].second, rows[i].first.total});
    return out;
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return players_.size();
  }

 private:
  struct entry {
    std::int64_t total = 0;
    std::uint64_t join_seq = 0;
  };
  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, entry> players_;
  std::uint64_t next_seq_ = 0;
};

inline void leaderboard_update(leaderboard& board, const std::string& player_id, std::int64_t stars_delta) {
  board.update(player_id, stars_delta);
}

}  // namespace dfw
