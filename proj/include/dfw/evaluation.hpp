#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "dfw/context.hpp"
#include "dfw/core.hpp"
#include "dfw/ranking.hpp"
#include "dfw/rng.hpp"
#include "dfw/scorer.hpp"

namespace dfw {

inline constexpr std::size_t hits_distractors = 19;

struct eval_report {
  double hits_at_1_of_20 = 0.0;
  std::size_t num_examples = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const eval_report&, const eval_report&) = default;
};

// Hits@1 of 20: each gold competes with 19 distinct distractors drawn from
// `bank` (never the gold text itself). The gold must strictly outscore every
// distractor to count. fn(example_index, candidate_text) -> score.
template <class ScoreFn>
eval_report evaluate_hits_with(const std::vector<training_pair>& eval, const candidate_bank& bank, std::uint64_t seed,
                               ScoreFn&& fn) {
  if (eval.empty()) throw error("evaluate_hits: no evaluation examples");
  if (bank.size() < hits_distractors + 1) throw error("evaluate_hits: bank must hold at least 20 candidates");
  rng_t rng(mix_seed(seed, 0xe7a1));
  std::size_t hits = 0;
  std::vector<std::size_t> picked;
  for (std::size_t x = 0; x < eval.size(); ++x) {
    const auto& gold = eval[x].target;
    picked.clear();
    std::unordered_set<std::size_t> used;
    std::size_t attempts = 0;
    while (picked.size() < hits_distractors) {
      if (++attempts > 100 * bank.size()) throw error("evaluate_hits: not enough distinct distractors");
      const auto i = uniform_index(rng, bank.size());
      if (bank[i].text == gold || !used.insert(i).second) continue;
      picked.push_back(i);
    }
    const double g = fn(x, gold);
    bool hit = true;
    for (auto i : picked)
      if (fn(x, bank[i].text) >= g) {
        hit = false;
        break;
      }
    hits += hit ? 1 : 0;
  }
  return {static_cast<double>(hits) / static_cast<double>(eval.size()), eval.size(), seed};
}

// Raw scores only: decoding control is not applied during evaluation.
template <candidate_scorer S>
eval_report evaluate_hits(const S& scorer, const std::vector<training_pair>& eval, const candidate_bank& bank,
                          std::uint64_t seed, const context_options& opt = {}) {
  std::unordered_map<std::string, typename S::candidate_state> cache;
  std::size_t current = static_cast<std::size_t>(-1);
  typename S::context_state ctx;
  return evaluate_hits_with(eval, bank, seed, [&](std::size_t x, const std::string& text) {
    if (x != current) {
      ctx = scorer.encode_context(serialize_context(eval[x].context, opt));
      current = x;
    }
    auto it = cache.find(text);
    if (it == cache.end()) it = cache.emplace(text, scorer.encode_candidate(text)).first;
    return static_cast<double>(scorer.score(ctx, it->second));
  });
}

// Bank of distinct eval targets, the usual distractor pool.
inline candidate_bank eval_bank(const std::vector<training_pair>& eval) {
  std::vector<std::string> texts;
  texts.reserve(eval.size());
  for (const auto& p : eval) texts.push_back(p.target);
  auto b = candidate_bank::from_texts(texts, "e");
  return b;
}

}  // namespace dfw
