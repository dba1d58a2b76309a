#pragma once

#include <algorithm>
#include <memory>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "dfw/context.hpp"
#include "dfw/safety.hpp"
#include "dfw/scorer.hpp"
#include "dfw/text.hpp"

namespace dfw {

struct bank_entry {
  std::string id;
  std::string text;
};

// The set of utterances a retrieval model may emit. Exact duplicates are
// collapsed on construction.
class candidate_bank {
 public:
  candidate_bank() = default;

  static candidate_bank from_texts(const std::vector<std::string>& texts, const std::string& id_prefix = "c") {
    candidate_bank b;
    std::unordered_set<std::string> seen;
    for (const auto& t : texts) {
      if (tokenize(t).empty() || !seen.insert(t).second) continue;
      b.entries_.push_back({id_prefix + hex_token(b.entries_.size(), 6), t});
    }
    b.reindex();
    return b;
  }

  static candidate_bank from_entries(std::vector<bank_entry> entries) {
    candidate_bank b;
    b.entries_ = std::move(entries);
    b.reindex();
    return b;
  }

  // Drops every candidate the blocklist matches and marks the bank vetted.
  std::size_t vet(const blocklist& bl) {
    const auto before = entries_.size();
    std::erase_if(entries_, [&](const bank_entry& e) { return bl.matches(e.text); });
    reindex();
    vetted_ = true;
    return before - entries_.size();
  }

  bool vetted() const { return vetted_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<bank_entry>& entries() const { return entries_; }
  const bank_entry& operator[](std::size_t i) const { return entries_[i]; }

  std::optional<std::size_t> find_id(const std::string& id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) return std::nullopt;
    return it->second;
  }

 private:
  void reindex() {
    by_id_.clear();
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (!by_id_.emplace(entries_[i].id, i).second) throw error("duplicate candidate id " + entries_[i].id);
  }

  std::vector<bank_entry> entries_;
  std::unordered_map<std::string, std::size_t> by_id_;
  bool vetted_ = false;
};

// Candidate encodings and specificities cached against one scorer snapshot.
template <candidate_scorer S>
struct encoded_bank {
  std::shared_ptr<const candidate_bank> bank;
  std::vector<typename S::candidate_state> states;
  std::vector<double> specificity;

  encoded_bank() = default;
  encoded_bank(const S& scorer, std::shared_ptr<const candidate_bank> b) : bank(std::move(b)) {
    states.reserve(bank->size());
    specificity.reserve(bank->size());
    for (const auto& e : bank->entries()) {
      states.push_back(scorer.encode_candidate(e.text));
      specificity.push_back(dfw::specificity(e.text, scorer.vocab()));
    }
  }
};

struct decoding_control {
  double alpha = 0.0;  // weight on candidate specificity
};

struct scored_candidate {
  std::string id;
  std::size_t index = 0;
  double raw = 0.0;
  double final_score = 0.0;
};

template <candidate_scorer S>
std::vector<scored_candidate> rank_candidates(const S& scorer, const typename S::context_state& ctx,
                                              const encoded_bank<S>& enc, decoding_control control,
                                              const std::set<std::string>& exclude = {}) {
  const auto& bank = *enc.bank;
  if (!bank.vetted()) throw error("rank_candidates: candidate bank is not vetted");
  if (!std::isfinite(control.alpha)) throw error("rank_candidates: non-finite alpha");
  std::vector<scored_candidate> out;
  out.reserve(bank.size());
  for (std::size_t i = 0; i < bank.size(); ++i) {
    if (exclude.count(bank[i].id)) continue;
    const double raw = scorer.score(ctx, enc.states[i]);
    out.push_back({bank[i].id, i, raw, raw + control.alpha * enc.specificity[i]});
  }
  if (out.empty()) throw error("no candidates");
  std::sort(out.begin(), out.end(), [](const scored_candidate& a, const scored_candidate& b) {
    if (a.final_score != b.final_score) return a.final_score > b.final_score;
    return a.id < b.id;
  });
  return out;
}

template <candidate_scorer S>
std::vector<scored_candidate> rank_candidates(const S& scorer, const context_bundle& ctx, const encoded_bank<S>& enc,
                                              decoding_control control, const std::set<std::string>& exclude = {},
                                              const context_options& opt = {}) {
  return rank_candidates(scorer, scorer.encode_context(serialize_context(ctx, opt)), enc, control, exclude);
}

}  // namespace dfw
