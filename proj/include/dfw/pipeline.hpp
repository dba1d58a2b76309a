#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "dfw/core.hpp"
#include "dfw/csv.hpp"
#include "dfw/deployment.hpp"
#include "dfw/evaluation.hpp"
#include "dfw/game.hpp"
#include "dfw/json_io.hpp"
#include "dfw/rng.hpp"
#include "dfw/text.hpp"
#include "dfw/training.hpp"

namespace dfw {

// ---- pair extraction and filtering ----

// One pair per turn written by `target`; the context is everything before
// that turn, seen from the target speaker's side.
inline std::vector<training_pair> extract_pairs(const episode& ep, speaker target = speaker::human) {
  std::vector<training_pair> out;
  const int q = ep.quality.value_or(recompute_quality(ep));
  for (std::size_t k = 0; k < ep.turns.size(); ++k) {
    if (ep.turns[k].who != target) continue;
    training_pair p;
    p.context = context_for(ep, target, k);
    p.target = ep.turns[k].text;
    p.source = data_source::wild;
    p.round_id = ep.round_id;
    p.quality = q;
    p.target_author = target;
    p.episode_id = ep.episode_id;
    out.push_back(std::move(p));
  }
  return out;
}

inline std::vector<training_pair> extract_pairs(const std::vector<episode>& eps, speaker target = speaker::human) {
  std::vector<training_pair> out;
  for (const auto& ep : eps) {
    auto p = extract_pairs(ep, target);
    out.insert(out.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
  }
  return out;
}

struct quality_filter_config {
  int C = 0;
  bool enabled = false;

  void validate() const {
    if (C < 0) throw error("quality filter: C must be >= 0");
  }
};

inline std::vector<training_pair> filter_by_quality(const std::vector<training_pair>& pairs,
                                                    const quality_filter_config& cfg) {
  cfg.validate();
  if (!cfg.enabled) return pairs;
  std::vector<training_pair> out;
  std::copy_if(pairs.begin(), pairs.end(), std::back_inserter(out),
               [&](const training_pair& p) { return p.quality >= cfg.C; });
  return out;
}

inline std::string bin_quality(int quality) {
  if (quality < 0) throw error("bin_quality: negative quality");
  if (quality <= 5) return "≤5";
  if (quality >= 16) return "≥16";
  return std::to_string(quality);
}

inline const std::vector<std::string>& quality_bin_labels() {
  static const std::vector<std::string> labels = [] {
    std::vector<std::string> v{"≤5"};
    for (int q = 6; q <= 15; ++q) v.push_back(std::to_string(q));
    v.push_back("≥16");
    return v;
  }();
  return labels;
}

// ---- evaluation sets ----

struct eval_sets {
  std::vector<training_pair> validation;
  std::vector<training_pair> test;
  std::set<std::string> episode_ids;  // every episode used by either set
};

// Complete episodes with quality >= min_quality, split by a hash of the
// episode id (even -> validation, odd -> test).
inline eval_sets build_eval_sets(const std::vector<episode>& episodes, int min_quality = 9) {
  eval_sets out;
  std::size_t eligible = 0, to_valid = 0, to_test = 0;
  for (const auto& ep : episodes) {
    if (!ep.complete || ep.quality.value_or(recompute_quality(ep)) < min_quality) continue;
    if (!out.episode_ids.insert(ep.episode_id).second) continue;
    ++eligible;
    auto pairs = extract_pairs(ep);
    auto& dst = (hash_string(ep.episode_id) & 1) == 0 ? out.validation : out.test;
    (&dst == &out.validation ? to_valid : to_test) += 1;
    dst.insert(dst.end(), pairs.begin(), pairs.end());
  }
  if (to_valid == 0 || to_test == 0)
    throw error("build_eval_sets: too few eligible episodes (" + std::to_string(eligible) + " with quality >= " +
                std::to_string(min_quality) + ", need at least one per split)");
  return out;
}

// ---- round assembly ----

struct assembly_config {
  quality_filter_config filter;
  speaker target_author = speaker::human;
  std::string seed_version = "seed-v1";
  std::set<std::string> exclude_episode_ids;  // frozen eval episodes
};

struct round_dataset {
  int round_id = 1;
  std::vector<training_pair> pairs;
  json manifest;
};

namespace detail {

// Wild episodes usable by `round_id`, deduplicated and in canonical order.
inline std::vector<const episode*> round_inputs(int round_id, const std::vector<episode>& wild,
                                                const std::set<std::string>& exclude) {
  std::map<std::pair<int, std::string>, const episode*> picked;
  if (round_id <= 1) return {};
  for (const auto& ep : wild) {
    if (ep.round_id >= round_id || exclude.count(ep.episode_id)) continue;
    picked.emplace(std::make_pair(ep.round_id, ep.episode_id), &ep);
  }
  std::vector<const episode*> out;
  for (const auto& [k, ep] : picked) out.push_back(ep);
  return out;
}

}  // namespace detail

// Seed pairs plus the filtered wild pairs of every collection round before
// `round_id`. Round 1 is seed-only.
inline round_dataset assemble_round(int round_id, const std::vector<training_pair>& seed_pairs,
                                    const std::vector<episode>& wild_episodes, const assembly_config& cfg = {}) {
  if (round_id < 1) throw error("assemble_round: round_id must be >= 1");
  cfg.filter.validate();
  round_dataset out;
  out.round_id = round_id;
  out.pairs = seed_pairs;

  std::map<int, std::pair<std::vector<std::string>, std::size_t>> by_round;  // ids, pair count
  for (const auto* ep : detail::round_inputs(round_id, wild_episodes, cfg.exclude_episode_ids)) {
    auto pairs = filter_by_quality(extract_pairs(*ep, cfg.target_author), cfg.filter);
    auto& slot = by_round[ep->round_id];
    slot.first.push_back(ep->episode_id);
    slot.second += pairs.size();
    out.pairs.insert(out.pairs.end(), pairs.begin(), pairs.end());
  }

  json wild = json::array();
  for (const auto& [r, slot] : by_round)
    wild.push_back({{"collection_round", r}, {"episode_ids", slot.first}, {"pairs", slot.second}});
  out.manifest = {{"schema_version", schema_version},
                  {"round_id", round_id},
                  {"seed_corpus", {{"version", cfg.seed_version}, {"pairs", seed_pairs.size()}}},
                  {"filter", {{"enabled", cfg.filter.enabled}, {"C", cfg.filter.C}}},
                  {"target_author", to_string(cfg.target_author)},
                  {"excluded_eval_episodes", cfg.exclude_episode_ids.size()},
                  {"wild", std::move(wild)},
                  {"total_pairs", out.pairs.size()}};
  return out;
}

// Rebuilds a round's pairs from its manifest and the raw inputs; throws if
// anything the manifest names is missing or the counts disagree.
inline std::vector<training_pair> reconstruct_round(const json& manifest, const std::vector<training_pair>& seed_pairs,
                                                    const std::vector<episode>& episodes) {
  if (manifest.at("seed_corpus").at("pairs").get<std::size_t>() != seed_pairs.size())
    throw error("reconstruct_round: seed corpus size differs from manifest");
  quality_filter_config filter{manifest.at("filter").at("C").get<int>(), manifest.at("filter").at("enabled").get<bool>()};
  const auto target = parse_speaker(manifest.at("target_author").get<std::string>());
  std::unordered_map<std::string, const episode*> index;
  for (const auto& ep : episodes) index.emplace(ep.episode_id, &ep);

  std::vector<training_pair> out = seed_pairs;
  for (const auto& block : manifest.at("wild")) {
    std::size_t n = 0;
    for (const auto& id : block.at("episode_ids")) {
      auto it = index.find(id.get<std::string>());
      if (it == index.end()) throw error("reconstruct_round: episode '" + id.get<std::string>() + "' not in log");
      auto pairs = filter_by_quality(extract_pairs(*it->second, target), filter);
      n += pairs.size();
      out.insert(out.end(), pairs.begin(), pairs.end());
    }
    if (n != block.at("pairs").get<std::size_t>()) throw error("reconstruct_round: pair count mismatch");
  }
  if (out.size() != manifest.at("total_pairs").get<std::size_t>()) throw error("reconstruct_round: total mismatch");
  return out;
}

// ---- statistics ----

struct dataset_stats {
  std::size_t num_episodes = 0;
  std::size_t num_utterances = 0;
  std::size_t num_human_utterances = 0;
  std::size_t unique_locations = 0;
  std::size_t unique_characters = 0;
  std::size_t unique_tokens = 0;
  double avg_human_utterance_length = 0.0;
  std::size_t num_players = 0;

  friend bool operator==(const dataset_stats&, const dataset_stats&) = default;
};

inline dataset_stats compute_stats(const std::vector<episode>& episodes) {
  if (episodes.empty()) throw error("dataset_stats: no episodes");
  dataset_stats s;
  std::unordered_set<std::string> locs, chars, toks, players;
  std::size_t human_tokens = 0;
  for (const auto& ep : episodes) {
    ++s.num_episodes;
    locs.insert(ep.where.id);
    chars.insert(ep.human_character.id);
    chars.insert(ep.model_character.id);
    players.insert(ep.player_id);
    for (const auto& t : ep.turns) {
      ++s.num_utterances;
      const auto tt = tokenize(t.text);
      toks.insert(tt.begin(), tt.end());
      if (t.who == speaker::human) {
        ++s.num_human_utterances;
        human_tokens += tt.size();
      }
    }
  }
  s.unique_locations = locs.size();
  s.unique_characters = chars.size();
  s.unique_tokens = toks.size();
  s.num_players = players.size();
  if (s.num_human_utterances)
    s.avg_human_utterance_length = static_cast<double>(human_tokens) / static_cast<double>(s.num_human_utterances);
  return s;
}

// Pair view: one utterance per target, locations by description and
// characters by persona; players are not recoverable from pairs.
inline dataset_stats compute_stats(const std::vector<training_pair>& pairs) {
  if (pairs.empty()) throw error("dataset_stats: no pairs");
  dataset_stats s;
  std::unordered_set<std::string> eps, locs, chars, toks;
  std::size_t human_tokens = 0;
  for (const auto& p : pairs) {
    eps.insert(p.episode_id);
    locs.insert(p.context.location_description);
    chars.insert(p.context.self_persona);
    ++s.num_utterances;
    const auto tt = tokenize(p.target);
    toks.insert(tt.begin(), tt.end());
    if (p.target_author == speaker::human) {
      ++s.num_human_utterances;
      human_tokens += tt.size();
    }
  }
  s.num_episodes = eps.size();
  s.unique_locations = locs.size();
  s.unique_characters = chars.size();
  s.unique_tokens = toks.size();
  if (s.num_human_utterances)
    s.avg_human_utterance_length = static_cast<double>(human_tokens) / static_cast<double>(s.num_human_utterances);
  return s;
}

inline void write_stats_csv(std::ostream& os, const std::vector<std::pair<std::string, dataset_stats>>& rows) {
  csv::write_row(os, {"split", "num_episodes", "num_utterances", "num_human_utterances", "unique_locations",
                      "unique_characters", "unique_tokens", "avg_human_utterance_length", "num_players"});
  for (const auto& [name, s] : rows)
    csv::write_row(os, {name, std::to_string(s.num_episodes), std::to_string(s.num_utterances),
                        std::to_string(s.num_human_utterances), std::to_string(s.unique_locations),
                        std::to_string(s.unique_characters), std::to_string(s.unique_tokens),
                        csv::number(s.avg_human_utterance_length), std::to_string(s.num_players)});
}

// ---- fitting helpers ----

// Vocabulary over everything a model trained on `pairs` can see.
inline vocabulary vocab_for(const std::vector<training_pair>& pairs) {
  std::vector<std::string> docs;
  std::unordered_set<std::string> seen;
  auto add = [&](const std::string& s) {
    if (seen.insert(s).second) docs.push_back(s);
  };
  for (const auto& p : pairs) {
    docs.push_back(p.target);
    add(p.context.location_description);
    add(p.context.self_persona);
    add(p.context.partner_name);
    for (const auto& h : p.context.dialogue_history) add(h.speaker_name);
  }
  return build_vocab(docs);
}

// Fresh model with a vocabulary built from `pairs`, then trained on them.
inline model_t fit_model(const std::vector<training_pair>& pairs, const poly_lite_config& cfg,
                         train_result_trace* trace = nullptr, const candidate_bank* negatives = nullptr) {
  model_t m(cfg, vocab_for(pairs));
  auto t = train(m, pairs, negatives);
  if (trace) *trace = std::move(t);
  return m;
}

// ---- learning curves ----

enum class stream_kind { wild_only, seed_only, mix_50_50 };

inline std::string_view to_string(stream_kind k) {
  switch (k) {
    case stream_kind::wild_only: return "wild_only";
    case stream_kind::seed_only: return "seed_only";
    case stream_kind::mix_50_50: return "mix_50_50";
  }
  return "?";
}

inline stream_kind parse_stream_kind(std::string_view s) {
  if (s == "wild_only") return stream_kind::wild_only;
  if (s == "seed_only") return stream_kind::seed_only;
  if (s == "mix_50_50") return stream_kind::mix_50_50;
  throw error("unknown stream '" + std::string(s) + "'");
}

struct cost_model {
  double seed_cost = 1.0;
  double wild_cost = 0.2;

  double of(const training_pair& p) const { return p.source == data_source::wild ? wild_cost : seed_cost; }
};

// The mix alternates seed, wild, seed, ... and continues with whichever
// source is left once the other runs out.
inline std::vector<training_pair> make_stream(stream_kind kind, const std::vector<training_pair>& seed,
                                              const std::vector<training_pair>& wild) {
  if (kind == stream_kind::seed_only) return seed;
  if (kind == stream_kind::wild_only) return wild;
  std::vector<training_pair> out;
  out.reserve(seed.size() + wild.size());
  for (std::size_t i = 0; i < std::max(seed.size(), wild.size()); ++i) {
    if (i < seed.size()) out.push_back(seed[i]);
    if (i < wild.size()) out.push_back(wild[i]);
  }
  return out;
}

struct curve_row {
  std::string stream;
  std::size_t n = 0;
  double cumulative_cost = 0.0;
  double hits = 0.0;
};

inline void write_curve_csv(std::ostream& os, const std::vector<curve_row>& rows) {
  csv::write_row(os, {"stream", "n", "cumulative_cost", "hits_at_1_of_20"});
  for (const auto& r : rows)
    csv::write_row(os, {r.stream, std::to_string(r.n), csv::number(r.cumulative_cost), csv::number(r.hits)});
}

// One fresh model per checkpoint, trained on the first n stream examples.
// Checkpoints past the end of the stream collapse onto its full length.
inline std::vector<curve_row> learning_curve(stream_kind kind, const std::vector<training_pair>& seed,
                                             const std::vector<training_pair>& wild,
                                             const std::vector<training_pair>& eval, const candidate_bank& bank,
                                             std::vector<std::size_t> checkpoints, const cost_model& cost,
                                             const poly_lite_config& cfg, std::uint64_t eval_seed,
                                             std::vector<std::string>* warnings = nullptr) {
  if (!std::is_sorted(checkpoints.begin(), checkpoints.end())) throw error("learning_curve: checkpoints must ascend");
  const auto stream = make_stream(kind, seed, wild);
  if (stream.empty()) throw error("learning_curve: empty stream");
  std::vector<curve_row> rows;
  for (auto n : checkpoints) {
    if (n == 0) continue;
    if (n > stream.size()) {
      if (warnings)
        warnings->push_back(std::string(to_string(kind)) + ": checkpoint " + std::to_string(n) + " truncated to " +
                            std::to_string(stream.size()));
      n = stream.size();
    }
    if (!rows.empty() && rows.back().n == n) continue;
    std::vector<training_pair> head(stream.begin(), stream.begin() + static_cast<std::ptrdiff_t>(n));
    double c = 0.0;
    for (const auto& p : head) c += cost.of(p);
    const auto m = fit_model(head, cfg);
    rows.push_back({std::string(to_string(kind)), n, c, evaluate_hits(m, eval, bank, eval_seed).hits_at_1_of_20});
  }
  return rows;
}

// ---- quality threshold sweep ----

struct sweep_row {
  int C = 0;
  std::size_t train_pairs = 0;
  double hits = 0.0;
};

struct sweep_result {
  std::vector<sweep_row> rows;
  int best_C = 0;
};

// Trains one model per threshold on seed pairs plus the wild pairs that
// survive it; the best C maximizes validation hits (ties -> smaller C).
inline sweep_result sweep_c(const std::vector<training_pair>& seed_pairs, const std::vector<episode>& wild,
                            const std::vector<training_pair>& validation, const candidate_bank& bank,
                            const std::vector<int>& thresholds, const poly_lite_config& cfg,
                            std::uint64_t eval_seed) {
  if (thresholds.empty()) throw error("sweep_c: no thresholds");
  const auto wild_pairs = extract_pairs(wild);
  sweep_result out;
  double best = -1.0;
  for (int c : thresholds) {
    auto pairs = seed_pairs;
    auto kept = filter_by_quality(wild_pairs, {c, true});
    pairs.insert(pairs.end(), kept.begin(), kept.end());
    if (pairs.empty()) throw error("sweep_c: threshold " + std::to_string(c) + " leaves no training data");
    const auto m = fit_model(pairs, cfg);
    const double h = evaluate_hits(m, validation, bank, eval_seed).hits_at_1_of_20;
    out.rows.push_back({c, pairs.size(), h});
    if (h > best || (h == best && c < out.best_C)) {
      best = h;
      out.best_C = c;
    }
  }
  return out;
}

inline void write_sweep_csv(std::ostream& os, const sweep_result& r) {
  csv::write_row(os, {"C", "train_pairs", "hits_at_1_of_20", "best"});
  for (const auto& row : r.rows)
    csv::write_row(os, {std::to_string(row.C), std::to_string(row.train_pairs), csv::number(row.hits),
                        row.C == r.best_C ? "1" : "0"});
}

// ---- quality-bin study ----

struct bin_study_config {
  std::size_t per_bin = 500;                  // pairs per bin, capped by the smallest bin
  std::vector<std::uint64_t> seeds{1, 2, 3};  // sample + init seeds, averaged
};

struct bin_row {
  std::string label;
  std::size_t available = 0;
  std::size_t used = 0;
  double mean_hits = 0.0;
};

struct bin_study_result {
  std::vector<bin_row> bins;
  double all_data_hits = 0.0;
  double without_low_bins_hits = 0.0;  // quality >= 6 only
  std::size_t all_pairs = 0;
  std::size_t high_pairs = 0;
};

namespace detail {

inline double mean_hits_over_seeds(const std::vector<training_pair>& data, const std::vector<training_pair>& eval,
                                   const candidate_bank& bank, poly_lite_config cfg, std::uint64_t s,
                                   std::uint64_t eval_seed) {
  cfg.seed = s;
  return evaluate_hits(fit_model(data, cfg), eval, bank, eval_seed).hits_at_1_of_20;
}

}  // namespace detail

// Equal-size training samples from every quality bin, one fresh model each.
inline std::vector<bin_row> quality_bin_curve(const std::vector<episode>& train_episodes,
                                              const std::vector<training_pair>& eval, const candidate_bank& bank,
                                              const bin_study_config& study, const poly_lite_config& cfg,
                                              std::uint64_t eval_seed) {
  if (study.seeds.empty()) throw error("quality_bin_curve: no seeds");
  const auto pairs = extract_pairs(train_episodes);
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < pairs.size(); ++i) members[bin_quality(pairs[i].quality)].push_back(i);
  std::size_t per_bin = study.per_bin;
  for (const auto& l : quality_bin_labels()) {
    const auto n = members[l].size();
    if (n == 0) throw error("quality_bin_curve: bin " + l + " is empty");
    per_bin = std::min(per_bin, n);
  }
  std::vector<bin_row> rows;
  for (const auto& l : quality_bin_labels()) {
    bin_row row{l, members[l].size(), per_bin, 0.0};
    for (auto s : study.seeds) {
      auto idx = members[l];
      rng_t rng(mix_seed(s, hash_string(l)));
      std::shuffle(idx.begin(), idx.end(), rng);
      std::vector<training_pair> sample;
      for (std::size_t i = 0; i < per_bin; ++i) sample.push_back(pairs[idx[i]]);
      row.mean_hits += detail::mean_hits_over_seeds(sample, eval, bank, cfg, s, eval_seed);
    }
    row.mean_hits /= static_cast<double>(study.seeds.size());
    rows.push_back(row);
  }
  return rows;
}

// All pairs against the pairs of quality >= 6.
inline bin_study_result low_bin_ablation(const std::vector<episode>& train_episodes,
                                         const std::vector<training_pair>& eval, const candidate_bank& bank,
                                         const std::vector<std::uint64_t>& seeds, const poly_lite_config& cfg,
                                         std::uint64_t eval_seed) {
  if (seeds.empty()) throw error("low_bin_ablation: no seeds");
  const auto pairs = extract_pairs(train_episodes);
  std::vector<training_pair> high;
  std::copy_if(pairs.begin(), pairs.end(), std::back_inserter(high), [](const auto& p) { return p.quality >= 6; });
  if (high.empty()) throw error("low_bin_ablation: no pairs with quality >= 6");
  bin_study_result out;
  out.all_pairs = pairs.size();
  out.high_pairs = high.size();
  for (auto s : seeds) {
    out.all_data_hits += detail::mean_hits_over_seeds(pairs, eval, bank, cfg, s, eval_seed);
    out.without_low_bins_hits += detail::mean_hits_over_seeds(high, eval, bank, cfg, s, eval_seed);
  }
  out.all_data_hits /= static_cast<double>(seeds.size());
  out.without_low_bins_hits /= static_cast<double>(seeds.size());
  return out;
}

inline void write_bins_csv(std::ostream& os, const bin_study_result& r) {
  csv::write_row(os, {"bin", "available_pairs", "used_pairs", "mean_hits_at_1_of_20"});
  for (const auto& b : r.bins)
    csv::write_row(os, {b.label, std::to_string(b.available), std::to_string(b.used), csv::number(b.mean_hits)});
  csv::write_row(os, {"all", std::to_string(r.all_pairs), std::to_string(r.all_pairs), csv::number(r.all_data_hits)});
  csv::write_row(os, {"≥6", std::to_string(r.high_pairs), std::to_string(r.high_pairs),
                      csv::number(r.without_low_bins_hits)});
}

}  // namespace dfw
