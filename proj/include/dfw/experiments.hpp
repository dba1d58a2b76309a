#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dfw/evaluation.hpp"
#include "dfw/orchestrator.hpp"
#include "dfw/pipeline.hpp"
#include "dfw/sim.hpp"

// Desk-scale versions of the learning experiments, all on the synthetic
// world. Each returns raw numbers; judging them is left to the caller.
namespace dfw::experiments {

// Faster-learning settings shared by every experiment here; the library
// defaults stay untouched.
inline poly_lite_config train_config() {
  poly_lite_config c;
  c.epochs = 10;
  c.learning_rate = 10.0;
  c.init_scale = 1.0;
  return c;
}

inline constexpr std::uint64_t eval_seed = 5;

inline std::vector<episode> wild_episodes(const synthetic_world& w, std::size_t n, std::uint64_t seed, int round_id,
                                          double clean_prob = 0.9) {
  rng_t rng(seed);
  synthetic_world::wild_episode_options o;
  o.round_id = round_id;
  o.clean_prob = clean_prob;
  std::vector<episode> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(w.wild_episode(rng, "w" + hex_token(mix_seed(seed, i), 10), o));
  return out;
}

// Wild-style benchmark: test split of clean-ish wild episodes.
inline eval_sets wild_benchmark(const synthetic_world& w, std::size_t episodes = 600, std::uint64_t seed = 99) {
  return build_eval_sets(wild_episodes(w, episodes, seed, 1));
}

// learning curves per stream

struct curves_options {
  std::size_t n = 2000;  // pairs per source; checkpoints at n/8 .. 2n
  world_config world = [] {
    world_config c;
    c.wild_shared_prob = 1.0;
    return c;
  }();
};

struct curves_result {
  std::vector<curve_row> rows;
  std::vector<std::string> warnings;
  std::vector<std::size_t> checkpoints;

  double at(stream_kind k, std::size_t n) const {
    for (const auto& r : rows)
      if (r.stream == to_string(k) && r.n == n) return r.hits;
    throw error("curves: no row for " + std::string(to_string(k)) + " at " + std::to_string(n));
  }
  bool has(stream_kind k, std::size_t n) const {
    for (const auto& r : rows)
      if (r.stream == to_string(k) && r.n == n) return true;
    return false;
  }
};

inline curves_result learning_curves(const curves_options& opt = {}) {
  synthetic_world w(opt.world);
  const auto ev = wild_benchmark(w);
  const auto bank = eval_bank(ev.test);
  const auto n = opt.n;
  auto seed = w.seed_pairs(n / 12 + 1, 1);
  seed.resize(n);
  auto wild = extract_pairs(wild_episodes(w, n / 6 + 1, 2, 1));
  wild.resize(n);
  curves_result out;
  out.checkpoints = {n / 8, n / 4, n / 2, n, 2 * n};
  for (auto k : {stream_kind::seed_only, stream_kind::wild_only, stream_kind::mix_50_50}) {
    auto rows = learning_curve(k, seed, wild, ev.test, bank, out.checkpoints, {}, train_config(), eval_seed,
                               &out.warnings);
    out.rows.insert(out.rows.end(), rows.begin(), rows.end());
  }
  return out;
}

// human vs model utterances as targets

struct target_author_result {
  double human_hits = 0.0;
  double model_hits = 0.0;
  std::size_t human_pairs = 0;
  std::size_t model_pairs = 0;
};

inline target_author_result target_author_study(std::size_t episodes = 300, std::size_t seed_dialogues = 100) {
  synthetic_world w;
  const auto ev = wild_benchmark(w);
  const auto bank = eval_bank(ev.test);
  const auto eps = wild_episodes(w, episodes, 3, 1);
  const auto seed = w.seed_pairs(seed_dialogues, 1);
  target_author_result out;
  for (auto sp : {speaker::human, speaker::model}) {
    auto pairs = seed;
    const auto x = extract_pairs(eps, sp);
    pairs.insert(pairs.end(), x.begin(), x.end());
    const auto hits = evaluate_hits(fit_model(pairs, train_config()), ev.test, bank, eval_seed).hits_at_1_of_20;
    (sp == speaker::human ? out.human_hits : out.model_hits) = hits;
    (sp == speaker::human ? out.human_pairs : out.model_pairs) = x.size();
  }
  return out;
}

// quality bins

struct bins_options {
  std::size_t corpus = 6000;
  std::size_t per_bin = 150;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::size_t ablation_episodes = 1000;
  std::vector<std::uint64_t> ablation_seeds{1, 2};
};

inline bin_study_result quality_bins(const bins_options& opt = {}) {
  synthetic_world w;
  const auto train = w.noisy_corpus(opt.corpus, 11);
  const auto ev = build_eval_sets(w.noisy_corpus(4000, 12));
  const auto bank = eval_bank(ev.test);
  const auto cfg = train_config();
  const std::vector<episode> head(train.begin(),
                                  train.begin() + static_cast<std::ptrdiff_t>(std::min(opt.ablation_episodes, train.size())));
  auto out = low_bin_ablation(head, ev.test, bank, opt.ablation_seeds, cfg, eval_seed);
  bin_study_config sc;
  sc.per_bin = opt.per_bin;
  sc.seeds = opt.seeds;
  out.bins = quality_bin_curve(train, ev.test, bank, sc, cfg, eval_seed);
  return out;
}

// threshold sweep on a corpus whose low-quality targets are off-topic

struct sweep_options {
  std::size_t corpus = 1500;
  int scrambled_below = 9;
  std::vector<int> thresholds{0, 6, 9, 12};
};

inline sweep_result threshold_sweep(const sweep_options& opt = {}) {
  synthetic_world w;
  auto eps = w.noisy_corpus(opt.corpus, 21);
  synthetic_world::shuffle_low_quality_targets(eps, opt.scrambled_below, 4);
  const auto ev = build_eval_sets(w.noisy_corpus(2000, 22));
  return sweep_c(w.seed_pairs(50, 1), eps, ev.validation, eval_bank(ev.validation), opt.thresholds, train_config(),
                 eval_seed);
}

// multi-round flywheel with sim players

struct flywheel_options {
  std::size_t episodes_per_round = 500;
  std::size_t seed_dialogues = 300;
  std::size_t eval_episodes = 300;
  int rounds = 3;
  std::string out_dir = "rounds";
  std::uint64_t player_seed = 42;
  std::vector<variant_spec> pool{{"A", {"seed+wild", "small", true, false}}};
  poly_lite_config train = train_config();
  quality_filter_config filter;
  double decoding_alpha = 0.5;
};

struct flywheel_result {
  std::vector<json> reports;
  std::vector<double> deployed_hits;  // per round, first variant, wild eval set
  std::size_t eval_examples = 0;
};

inline flywheel_result flywheel(const flywheel_options& opt = {}) {
  synthetic_world w;
  const auto seed = w.seed_pairs(opt.seed_dialogues, 1);
  std::vector<std::string> texts;
  for (const auto& p : seed) texts.push_back(p.target);
  auto bank = std::make_shared<candidate_bank>(candidate_bank::from_texts(texts, "c"));
  bank->vet(w.safety());

  game_server server(w.catalog(), w.safety(), game_config{});
  orchestrator orch(server, seed, bank, {opt.out_dir, eval_seed, "seed-v1"});
  round_plan plan;
  plan.target_episode_count = opt.episodes_per_round;
  plan.train = opt.train;
  plan.pool = opt.pool;
  plan.filter = opt.filter;
  plan.decoding_alpha = opt.decoding_alpha;
  orch.bootstrap(plan);

  // frozen eval set: played against the bootstrap models, never trained on
  sim_population players(w, sim_policy{}, opt.player_seed);
  players.play(server, opt.eval_episodes);
  const auto held = orch.collected();
  const auto ev = build_eval_sets(held);
  std::set<std::string> ids;
  for (const auto& e : held) ids.insert(e.episode_id);
  orch.set_eval_sets({{"wild_test", ev.test}}, ids);

  flywheel_result out;
  out.eval_examples = ev.test.size();
  for (int k = 1; k <= opt.rounds; ++k) {
    plan.round_id = k;
    auto rep = orch.run_round(plan, [&](game_server& s, std::size_t n) { players.play(s, n); });
    out.deployed_hits.push_back(rep.at("deployed").at(0).at("hits").at("wild_test").get<double>());
    out.reports.push_back(std::move(rep));
  }
  return out;
}

// engagement of sim players against a trained vs an untrained model

struct engagement_options {
  std::size_t episodes = 2000;
  double engagement_slope = 0.3;
  std::size_t seed_dialogues = 120;
};

struct engagement_result {
  rate_estimate trained;
  rate_estimate random;
};

inline engagement_result engagement(const engagement_options& opt = {}) {
  synthetic_world w;
  const auto seed = w.seed_pairs(opt.seed_dialogues, 1);
  std::vector<std::string> texts;
  for (const auto& p : seed) texts.push_back(p.target);
  auto bank = std::make_shared<candidate_bank>(candidate_bank::from_texts(texts, "c"));
  bank->vet(w.safety());

  auto untrained_cfg = train_config();
  untrained_cfg.epochs = 0;
  const auto trained = std::make_shared<const model_t>(fit_model(seed, train_config()));
  const auto untrained = std::make_shared<const model_t>(fit_model(seed, untrained_cfg));

  sim_policy policy;
  policy.engagement_slope = opt.engagement_slope;
  auto run = [&](std::shared_ptr<const model_t> m, const std::string& id) {
    game_server server(w.catalog(), w.safety(), game_config{});
    model_variant v;
    v.variant_id = id;
    server.redeploy({{v, deployment::make(id, std::move(m), bank, {})}});
    sim_population players(w, policy, 77);
    players.play(server, opt.episodes);
    return server.pool().continue_rate(id);
  };
  return {run(trained, "trained"), run(untrained, "random")};
}

}  // namespace dfw::experiments
