// dfw: command line front end for the dialogue flywheel.
#include <csignal>
#include <fstream>
#include <iostream>
#include <pthread.h>
#include <sstream>
#include <thread>

#include "CLI11.hpp"

#include "dfw/checkpoint.hpp"
#include "dfw/episode_log.hpp"
#include "dfw/evaluation.hpp"
#include "dfw/experiments.hpp"
#include "dfw/pipeline.hpp"
#include "dfw/service.hpp"
#include "dfw/sim.hpp"

using namespace dfw;

namespace {

// writes to --out, or stdout when it is empty or "-"
class output {
 public:
  explicit output(const std::string& path) {
    if (path.empty() || path == "-") return;
    if (auto dir = std::filesystem::path(path).parent_path(); !dir.empty()) std::filesystem::create_directories(dir);
    file_.open(path, std::ios::binary | std::ios::trunc);
    if (!file_) throw error("cannot write '" + path + "'");
  }
  std::ostream& os() { return file_.is_open() ? file_ : std::cout; }

 private:
  std::ofstream file_;
};

std::vector<episode> read_log(const std::string& path) {
  if (!std::filesystem::exists(path)) throw error("no such log '" + path + "'");
  auto r = read_episode_log(path);
  if (r.torn_tail) std::cerr << "warning: ignored torn final record in " << path << "\n";
  return std::move(r.episodes);
}

std::vector<training_pair> read_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw error("cannot open '" + path + "'");
  std::vector<training_pair> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line).get<training_pair>());
    } catch (const std::exception& e) {
      throw error(path + ":" + std::to_string(n) + ": bad pair: " + e.what());
    }
  }
  return out;
}

void write_pairs(std::ostream& os, const std::vector<training_pair>& pairs) {
  for (const auto& p : pairs) os << json(p).dump() << "\n";
}

void write_episodes(std::ostream& os, const std::vector<episode>& eps) {
  for (const auto& e : eps) os << json(e).dump() << "\n";
}

speaker parse_author(const std::string& s) {
  if (s == "human") return speaker::human;
  if (s == "model") return speaker::model;
  throw error("--target must be human or model");
}

struct train_flags {
  int epochs = -1;
  double lr = -1;
  int dim = -1;
  int codes = -1;
  int history_negatives = -1;
  double init_scale = -1;
  bool library_defaults = false;

  void add(CLI::App* app) {
    app->add_option("--epochs", epochs, "training epochs");
    app->add_option("--lr", lr, "learning rate");
    app->add_option("--dim", dim, "embedding size");
    app->add_option("--codes", codes, "number of context codes");
    app->add_option("--history-negatives", history_negatives, "history negatives per example (0 disables)");
    app->add_option("--init-scale", init_scale, "embedding init scale");
    app->add_flag("--library-defaults", library_defaults, "start from library defaults instead of the experiment settings");
  }

  poly_lite_config config(std::uint64_t seed) const {
    auto c = library_defaults ? poly_lite_config{} : experiments::train_config();
    if (epochs >= 0) c.epochs = epochs;
    if (lr >= 0) c.learning_rate = lr;
    if (dim > 0) c.embed_dim = dim;
    if (codes > 0) c.num_codes = codes;
    if (history_negatives >= 0) c.history_negatives = history_negatives;
    if (init_scale >= 0) c.init_scale = init_scale;
    c.seed = seed;
    c.validate();
    return c;
  }
};

json train_config_json(const poly_lite_config& c) {
  return {{"embed_dim", c.embed_dim},     {"num_codes", c.num_codes},   {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},   {"epochs", c.epochs},         {"history_negatives", c.history_negatives},
          {"init_scale", c.init_scale},   {"clip_norm", c.clip_norm},   {"seed", c.seed},
          {"max_context_tokens", c.max_context_tokens}};
}

poly_lite_config train_config_from(const json& j) {
  auto c = experiments::train_config();
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.num_codes = j.value("num_codes", c.num_codes);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.history_negatives = j.value("history_negatives", c.history_negatives);
  c.init_scale = j.value("init_scale", c.init_scale);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

std::pair<std::string, int> parse_host_port(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos) throw error("--server must be host:port");
  return {s.substr(0, colon), std::stoi(s.substr(colon + 1))};
}

int serve(const std::string& config_path, const std::string& log_override, int port_override) {
  auto cfg = service_config::load(config_path);
  if (!log_override.empty()) cfg.log_path = log_override;
  if (port_override >= 0) cfg.port = port_override;

  // handle termination signals on a dedicated thread
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  service svc(cfg);
  const int port = svc.bind();
  std::thread http([&] { svc.listen(); });
  while (!svc.running()) std::this_thread::sleep_for(std::chrono::milliseconds(5));
  std::cout << "listening " << cfg.host << ":" << port << " recovered " << svc.recovered_episodes() << std::endl;
  int sig = 0;
  sigwait(&set, &sig);
  svc.stop();
  http.join();
  std::cout << "stopped" << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dfw: collect, train and evaluate retrieval dialogue models from game play"};
  app.require_subcommand(1);

  std::uint64_t seed = 1;
  std::string config, log, out, ckpt;

  auto* serve_cmd = app.add_subcommand("serve", "run the game service");
  int port = -1;
  serve_cmd->add_option("--config", config, "INI config")->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--log", log, "episode log (overrides the config)");
  serve_cmd->add_option("--port", port, "port (0 picks a free one)");

  auto* sim_cmd = app.add_subcommand("simulate", "generate synthetic episodes or play sim players against a server");
  std::string kind = "wild", server_addr;
  std::size_t episodes = 100;
  double quality_level = 0.9, slope = 0.3;
  int round_id = 1;
  sim_cmd->add_option("--kind", kind, "wild | noisy | seed")->check(CLI::IsMember({"wild", "noisy", "seed"}));
  sim_cmd->add_option("--episodes", episodes, "number of episodes")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--seed", seed, "random seed");
  sim_cmd->add_option("--round", round_id, "round id for generated episodes")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--out", out, "output episode log");
  sim_cmd->add_option("--server", server_addr, "host:port of a running service to play against");
  sim_cmd->add_option("--quality-level", quality_level, "share of in-character player turns");
  sim_cmd->add_option("--engagement-slope", slope, "continue-probability slope on reply quality");

  auto* extract_cmd = app.add_subcommand("extract", "episode log to context/response pairs");
  std::string target = "human";
  extract_cmd->add_option("--log", log, "episode log")->required();
  extract_cmd->add_option("--out", out, "pairs JSONL");
  extract_cmd->add_option("--target", target, "human | model");

  auto* filter_cmd = app.add_subcommand("filter", "keep pairs from episodes with quality >= C");
  std::string in;
  int C = 0;
  filter_cmd->add_option("--in", in, "pairs JSONL")->required();
  filter_cmd->add_option("--C", C, "quality threshold")->required();
  filter_cmd->add_option("--out", out, "pairs JSONL");

  auto* train_cmd = app.add_subcommand("train", "fit a scorer");
  std::vector<std::string> pair_files;
  std::size_t seed_dialogues = 0;
  train_flags tf;
  train_cmd->add_option("--pairs", pair_files, "pairs JSONL (repeatable)");
  train_cmd->add_option("--log", log, "episode log; human-target pairs are added");
  train_cmd->add_option("--seed-dialogues", seed_dialogues, "add this many synthetic seed dialogues");
  train_cmd->add_option("--seed", seed, "training seed");
  train_cmd->add_option("--out", out, "checkpoint path")->required();
  tf.add(train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "Hits@1/20 on the test split of a log");
  int min_quality = 9;
  eval_cmd->add_option("--log", log, "episode log")->required();
  eval_cmd->add_option("--ckpt", ckpt, "checkpoint")->required();
  eval_cmd->add_option("--seed", seed, "distractor seed");
  eval_cmd->add_option("--min-quality", min_quality, "eligibility threshold for eval episodes");
  eval_cmd->add_option("--out", out, "report JSON");

  auto* curve_cmd = app.add_subcommand("curve", "learning curves on the synthetic benchmark");
  std::string study = "streams";
  std::size_t curve_n = 2000;
  curve_cmd->add_option("--study", study, "streams | bins")->check(CLI::IsMember({"streams", "bins"}));
  curve_cmd->add_option("--n", curve_n, "pairs per source (streams)");
  curve_cmd->add_option("--out", out, "CSV");

  auto* stats_cmd = app.add_subcommand("stats", "dataset statistics CSV");
  stats_cmd->add_option("--log", log, "episode log")->required();
  stats_cmd->add_option("--out", out, "CSV");

  auto* analyze_cmd = app.add_subcommand("analyze", "continue rates and factor effects from a log");
  analyze_cmd->add_option("--log", log, "episode log")->required();
  analyze_cmd->add_option("--config", config, "service config naming the variants' factors");
  analyze_cmd->add_option("--out", out, "report JSON");

  auto* rounds_cmd = app.add_subcommand("rounds", "run a multi-round plan");
  std::string plan_path;
  bool sim = false;
  rounds_cmd->add_option("--plan", plan_path, "plan JSON")->required()->check(CLI::ExistingFile);
  rounds_cmd->add_flag("--sim", sim, "collect with sim players");
  rounds_cmd->add_option("--out", out, "directory for manifests, checkpoints and reports");

  auto* sweep_cmd = app.add_subcommand("sweep-c", "validation hits per quality threshold");
  std::vector<int> thresholds{0, 6, 9, 12};
  sweep_cmd->add_option("--thresholds", thresholds, "values of C");
  sweep_cmd->add_option("--out", out, "CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve_cmd) return serve(config, log, port);

    if (*sim_cmd) {
      synthetic_world w;
      if (!server_addr.empty()) {
        const auto [host, p] = parse_host_port(server_addr);
        sim_policy policy;
        policy.quality_level = quality_level;
        policy.engagement_slope = slope;
        std::size_t done = 0, sessions = 0;
        while (done < episodes) {
          policy.seed = mix_seed(seed, sessions++);
          sim_player player(w, policy);
          http_transport t(host, p);
          const auto r = play_session(w, player, t.fn(), static_cast<int>(episodes - done));
          done += static_cast<std::size_t>(r.episodes_finished);
        }
        std::cout << "played " << done << " episodes in " << sessions << " sessions\n";
        return 0;
      }
      std::vector<episode> eps;
      if (kind == "wild") {
        eps = experiments::wild_episodes(w, episodes, seed, round_id);
      } else if (kind == "noisy") {
        synthetic_world::noisy_corpus_options o;
        o.round_id = round_id;
        eps = w.noisy_corpus(episodes, seed, o);
      } else {
        rng_t rng(mix_seed(seed, 0x5eed));
        for (std::size_t i = 0; i < episodes; ++i) eps.push_back(w.seed_dialogue(rng, "seed" + hex_token(i, 6)));
      }
      output o(out);
      write_episodes(o.os(), eps);
      return 0;
    }

    if (*extract_cmd) {
      output o(out);
      write_pairs(o.os(), extract_pairs(read_log(log), parse_author(target)));
      return 0;
    }

    if (*filter_cmd) {
      quality_filter_config f{C, true};
      f.validate();
      output o(out);
      write_pairs(o.os(), filter_by_quality(read_pairs(in), f));
      return 0;
    }

    if (*train_cmd) {
      std::vector<training_pair> pairs;
      for (const auto& f : pair_files) {
        auto p = read_pairs(f);
        pairs.insert(pairs.end(), p.begin(), p.end());
      }
      if (!log.empty()) {
        auto p = extract_pairs(read_log(log));
        pairs.insert(pairs.end(), p.begin(), p.end());
      }
      if (seed_dialogues > 0) {
        auto p = synthetic_world{}.seed_pairs(seed_dialogues, 1);
        pairs.insert(pairs.end(), p.begin(), p.end());
      }
      if (pairs.empty()) throw error("train: no training data (use --pairs, --log or --seed-dialogues)");
      const auto cfg = tf.config(seed);
      const auto m = fit_model(pairs, cfg);
      save_checkpoint(out, m);
      std::cout << json{{"checkpoint", out}, {"pairs", pairs.size()}, {"config", train_config_json(cfg)}}.dump() << "\n";
      return 0;
    }

    if (*eval_cmd) {
      const auto sets = build_eval_sets(read_log(log), min_quality);
      const auto m = load_checkpoint<float>(ckpt);
      const auto r = evaluate_hits(m, sets.test, eval_bank(sets.test), seed);
      output o(out);
      o.os() << json{{"checkpoint", ckpt},
                     {"log", log},
                     {"split", "test"},
                     {"hits_at_1_of_20", r.hits_at_1_of_20},
                     {"num_examples", r.num_examples},
                     {"seed", r.seed}}
                    .dump(2)
             << "\n";
      return 0;
    }

    if (*curve_cmd) {
      output o(out);
      if (study == "streams") {
        experiments::curves_options opt;
        opt.n = curve_n;
        const auto r = experiments::learning_curves(opt);
        for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
        write_curve_csv(o.os(), r.rows);
      } else {
        write_bins_csv(o.os(), experiments::quality_bins());
      }
      return 0;
    }

    if (*stats_cmd) {
      const auto eps = read_log(log);
      std::vector<episode> complete;
      std::copy_if(eps.begin(), eps.end(), std::back_inserter(complete), [](const episode& e) { return e.complete; });
      output o(out);
      write_stats_csv(o.os(), {{"all", compute_stats(eps)}, {"complete", compute_stats(complete)}});
      return 0;
    }

    if (*analyze_cmd) {
      std::map<std::string, model_variant> by_id;
      if (!config.empty())
        for (const auto& v : service_config::load(config).variants) {
          by_id[v.name].variant_id = v.name;
          by_id[v.name].factors = v.factors;
          by_id[v.name].checkpoint_ref = v.checkpoint;
        }
      std::map<std::string, std::size_t> bins;
      for (const auto& ep : read_log(log)) {
        auto& v = by_id[ep.variant_id];
        v.variant_id = ep.variant_id;
        ++v.episodes_served;
        if (ep.choice && is_continue(*ep.choice)) ++v.continues;
        ++bins[bin_quality(ep.quality.value_or(recompute_quality(ep)))];
      }
      std::vector<model_variant> vs;
      for (auto& [id, v] : by_id) vs.push_back(v);
      auto report = metrics_json(vs);
      json hist = json::array();
      for (const auto& l : quality_bin_labels()) hist.push_back({{"bin", l}, {"episodes", bins[l]}});
      report["quality_bins"] = hist;
      output o(out);
      o.os() << report.dump(2) << "\n";
      return 0;
    }

    if (*rounds_cmd) {
      if (!sim) throw error("rounds: only --sim collection is available headlessly; live play goes through serve");
      std::ifstream pin(plan_path);
      const auto plan = json::parse(pin);
      experiments::flywheel_options opt;
      opt.rounds = plan.value("rounds", opt.rounds);
      opt.episodes_per_round = plan.value("episodes_per_round", opt.episodes_per_round);
      opt.seed_dialogues = plan.value("seed_dialogues", opt.seed_dialogues);
      opt.eval_episodes = plan.value("eval_episodes", opt.eval_episodes);
      opt.player_seed = plan.value("player_seed", opt.player_seed);
      opt.decoding_alpha = plan.value("decoding_alpha", opt.decoding_alpha);
      if (plan.contains("train")) opt.train = train_config_from(plan.at("train"));
      if (plan.contains("filter")) {
        opt.filter.enabled = plan.at("filter").value("enabled", false);
        opt.filter.C = plan.at("filter").value("C", 0);
      }
      if (plan.contains("pool")) {
        opt.pool.clear();
        for (const auto& v : plan.at("pool")) {
          variant_spec s;
          s.name = v.at("name").get<std::string>();
          const auto f = v.value("factors", json::object());
          s.factors.train_data = f.value("train_data", s.factors.train_data);
          s.factors.size_tag = f.value("size_tag", s.factors.size_tag);
          s.factors.negative_context = f.value("negative_context", s.factors.negative_context);
          s.factors.decoding_control = f.value("decoding_control", s.factors.decoding_control);
          opt.pool.push_back(std::move(s));
        }
      }
      opt.out_dir = out.empty() ? plan.value("out_dir", std::string("rounds")) : out;
      const auto r = experiments::flywheel(opt);
      json summary{{"rounds", r.reports.size()}, {"eval_examples", r.eval_examples}, {"deployed_hits", r.deployed_hits}};
      std::cout << summary.dump() << "\n";
      return 0;
    }

    if (*sweep_cmd) {
      experiments::sweep_options opt;
      opt.thresholds = thresholds;
      output o(out);
      write_sweep_csv(o.os(), experiments::threshold_sweep(opt));
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "dfw: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
