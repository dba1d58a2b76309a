#pragma once

// test oracles and fixtures kept apart from the library code they check

#include <chrono>
#include <cmath>
#include <csignal>
#include <fcntl.h>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <spawn.h>
#include <string>
#include <sys/wait.h>
#include <thread>
#include <unistd.h>
#include <vector>

#include "dfw/episode_log.hpp"
#include "dfw/scorer.hpp"
#include "dfw/training.hpp"

extern char** environ;

namespace testing_support {

using ids = std::vector<std::int32_t>;

// straight-line forward pass over raw parameter arrays
inline double ref_score(const std::vector<double>& E, const std::vector<double>& C, int d, int n, const ids& ctx,
                        const ids& cand) {
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  const std::size_t L = ctx.size();
  std::vector<double> y(static_cast<std::size_t>(n * d), 0.0);
  for (int j = 0; j < n; ++j) {
    std::vector<double> logit(L);
    for (std::size_t t = 0; t < L; ++t) {
      double dot = 0;
      for (int k = 0; k < d; ++k) dot += C[j * d + k] * E[ctx[t] * d + k];
      logit[t] = dot * s;
    }
    double mx = logit.empty() ? 0 : logit[0];
    for (auto v : logit) mx = std::max(mx, v);
    double z = 0;
    for (auto& v : logit) z += (v = std::exp(v - mx));
    for (std::size_t t = 0; t < L; ++t)
      for (int k = 0; k < d; ++k) y[j * d + k] += logit[t] / z * E[ctx[t] * d + k];
  }
  std::vector<double> u(d, 0.0);
  for (auto id : cand)
    for (int k = 0; k < d; ++k) u[k] += E[id * d + k] / static_cast<double>(cand.size());
  std::vector<double> e(n), w(n);
  for (int j = 0; j < n; ++j) {
    double dot = 0;
    for (int k = 0; k < d; ++k) dot += u[k] * y[j * d + k];
    e[j] = dot;
    w[j] = dot * s;
  }
  double mx = w[0];
  for (auto v : w) mx = std::max(mx, v);
  double z = 0;
  for (auto& v : w) z += (v = std::exp(v - mx));
  double out = 0;
  for (int j = 0; j < n; ++j) out += w[j] / z * e[j];
  return out;
}

struct toy_item {
  ids context, gold;
  std::vector<ids> negatives;
};

// mean cross-entropy: each item's logits cover every batch gold plus its own negatives
inline double ref_loss(const std::vector<double>& E, const std::vector<double>& C, int d, int n,
                       const std::vector<toy_item>& batch) {
  double total = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    std::vector<double> logits;
    for (const auto& b : batch) logits.push_back(ref_score(E, C, d, n, batch[i].context, b.gold));
    for (const auto& neg : batch[i].negatives) logits.push_back(ref_score(E, C, d, n, batch[i].context, neg));
    double mx = logits[0];
    for (auto v : logits) mx = std::max(mx, v);
    double z = 0;
    for (auto v : logits) z += std::exp(v - mx);
    total += mx + std::log(z) - logits[i];
  }
  return total / static_cast<double>(batch.size());
}

struct grad_check_result {
  double max_rel_error = 0;
  std::size_t parameters = 0;
  double loss_gap = 0;  // |library loss - reference loss|
};

// analytic batch gradient vs central differences of the reference loss
inline grad_check_result gradient_check(std::uint64_t seed, int d = 4, int n = 2, int batch_size = 5, int history = 2) {
  using namespace dfw;
  std::mt19937_64 rng(seed);
  std::vector<std::string> words;
  for (int i = 0; i < 27; ++i) words.push_back("w" + std::to_string(i));
  auto vocab = build_vocab(words);
  poly_lite_config cfg;
  cfg.embed_dim = d;
  cfg.num_codes = n;
  cfg.init_scale = 0.8;
  cfg.seed = seed;
  poly_lite_model<double> m(cfg, vocab);
  const int V = m.vocab().size();

  std::uniform_int_distribution<int> tok(num_reserved, V - 1), len(2, 5);
  auto draw = [&] {
    ids x(static_cast<std::size_t>(len(rng)));
    for (auto& t : x) t = tok(rng);
    return x;
  };
  std::vector<toy_item> items(static_cast<std::size_t>(batch_size));
  for (auto& it : items) {
    it.context = draw();
    it.gold = draw();
    for (int h = 0; h < history; ++h) it.negatives.push_back(draw());
  }
  std::vector<batch_item> batch(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    batch[i].context = &items[i].context;
    batch[i].gold = &items[i].gold;
    for (const auto& neg : items[i].negatives) batch[i].extra_negatives.push_back(&neg);
  }

  model_gradient<double> g(m);
  const double lib_loss = batch_loss(m, std::span<const batch_item>(batch), &g);

  auto E = m.embeddings();
  auto C = m.codes();
  grad_check_result out;
  out.loss_gap = std::abs(lib_loss - ref_loss(E, C, d, n, items));
  const double eps = 1e-5;
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); };
  for (std::size_t p = 0; p < E.size(); ++p) {
    const double keep = E[p];
    E[p] = keep + eps;
    const double up = ref_loss(E, C, d, n, items);
    E[p] = keep - eps;
    const double down = ref_loss(E, C, d, n, items);
    E[p] = keep;
    out.max_rel_error = std::max(out.max_rel_error, rel(g.embeddings[p], (up - down) / (2 * eps)));
  }
  for (std::size_t p = 0; p < C.size(); ++p) {
    const double keep = C[p];
    C[p] = keep + eps;
    const double up = ref_loss(E, C, d, n, items);
    C[p] = keep - eps;
    const double down = ref_loss(E, C, d, n, items);
    C[p] = keep;
    out.max_rel_error = std::max(out.max_rel_error, rel(g.codes[p], (up - down) / (2 * eps)));
  }
  out.parameters = E.size() + C.size();
  return out;
}

// model-first episode with one human turn per star value
inline dfw::episode scripted_episode(const std::string& id, const std::vector<int>& stars, bool model_first = true) {
  dfw::episode ep;
  ep.episode_id = id;
  ep.round_id = 1;
  ep.variant_id = "v";
  ep.player_id = "p1";
  ep.where = {"l1", "castle", "a cold castle hall"};
  ep.human_character = {"c1", "knight", "i am a brave knight"};
  ep.model_character = {"c2", "wizard", "i am an old wizard"};
  std::uint64_t ts = 0;
  auto model_turn = [&] {
    dfw::utterance u;
    u.who = dfw::speaker::model;
    u.text = "model line " + std::to_string(ts);
    u.candidate_id = "c" + std::to_string(ts);
    u.timestamp = ts++;
    ep.turns.push_back(u);
  };
  for (int s : stars) {
    if (model_first) model_turn();
    dfw::utterance u;
    u.who = dfw::speaker::human;
    u.text = "human line " + std::to_string(ts);
    u.stars = s;
    u.timestamp = ts++;
    ep.turns.push_back(u);
    if (!model_first) model_turn();
  }
  ep.complete = ep.turns.size() == 12;
  ep.quality = dfw::recompute_quality(ep);
  return ep;
}

// counters a log implies, rebuilt without the library's pool or leaderboard
struct replay_counts {
  std::map<std::string, std::pair<std::int64_t, std::int64_t>> variants;  // id -> (served, continues)
  std::map<std::string, std::int64_t> stars;                             // player -> total
};

inline replay_counts replay_oracle(const std::string& log_path) {
  replay_counts r;
  std::ifstream in(log_path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (...) {
      continue;  // torn tail
    }
    auto& v = r.variants[j.at("variant_id").get<std::string>()];
    ++v.first;
    const auto& c = j.at("end_choice");
    if (!c.is_null() && c.get<std::string>() != "end_game") ++v.second;
    std::int64_t q = 0;
    for (const auto& t : j.at("turns"))
      if (t.contains("stars") && !t.at("stars").is_null()) q += t.at("stars").get<std::int64_t>();
    r.stars[j.at("player_id").get<std::string>()] += q;
  }
  return r;
}

// a child process with stdout and stderr sent to a file
class child {
 public:
  child(const std::vector<std::string>& args, const std::string& out_file) : out_(out_file) {
    std::vector<char*> argv;
    for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    posix_spawn_file_actions_t fa;
    posix_spawn_file_actions_init(&fa);
    posix_spawn_file_actions_addopen(&fa, 1, out_file.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    posix_spawn_file_actions_adddup2(&fa, 1, 2);
    const int rc = posix_spawn(&pid_, argv[0], &fa, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&fa);
    if (rc != 0) throw std::runtime_error("cannot spawn " + args[0]);
  }
  ~child() {
    if (pid_ > 0) {
      kill(pid_, SIGKILL);
      waitpid(pid_, nullptr, 0);
    }
  }

  // waits for a line starting with `prefix`; returns it
  std::string wait_for(const std::string& prefix, double seconds = 60) {
    const auto until = std::chrono::steady_clock::now() + std::chrono::duration<double>(seconds);
    while (std::chrono::steady_clock::now() < until) {
      std::ifstream in(out_);
      std::string line;
      while (std::getline(in, line))
        if (line.rfind(prefix, 0) == 0) return line;
      if (int status = 0; waitpid(pid_, &status, WNOHANG) == pid_) {
        pid_ = -1;
        throw std::runtime_error("child exited early; output in " + out_);
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    throw std::runtime_error("timed out waiting for '" + prefix + "' in " + out_);
  }

  int signal_and_wait(int sig) {
    kill(pid_, sig);
    int status = 0;
    waitpid(pid_, &status, 0);
    pid_ = -1;
    return status;
  }

 private:
  pid_t pid_ = -1;
  std::string out_;
};

// port from a "listening host:port ..." line
inline int port_of(const std::string& line) {
  const auto colon = line.find(':');
  return std::stoi(line.substr(colon + 1));
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("dfw-test-" + name + "-" + std::to_string(getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing_support
