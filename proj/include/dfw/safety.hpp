#pragma once

#include <fstream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "dfw/core.hpp"
#include "dfw/text.hpp"

namespace dfw {

// Unigram and phrase blocklist; phrases match as contiguous token runs of
// the tokenized (lowercased) text.
class blocklist {
 public:
  blocklist() = default;
  explicit blocklist(const std::vector<std::string>& entries) {
    for (const auto& e : entries) add(e);
  }

  void add(std::string_view entry) {
    auto toks = tokenize(entry);
    if (toks.empty()) return;
    max_len_ = std::max(max_len_, toks.size());
    phrases_.insert(std::move(toks));
  }

  bool empty() const { return phrases_.empty(); }
  std::size_t size() const { return phrases_.size(); }

  bool matches(const token_list& toks) const {
    for (std::size_t i = 0; i < toks.size(); ++i) {
      token_list window;
      for (std::size_t n = 1; n <= max_len_ && i + n <= toks.size(); ++n) {
        window.push_back(toks[i + n - 1]);
        if (phrases_.count(window)) return true;
      }
    }
    return false;
  }

  bool matches(std::string_view text) const { return matches(tokenize(text)); }

  // One entry per line; blank lines and '#' comments skipped.
  static blocklist load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw error("cannot open blocklist '" + path + "'");
    blocklist b;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      b.add(line);
    }
    return b;
  }

 private:
  std::set<token_list> phrases_;
  std::size_t max_len_ = 0;
};

}  // namespace dfw
