#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dfw/core.hpp"
#include "dfw/text.hpp"

namespace dfw {

struct context_options {
  std::size_t max_context_tokens = 128;
  std::size_t max_history = 11;
  std::string separator = std::string(sep_token);
};

// Layout: location SEP persona SEP {speaker ':' text}... . When too long the
// location/persona header is kept and the oldest history tokens are dropped.
inline token_list serialize_context(const context_bundle& b, const context_options& opt = {}) {
  token_list head = tokenize(b.location_description);
  head.push_back(opt.separator);
  for (auto& t : tokenize(b.self_persona)) head.push_back(std::move(t));
  head.push_back(opt.separator);

  const auto& hist = b.dialogue_history;
  const std::size_t first = hist.size() > opt.max_history ? hist.size() - opt.max_history : 0;
  token_list body;
  for (std::size_t k = first; k < hist.size(); ++k) {
    for (auto& t : tokenize(hist[k].speaker_name)) body.push_back(std::move(t));
    body.emplace_back(":");
    for (auto& t : tokenize(hist[k].text)) body.push_back(std::move(t));
  }

  const std::size_t cap = opt.max_context_tokens;
  if (head.size() >= cap) {
    head.resize(cap);
    return head;
  }
  const std::size_t budget = cap - head.size();
  const std::size_t skip = body.size() > budget ? body.size() - budget : 0;
  head.insert(head.end(), body.begin() + static_cast<std::ptrdiff_t>(skip), body.end());
  return head;
}

}  // namespace dfw
