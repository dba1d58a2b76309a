#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "dfw/core.hpp"
#include "dfw/csv.hpp"

namespace dfw {

using token_list = std::vector<std::string>;

inline constexpr std::string_view pad_token = "<pad>";
inline constexpr std::string_view unk_token = "<unk>";
inline constexpr std::string_view sep_token = "<sep>";
inline constexpr std::int32_t pad_id = 0;
inline constexpr std::int32_t unk_id = 1;
inline constexpr std::int32_t sep_id = 2;
inline constexpr std::int32_t num_reserved = 3;

namespace detail {
inline bool is_space(unsigned char c) { return std::isspace(c) != 0; }
inline bool is_punct(unsigned char c) { return c < 128 && std::ispunct(c) != 0; }
inline bool is_alpha(unsigned char c) { return c >= 128 || std::isalnum(c) != 0; }
}  // namespace detail

// Lowercases, splits on whitespace and splits punctuation into separate
// tokens. An apostrophe followed by letters stays attached to them as a
// clitic token ("i'm" -> "i", "'m").
inline token_list tokenize(std::string_view text) {
  token_list out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (detail::is_space(c)) {
      flush();
    } else if (c == '\'' && !cur.empty() && i + 1 < text.size() &&
               detail::is_alpha(static_cast<unsigned char>(text[i + 1])) &&
               static_cast<unsigned char>(text[i + 1]) < 128) {
      flush();
      cur.push_back('\'');
    } else if (detail::is_punct(c)) {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    } else {
      cur.push_back(static_cast<char>(c < 128 ? std::tolower(c) : c));
    }
  }
  flush();
  return out;
}

class vocabulary {
 public:
  vocabulary() {
    for (auto t : {pad_token, unk_token, sep_token}) add_token(std::string(t), 0);
  }

  std::int32_t size() const { return static_cast<std::int32_t>(id_to_token_.size()); }
  std::int64_t num_documents() const { return num_documents_; }
  const std::vector<std::string>& tokens() const { return id_to_token_; }
  const std::vector<std::int64_t>& document_frequency() const { return df_; }

  std::int32_t id(std::string_view token) const {
    auto it = token_to_id_.find(std::string(token));
    return it == token_to_id_.end() ? unk_id : it->second;
  }
  bool contains(std::string_view token) const { return token_to_id_.count(std::string(token)) != 0; }
  const std::string& token(std::int32_t id) const { return id_to_token_.at(static_cast<std::size_t>(id)); }
  std::int64_t df(std::string_view token) const {
    auto it = token_to_id_.find(std::string(token));
    return it == token_to_id_.end() ? 0 : df_[static_cast<std::size_t>(it->second)];
  }

  std::vector<std::int32_t> encode(const token_list& toks) const {
    std::vector<std::int32_t> ids;
    ids.reserve(toks.size());
    for (const auto& t : toks) ids.push_back(id(t));
    return ids;
  }

  // ln(num_documents / df); defined for tokens with df >= 1.
  double idf(std::string_view token) const {
    const auto d = df(token);
    if (d <= 0) return idf_max_;
    return std::log(static_cast<double>(num_documents_) / static_cast<double>(d));
  }
  double idf_min() const { return idf_min_; }
  double idf_max() const { return idf_max_; }

  // Used by build_vocab and checkpoint loading.
  std::int32_t add_token(std::string token, std::int64_t df) {
    auto [it, inserted] = token_to_id_.emplace(token, static_cast<std::int32_t>(id_to_token_.size()));
    if (inserted) {
      id_to_token_.push_back(std::move(token));
      df_.push_back(df);
    }
    return it->second;
  }
  void set_num_documents(std::int64_t n) { num_documents_ = n; }

  void finalize() {
    bool any = false;
    idf_min_ = idf_max_ = 0.0;
    for (std::size_t i = num_reserved; i < df_.size(); ++i) {
      if (df_[i] < 1) continue;
      const double v = std::log(static_cast<double>(num_documents_) / static_cast<double>(df_[i]));
      if (!any) {
        idf_min_ = idf_max_ = v;
        any = true;
      }
      idf_min_ = std::min(idf_min_, v);
      idf_max_ = std::max(idf_max_, v);
    }
  }

 private:
  std::unordered_map<std::string, std::int32_t> token_to_id_;
  std::vector<std::string> id_to_token_;
  std::vector<std::int64_t> df_;
  std::int64_t num_documents_ = 0;
  double idf_min_ = 0.0;
  double idf_max_ = 0.0;
};

// One document per text unit. Tokens below min_freq (total count) are left
// out and therefore map to <unk>. Ids are assigned in lexicographic order.
inline vocabulary build_vocab(const std::vector<std::string>& corpus, int min_freq = 1) {
  if (corpus.empty()) throw error("build_vocab: empty corpus");
  std::map<std::string, std::pair<std::int64_t, std::int64_t>> counts;  // token -> (freq, df)
  for (const auto& doc : corpus) {
    std::unordered_set<std::string> seen;
    for (auto& t : tokenize(doc)) {
      auto& c = counts[t];
      c.first += 1;
      if (seen.insert(t).second) c.second += 1;
    }
  }
  vocabulary v;
  v.set_num_documents(static_cast<std::int64_t>(corpus.size()));
  for (const auto& [tok, c] : counts)
    if (c.first >= min_freq && !v.contains(tok)) v.add_token(tok, c.second);
  v.finalize();
  return v;
}

// Normalized inverse document frequency in [0,1]; unseen tokens are 1.
inline double nidf(std::string_view token, const vocabulary& vocab) {
  if (vocab.df(token) <= 0) return 1.0;
  const double span = vocab.idf_max() - vocab.idf_min();
  if (span <= 0.0) return 0.0;
  return (vocab.idf(token) - vocab.idf_min()) / span;
}

inline double specificity(const token_list& toks, const vocabulary& vocab) {
  if (toks.empty()) return 0.0;
  double s = 0.0;
  for (const auto& t : toks) s += nidf(t, vocab);
  return s / static_cast<double>(toks.size());
}

inline double specificity(std::string_view text, const vocabulary& vocab) {
  return specificity(tokenize(text), vocab);
}

enum class expression_direction { over, under };

struct expression_row {
  std::string word;
  double ratio = 0.0;
  std::int64_t count_a = 0;
  std::int64_t count_b = 0;
};

struct overexpression_report {
  expression_direction direction = expression_direction::over;
  std::vector<expression_row> rows;

  void write_csv(std::ostream& os) const {
    csv::write_row(os, {"word", "ratio", "count_a", "count_b"});
    for (const auto& r : rows)
      csv::write_row(os, {r.word, csv::number(r.ratio), std::to_string(r.count_a), std::to_string(r.count_b)});
  }
};

// Relative-frequency ratio (count_a/total_a)/(count_b/total_b) for words
// reaching min_count in both corpora.
inline overexpression_report expression_ratios(const std::vector<std::string>& corpus_a,
                                               const std::vector<std::string>& corpus_b, std::int64_t min_count,
                                               std::size_t top_k, expression_direction direction) {
  if (corpus_a.empty() || corpus_b.empty()) throw error("expression_ratios: empty corpus");
  auto count = [](const std::vector<std::string>& corpus, std::int64_t& total) {
    std::unordered_map<std::string, std::int64_t> c;
    for (const auto& doc : corpus)
      for (auto& t : tokenize(doc)) {
        ++c[t];
        ++total;
      }
    return c;
  };
  std::int64_t total_a = 0, total_b = 0;
  const auto ca = count(corpus_a, total_a);
  const auto cb = count(corpus_b, total_b);

  overexpression_report rep;
  rep.direction = direction;
  if (total_a == 0 || total_b == 0) return rep;
  for (const auto& [w, na] : ca) {
    auto it = cb.find(w);
    if (it == cb.end() || na < min_count || it->second < min_count) continue;
    const double ratio = (static_cast<double>(na) / static_cast<double>(total_a)) /
                         (static_cast<double>(it->second) / static_cast<double>(total_b));
    rep.rows.push_back({w, ratio, na, it->second});
  }
  std::sort(rep.rows.begin(), rep.rows.end(), [&](const expression_row& x, const expression_row& y) {
    if (x.ratio != y.ratio) return direction == expression_direction::over ? x.ratio > y.ratio : x.ratio < y.ratio;
    return x.word < y.word;
  });
  if (rep.rows.size() > top_k) rep.rows.resize(top_k);
  return rep;
}

}  // namespace dfw
