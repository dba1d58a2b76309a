#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dfw/core.hpp"
#include "dfw/rng.hpp"
#include "dfw/text.hpp"

namespace dfw {

// Anything that can rank candidates against a context.
template <class S>
concept candidate_scorer = requires(const S& s, const token_list& ctx, std::string_view text,
                                    const typename S::context_state& cs, const typename S::candidate_state& cand) {
  { s.encode_context(ctx) } -> std::same_as<typename S::context_state>;
  { s.encode_candidate(text) } -> std::same_as<typename S::candidate_state>;
  { s.score(cs, cand) } -> std::convertible_to<double>;
  { s.vocab() } -> std::same_as<const vocabulary&>;
};

struct poly_lite_config {
  int embed_dim = 64;
  int num_codes = 5;
  std::size_t max_context_tokens = 128;
  double learning_rate = 0.05;
  int batch_size = 32;
  int history_negatives = 4;
  int epochs = 5;
  std::uint64_t seed = 1;
  double clip_norm = 1.0;
  double init_scale = 0.1;

  void validate() const {
    if (embed_dim < 1) throw error("embed_dim must be >= 1");
    if (num_codes < 1) throw error("num_codes must be >= 1");
    if (batch_size < 2) throw error("batch_size must be >= 2");
    if (history_negatives < 0) throw error("history_negatives must be >= 0");
    if (epochs < 0) throw error("epochs must be >= 0");
    if (max_context_tokens < 1) throw error("max_context_tokens must be >= 1");
    if (!std::isfinite(learning_rate) || learning_rate < 0) throw error("learning_rate must be finite and >= 0");
    if (!(clip_norm > 0)) throw error("clip_norm must be > 0");
  }

  friend bool operator==(const poly_lite_config&, const poly_lite_config&) = default;
};

namespace detail {

// In-place softmax.
template <class T>
void softmax_inplace(std::span<T> x) {
  if (x.empty()) return;
  const T mx = *std::max_element(x.begin(), x.end());
  T sum = 0;
  for (auto& v : x) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (auto& v : x) v /= sum;
}

template <class T>
T dot(const T* a, const T* b, int n) {
  T s = 0;
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace detail

// Token embeddings + a fixed set of code vectors. The context is summarised
// into num_codes vectors by attention of each code over the context
// embeddings; the candidate (mean of its token embeddings) attends over those
// summaries and the score is the dot product with the attended summary.
template <class T = float>
class poly_lite_model {
 public:
  using scalar = T;

  struct context_state {
    std::vector<T> h;      // L x d context embeddings
    std::vector<T> attn;   // N x L code attention
    std::vector<T> y;      // N x d code summaries
    int length = 0;
  };
  using candidate_state = std::vector<T>;  // d, mean embedding

  poly_lite_model() = default;

  poly_lite_model(const poly_lite_config& cfg, vocabulary vocab) : cfg_(cfg), vocab_(std::move(vocab)) {
    cfg_.validate();
    embeddings_.assign(static_cast<std::size_t>(vocab_.size()) * dim(), T(0));
    codes_.assign(static_cast<std::size_t>(cfg_.num_codes) * dim(), T(0));
    rng_t rng(cfg_.seed);
    std::normal_distribution<double> nd(0.0, cfg_.init_scale);
    for (auto& v : embeddings_) v = static_cast<T>(nd(rng));
    for (auto& v : codes_) v = static_cast<T>(nd(rng));
  }

  static poly_lite_model zeros(const poly_lite_config& cfg, vocabulary vocab) {
    poly_lite_model m(cfg, std::move(vocab));
    std::fill(m.embeddings_.begin(), m.embeddings_.end(), T(0));
    std::fill(m.codes_.begin(), m.codes_.end(), T(0));
    return m;
  }

  const poly_lite_config& config() const { return cfg_; }
  const vocabulary& vocab() const { return vocab_; }
  int dim() const { return cfg_.embed_dim; }
  int num_codes() const { return cfg_.num_codes; }
  T scale() const { return T(1) / std::sqrt(static_cast<T>(dim())); }

  std::vector<T>& embeddings() { return embeddings_; }
  const std::vector<T>& embeddings() const { return embeddings_; }
  std::vector<T>& codes() { return codes_; }
  const std::vector<T>& codes() const { return codes_; }

  const T* row(std::int32_t id) const { return embeddings_.data() + static_cast<std::size_t>(id) * dim(); }
  const T* code(int j) const { return codes_.data() + static_cast<std::size_t>(j) * dim(); }

  bool all_finite() const {
    auto ok = [](const std::vector<T>& v) {
      return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(static_cast<double>(x)); });
    };
    return ok(embeddings_) && ok(codes_);
  }

  std::vector<std::int32_t> context_ids(const token_list& ctx) const {
    auto ids = vocab_.encode(ctx);
    if (ids.size() > cfg_.max_context_tokens)
      ids.erase(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(cfg_.max_context_tokens));
    return ids;
  }

  // Candidate token ids; a candidate with no tokens falls back to <unk>.
  std::vector<std::int32_t> candidate_ids(std::string_view text) const {
    auto ids = vocab_.encode(tokenize(text));
    if (ids.empty()) ids.push_back(unk_id);
    return ids;
  }

  context_state encode_context_ids(std::span<const std::int32_t> ids) const {
    const int d = dim(), n = num_codes(), len = static_cast<int>(ids.size());
    context_state cs;
    cs.length = len;
    cs.y.assign(static_cast<std::size_t>(n) * d, T(0));
    if (len == 0) return cs;
    cs.h.resize(static_cast<std::size_t>(len) * d);
    for (int i = 0; i < len; ++i) std::copy_n(row(ids[i]), d, cs.h.data() + static_cast<std::size_t>(i) * d);
    cs.attn.resize(static_cast<std::size_t>(n) * len);
    const T s = scale();
    for (int j = 0; j < n; ++j) {
      std::span<T> a(cs.attn.data() + static_cast<std::size_t>(j) * len, static_cast<std::size_t>(len));
      for (int i = 0; i < len; ++i) a[i] = s * detail::dot(code(j), cs.h.data() + static_cast<std::size_t>(i) * d, d);
      detail::softmax_inplace(a);
      T* yj = cs.y.data() + static_cast<std::size_t>(j) * d;
      for (int i = 0; i < len; ++i) {
        const T* hi = cs.h.data() + static_cast<std::size_t>(i) * d;
        for (int k = 0; k < d; ++k) yj[k] += a[i] * hi[k];
      }
    }
    return cs;
  }

  context_state encode_context(const token_list& ctx) const { return encode_context_ids(context_ids(ctx)); }

  candidate_state encode_candidate_ids(std::span<const std::int32_t> ids) const {
    const int d = dim();
    candidate_state u(static_cast<std::size_t>(d), T(0));
    for (auto id : ids) {
      const T* r = row(id);
      for (int k = 0; k < d; ++k) u[k] += r[k];
    }
    const T inv = T(1) / static_cast<T>(ids.size());
    for (auto& v : u) v *= inv;
    return u;
  }

  candidate_state encode_candidate(std::string_view text) const { return encode_candidate_ids(candidate_ids(text)); }

  // Fills `w` (size N) with the candidate's attention over code summaries and
  // `e` with the raw dot products; returns the score.
  T score_detail(const context_state& cs, std::span<const T> u, std::span<T> e, std::span<T> w) const {
    if (cs.length == 0) {
      std::fill(e.begin(), e.end(), T(0));
      std::fill(w.begin(), w.end(), T(1) / static_cast<T>(num_codes()));
      return T(0);
    }
    const int d = dim(), n = num_codes();
    const T s = scale();
    for (int j = 0; j < n; ++j) {
      e[j] = detail::dot(cs.y.data() + static_cast<std::size_t>(j) * d, u.data(), d);
      w[j] = s * e[j];
    }
    detail::softmax_inplace(w);
    T out = 0;
    for (int j = 0; j < n; ++j) out += w[j] * e[j];
    return out;
  }

  double score(const context_state& cs, const candidate_state& u) const {
    std::vector<T> e(static_cast<std::size_t>(num_codes())), w(e.size());
    return static_cast<double>(score_detail(cs, u, e, w));
  }

  double score(const token_list& ctx, std::string_view candidate) const {
    return score(encode_context(ctx), encode_candidate(candidate));
  }

  template <class U>
  poly_lite_model<U> cast() const {
    poly_lite_model<U> m;
    m.cfg_ = cfg_;
    m.vocab_ = vocab_;
    m.embeddings_.assign(embeddings_.begin(), embeddings_.end());
    m.codes_.assign(codes_.begin(), codes_.end());
    return m;
  }

 private:
  template <class>
  friend class poly_lite_model;

  poly_lite_config cfg_;
  vocabulary vocab_;
  std::vector<T> embeddings_;
  std::vector<T> codes_;
};

// Baseline: cosine similarity of idf-weighted bag-of-words vectors.
class tfidf_scorer {
 public:
  using context_state = std::vector<std::pair<std::int32_t, double>>;  // sorted by id, unit norm
  using candidate_state = context_state;

  tfidf_scorer() = default;
  explicit tfidf_scorer(vocabulary vocab) : vocab_(std::move(vocab)) {}

  const vocabulary& vocab() const { return vocab_; }

  context_state encode_tokens(const token_list& toks) const {
    std::vector<std::pair<std::string, double>> bag;
    for (const auto& t : toks) {
      if (t == pad_token || t == sep_token) continue;
      bag.emplace_back(t, 1.0);
    }
    std::sort(bag.begin(), bag.end());
    context_state v;
    for (std::size_t i = 0; i < bag.size();) {
      std::size_t j = i;
      while (j < bag.size() && bag[j].first == bag[i].first) ++j;
      // unknown words are kept apart by hashing them to negative ids
      const auto id = vocab_.contains(bag[i].first) ? vocab_.id(bag[i].first)
                                                     : -1 - static_cast<std::int32_t>(hash_string(bag[i].first) & 0x3fffffff);
      v.emplace_back(id, static_cast<double>(j - i) * vocab_.idf(bag[i].first));
      i = j;
    }
    std::sort(v.begin(), v.end());
    double norm = 0.0;
    for (auto& [id, w] : v) norm += w * w;
    norm = std::sqrt(norm);
    if (norm > 0)
      for (auto& [id, w] : v) w /= norm;
    return v;
  }

  context_state encode_context(const token_list& ctx) const { return encode_tokens(ctx); }
  candidate_state encode_candidate(std::string_view text) const { return encode_tokens(tokenize(text)); }

  double score(const context_state& a, const candidate_state& b) const {
    double s = 0.0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
      if (a[i].first < b[j].first) {
        ++i;
      } else if (b[j].first < a[i].first) {
        ++j;
      } else {
        s += a[i++].second * b[j++].second;
      }
    }
    return s;
  }

 private:
  vocabulary vocab_;
};

}  // namespace dfw
