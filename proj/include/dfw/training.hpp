#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dfw/context.hpp"
#include "dfw/core.hpp"
#include "dfw/csv.hpp"
#include "dfw/ranking.hpp"
#include "dfw/rng.hpp"
#include "dfw/scorer.hpp"

namespace dfw {

class training_diverged : public error {
 public:
  using error::error;
};

// Token ids for one training pair: the context, the gold target and every
// utterance of the dialogue history (candidate negatives).
struct prepared_example {
  std::vector<std::int32_t> context;
  std::vector<std::int32_t> gold;
  std::vector<std::vector<std::int32_t>> history;
};

template <class T>
prepared_example prepare_example(const poly_lite_model<T>& model, const training_pair& p) {
  context_options opt;
  opt.max_context_tokens = model.config().max_context_tokens;
  prepared_example ex;
  ex.context = model.context_ids(serialize_context(p.context, opt));
  ex.gold = model.candidate_ids(p.target);
  for (const auto& h : p.context.dialogue_history)
    if (h.text != p.target) ex.history.push_back(model.candidate_ids(h.text));
  return ex;
}

// One batch as seen by the loss: each item's logits are over every batch gold
// (its own gold is the positive) plus its own extra negatives.
struct batch_item {
  const std::vector<std::int32_t>* context = nullptr;
  const std::vector<std::int32_t>* gold = nullptr;
  std::vector<const std::vector<std::int32_t>*> extra_negatives;
};

template <class T>
struct model_gradient {
  std::vector<T> embeddings;
  std::vector<T> codes;
  std::vector<std::int32_t> touched;
  std::vector<char> is_touched;

  explicit model_gradient(const poly_lite_model<T>& m)
      : embeddings(m.embeddings().size(), T(0)),
        codes(m.codes().size(), T(0)),
        is_touched(static_cast<std::size_t>(m.vocab().size()), 0) {}

  void clear(int d) {
    for (auto id : touched) {
      std::fill_n(embeddings.begin() + static_cast<std::ptrdiff_t>(id) * d, d, T(0));
      is_touched[static_cast<std::size_t>(id)] = 0;
    }
    touched.clear();
    std::fill(codes.begin(), codes.end(), T(0));
  }

  T* row(std::int32_t id, int d) {
    if (!is_touched[static_cast<std::size_t>(id)]) {
      is_touched[static_cast<std::size_t>(id)] = 1;
      touched.push_back(id);
    }
    return embeddings.data() + static_cast<std::size_t>(id) * d;
  }

  double norm(int d) const {
    double s = 0.0;
    for (auto id : touched)
      for (int k = 0; k < d; ++k) {
        const double v = embeddings[static_cast<std::size_t>(id) * d + k];
        s += v * v;
      }
    for (auto v : codes) s += static_cast<double>(v) * v;
    return std::sqrt(s);
  }
};

namespace detail {

template <class T>
void add_candidate_grad(model_gradient<T>& g, const std::vector<std::int32_t>& ids, const T* du, int d) {
  const T inv = T(1) / static_cast<T>(ids.size());
  for (auto id : ids) {
    T* r = g.row(id, d);
    for (int k = 0; k < d; ++k) r[k] += inv * du[k];
  }
}

}  // namespace detail

// Mean cross-entropy over the batch; when `grad` is non-null the analytic
// gradient of that mean is accumulated into it.
template <class T>
T batch_loss(const poly_lite_model<T>& m, std::span<const batch_item> batch, model_gradient<T>* grad) {
  const int d = m.dim(), n = m.num_codes();
  const T s = m.scale();
  const std::size_t b = batch.size();
  if (b == 0) return T(0);
  const T inv_b = T(1) / static_cast<T>(b);

  std::vector<std::vector<T>> gold_u(b);
  for (std::size_t k = 0; k < b; ++k) gold_u[k] = m.encode_candidate_ids(*batch[k].gold);
  std::vector<std::vector<T>> gold_du(b, std::vector<T>(grad ? static_cast<std::size_t>(d) : 0, T(0)));

  T total = 0;
  std::vector<T> e(static_cast<std::size_t>(n)), w(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < b; ++i) {
    const auto& item = batch[i];
    const auto cs = m.encode_context_ids(*item.context);
    const std::size_t num_extra = item.extra_negatives.size();
    const std::size_t num_cand = b + num_extra;

    std::vector<std::vector<T>> extra_u(num_extra);
    for (std::size_t k = 0; k < num_extra; ++k) extra_u[k] = m.encode_candidate_ids(*item.extra_negatives[k]);
    auto u_of = [&](std::size_t k) -> const std::vector<T>& { return k < b ? gold_u[k] : extra_u[k - b]; };

    std::vector<T> logits(num_cand);
    std::vector<T> all_e(num_cand * n), all_w(num_cand * n);
    for (std::size_t k = 0; k < num_cand; ++k) {
      logits[k] = m.score_detail(cs, u_of(k), std::span<T>(all_e.data() + k * n, n), std::span<T>(all_w.data() + k * n, n));
    }
    std::vector<T> p(logits);
    detail::softmax_inplace(std::span<T>(p));
    const T mx = *std::max_element(logits.begin(), logits.end());
    T lse = 0;
    for (auto l : logits) lse += std::exp(l - mx);
    lse = mx + std::log(lse);
    total += lse - logits[i];
    if (!grad || cs.length == 0) continue;

    // d loss / d logit_k = p_k - [k == i]
    std::vector<T> dy(static_cast<std::size_t>(n) * d, T(0));
    std::vector<T> du(static_cast<std::size_t>(d));
    for (std::size_t k = 0; k < num_cand; ++k) {
      const T dl = (p[k] - (k == i ? T(1) : T(0))) * inv_b;
      if (dl == T(0)) continue;
      const auto& u = u_of(k);
      std::fill(du.begin(), du.end(), T(0));
      for (int j = 0; j < n; ++j) {
        const T gj = all_w[k * n + j] * (T(1) + s * (all_e[k * n + j] - logits[k])) * dl;
        const T* yj = cs.y.data() + static_cast<std::size_t>(j) * d;
        T* dyj = dy.data() + static_cast<std::size_t>(j) * d;
        for (int c = 0; c < d; ++c) {
          du[c] += gj * yj[c];
          dyj[c] += gj * u[c];
        }
      }
      if (k < b) {
        for (int c = 0; c < d; ++c) gold_du[k][c] += du[c];
      } else {
        detail::add_candidate_grad(*grad, *item.extra_negatives[k - b], du.data(), d);
      }
    }

    // back through the code attention over the context
    const int len = cs.length;
    std::vector<T> dh(static_cast<std::size_t>(len) * d, T(0));
    std::vector<T> df(static_cast<std::size_t>(len));
    for (int j = 0; j < n; ++j) {
      const T* a = cs.attn.data() + static_cast<std::size_t>(j) * len;
      const T* dyj = dy.data() + static_cast<std::size_t>(j) * d;
      T mean = 0;
      for (int t = 0; t < len; ++t) {
        df[t] = detail::dot(dyj, cs.h.data() + static_cast<std::size_t>(t) * d, d);
        mean += a[t] * df[t];
      }
      T* dc = grad->codes.data() + static_cast<std::size_t>(j) * d;
      const T* cj = m.code(j);
      for (int t = 0; t < len; ++t) {
        const T dft = a[t] * (df[t] - mean) * s;
        const T* ht = cs.h.data() + static_cast<std::size_t>(t) * d;
        T* dht = dh.data() + static_cast<std::size_t>(t) * d;
        for (int c = 0; c < d; ++c) {
          dht[c] += a[t] * dyj[c] + dft * cj[c];
          dc[c] += dft * ht[c];
        }
      }
    }
    const auto& ctx = *item.context;
    for (int t = 0; t < len; ++t) {
      T* r = grad->row(ctx[static_cast<std::size_t>(t)], d);
      const T* dht = dh.data() + static_cast<std::size_t>(t) * d;
      for (int c = 0; c < d; ++c) r[c] += dht[c];
    }
  }
  if (grad)
    for (std::size_t k = 0; k < b; ++k) detail::add_candidate_grad(*grad, *batch[k].gold, gold_du[k].data(), d);
  return total * inv_b;
}

struct train_result_trace {
  std::vector<double> epoch_loss;

  void write_csv(std::ostream& os) const {
    csv::write_row(os, {"epoch", "mean_loss"});
    for (std::size_t e = 0; e < epoch_loss.size(); ++e)
      csv::write_row(os, {std::to_string(e + 1), csv::number(epoch_loss[e])});
  }
};

// Minibatch SGD with in-batch negatives plus up to H history negatives per
// example, gradient-norm clipping, deterministic given config().seed.
// `negative_bank` only supplies negatives when a batch holds a single example.
template <class T>
train_result_trace train(poly_lite_model<T>& m, const std::vector<training_pair>& pairs,
                         const candidate_bank* negative_bank = nullptr) {
  if (pairs.empty()) throw error("train: no training pairs");
  const auto& cfg = m.config();
  cfg.validate();
  const int d = m.dim();

  std::vector<prepared_example> data;
  data.reserve(pairs.size());
  for (const auto& p : pairs) data.push_back(prepare_example(m, p));
  std::vector<std::vector<std::int32_t>> bank_ids;
  if (negative_bank)
    for (const auto& e : negative_bank->entries()) bank_ids.push_back(m.candidate_ids(e.text));

  const std::size_t bsz = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), data.size());
  rng_t rng(mix_seed(cfg.seed, 0x7a11));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  model_gradient<T> grad(m);
  train_result_trace trace;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += bsz) {
      const std::size_t end = std::min(order.size(), start + bsz);
      std::vector<batch_item> batch;
      batch.reserve(end - start);
      for (std::size_t q = start; q < end; ++q) {
        const auto& ex = data[order[q]];
        batch_item item{&ex.context, &ex.gold, {}};
        const std::size_t h = std::min<std::size_t>(static_cast<std::size_t>(cfg.history_negatives), ex.history.size());
        if (h > 0) {
          std::vector<std::size_t> idx(ex.history.size());
          std::iota(idx.begin(), idx.end(), std::size_t{0});
          for (std::size_t r = 0; r < h; ++r) std::swap(idx[r], idx[r + uniform_index(rng, idx.size() - r)]);
          for (std::size_t r = 0; r < h; ++r) item.extra_negatives.push_back(&ex.history[idx[r]]);
        }
        batch.push_back(std::move(item));
      }
      if (batch.size() == 1 && !bank_ids.empty()) {
        for (std::size_t r = 0; r + 1 < static_cast<std::size_t>(cfg.batch_size); ++r)
          batch[0].extra_negatives.push_back(&bank_ids[uniform_index(rng, bank_ids.size())]);
      }

      grad.clear(d);
      const T loss = batch_loss<T>(m, batch, &grad);
      if (!std::isfinite(static_cast<double>(loss))) {
        std::ostringstream msg;
        msg << "training diverged: non-finite loss at epoch " << epoch + 1 << ", batch " << batches + 1
            << " (learning_rate=" << cfg.learning_rate << ")";
        throw training_diverged(msg.str());
      }
      epoch_total += static_cast<double>(loss);
      ++batches;

      const double gn = grad.norm(d);
      const double factor = gn > cfg.clip_norm ? cfg.clip_norm / gn : 1.0;
      const T step = static_cast<T>(cfg.learning_rate * factor);
      if (step != T(0)) {
        auto& emb = m.embeddings();
        for (auto id : grad.touched) {
          T* p = emb.data() + static_cast<std::size_t>(id) * d;
          const T* g = grad.embeddings.data() + static_cast<std::size_t>(id) * d;
          for (int c = 0; c < d; ++c) p[c] -= step * g[c];
        }
        auto& codes = m.codes();
        for (std::size_t c = 0; c < codes.size(); ++c) codes[c] -= step * grad.codes[c];
      }
    }
    trace.epoch_loss.push_back(batches ? epoch_total / static_cast<double>(batches) : 0.0);
  }
  if (!m.all_finite()) throw training_diverged("training diverged: non-finite parameters");
  return trace;
}

}  // namespace dfw
