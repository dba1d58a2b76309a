#pragma once

#include <memory>
#include <set>
#include <string>

#include "dfw/context.hpp"
#include "dfw/ranking.hpp"
#include "dfw/scorer.hpp"

namespace dfw {

using model_t = poly_lite_model<float>;

// An immutable, servable scorer snapshot: model, vetted bank with cached
// encodings, and the decoding control it replies with.
struct deployment {
  std::string variant_id;
  std::string checkpoint_ref;
  std::shared_ptr<const model_t> model;
  encoded_bank<model_t> bank;
  decoding_control control;
  context_options context;

  static std::shared_ptr<const deployment> make(std::string variant_id, std::shared_ptr<const model_t> model,
                                                std::shared_ptr<const candidate_bank> bank, decoding_control control,
                                                std::string checkpoint_ref = {}) {
    if (!model) throw error("deployment: null model");
    if (!bank || !bank->vetted() || bank->empty()) throw error("deployment: bank must be vetted and non-empty");
    auto d = std::make_shared<deployment>();
    d->variant_id = std::move(variant_id);
    d->checkpoint_ref = std::move(checkpoint_ref);
    d->context.max_context_tokens = model->config().max_context_tokens;
    d->bank = encoded_bank<model_t>(*model, std::move(bank));
    d->model = std::move(model);
    d->control = control;
    return d;
  }

  model_t::context_state encode(const context_bundle& ctx) const {
    return model->encode_context(serialize_context(ctx, context));
  }

  // Top candidate under the decoding control, skipping `exclude`.
  scored_candidate reply(const context_bundle& ctx, const std::set<std::string>& exclude = {}) const {
    return rank_candidates(*model, encode(ctx), bank, control, exclude).front();
  }

  const std::string& text(const scored_candidate& c) const { return (*bank.bank)[c.index].text; }
};

}  // namespace dfw
