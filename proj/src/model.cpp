#include "lgsp/model.hpp"

#include "lgsp/error.hpp"

namespace lgsp::model {

Model::Model(const config::ExperimentConfig& cfg)
    : fusion(cfg.fusion.constraint_mode, cfg.fusion.alpha_l, cfg.fusion.alpha_g), cfg_(cfg) {
  config::validate(cfg);
  Rng rng(mix_seed(cfg.seed, 0x30DE1));
  vit = backbone::ToyViT(config::vit_options(cfg), rng);
  Rng prompt_rng = rng.fork(1);
  if (cfg.vpt.mode != backbone::InsertMode::None) {
    prompts = backbone::make_vpt(cfg.vpt.mode, cfg.vpt.length, vit, prompt_rng);
  }
  if (cfg.tokpool.mode != backbone::InsertMode::None) {
    backbone::add_token_pool(prompts, cfg.tokpool.mode, cfg.tokpool.size, cfg.tokpool.select, cfg.tokpool.length, vit,
                             prompt_rng);
  }
  if (cfg.lsp.enabled) {
    Rng r = rng.fork(2);
    pool.emplace(config::pool_options(cfg), r);
  }
  if (cfg.gsp.enabled) {
    Rng r = rng.fork(3);
    rings.emplace(cfg.data.height, cfg.data.width, config::ring_options(cfg), r);
  }
}

std::vector<double> Model::query(const Tensor& x) const {
  Tensor tokens = backbone::forward(vit, x);
  auto row = tokens.data().subspan(0, tokens.dim(1));
  return {row.begin(), row.end()};
}

Tensor Model::fused_input(const Tensor& x, std::span<const double> query) const {
  if (!pool && !rings) return x;
  Tensor p_local(x.shape()), x_global(x.shape());
  if (pool) {
    Tensor q = lsp::query_key(Tensor({1, query.size()}, {query.begin(), query.end()}), pool->projection().value);
    Rng unused(0);
    p_local = lsp::local_prompt(q.data(), *pool, x, false, unused).prompt;
  }
  if (rings) x_global = gsp::enhance(x, *rings).x_global;
  return fusion::fuse(x, p_local, x_global, fusion);
}

std::vector<double> Model::feature(const Tensor& x, std::span<const double> query) const {
  Tensor tokens = backbone::forward(vit, fused_input(x, query), &prompts, query);
  auto row = tokens.data().subspan(0, tokens.dim(1));
  return {row.begin(), row.end()};
}

Recorded Model::forward(ad::Tape& tape, const Tensor& x, std::span<const double> query, bool training, Rng& rng) {
  Recorded out;
  ad::Var xv = tape.constant(x);
  ad::Var p_local, x_global;
  if (pool) {
    ad::Var q = ad::matmul(tape.constant(Tensor({1, query.size()}, {query.begin(), query.end()})),
                           tape.param(pool->projection()));
    auto lp = lsp::local_prompt(tape, *pool, q, xv, training, rng);
    p_local = lp.prompt;
    out.lsp_selected = lp.selected;
  }
  if (rings) x_global = gsp::enhance(tape, xv, *rings);
  ad::Var fused = fusion::fuse(tape, xv, p_local, x_global, fusion);

  backbone::ForwardTrace trace;
  ad::Var tokens = backbone::forward(tape, vit, fused, &prompts, query, &trace);
  out.feature = ad::slice_rows(tokens, 0, 1);
  out.pool_selected = trace.pool_selected;

  if (!prompts.pool.empty() && cfg_.tokpool.key_weight > 0.0) {
    ad::Var qc = tape.constant(Tensor::vector({query.begin(), query.end()}));
    std::vector<ad::Var> pulls;
    for (std::size_t i : trace.pool_selected) pulls.push_back(ad::cosine(qc, tape.param(prompts.pool[i].key)));
    // weight * sum(1 - cos)
    ad::Var s = ad::sum(ad::stack(pulls));
    out.aux_loss = ad::affine(s, -cfg_.tokpool.key_weight, cfg_.tokpool.key_weight * static_cast<double>(pulls.size()));
  }
  return out;
}

std::vector<ad::Param*> Model::scope(const std::string& name) {
  std::vector<ad::Param*> out;
  if (name == "vpt") {
    for (auto& p : prompts.vpt) out.push_back(&p);
  } else if (name == "tokpool") {
    for (auto& e : prompts.pool) {
      out.push_back(&e.key);
      for (auto& p : e.prompts) out.push_back(&p);
    }
  } else if (name == "lsp" || name == "lsp_keys" || name == "lsp_generators") {
    if (!pool) return out;
    bool keys = name != "lsp_generators", gens = name != "lsp_keys";
    for (auto& e : pool->entries()) {
      if (gens) {
        for (ad::Param* p : {&e.conv1_weight, &e.conv1_bias, &e.conv2_weight, &e.conv2_bias}) out.push_back(p);
      }
      if (keys) out.push_back(&e.key);
    }
    if (keys) out.push_back(&pool->projection());
    if (name == "lsp" && cfg_.lsp.tau_learnable) out.push_back(&pool->temperature_param());
  } else if (name == "gsp") {
    if (!rings) return out;
    out.push_back(&rings->weights());
    if (cfg_.gsp.tau_learnable) out.push_back(&rings->temperature_param());
  } else if (name == "fusion") {
    if (!pool && !rings) return out;
    if (pool) out.push_back(&fusion.alpha_l_param());
    if (rings && fusion.mode() == fusion::ConstraintMode::Independent) out.push_back(&fusion.alpha_g_param());
    if (rings && !pool && fusion.mode() == fusion::ConstraintMode::FixedSum) out.push_back(&fusion.alpha_l_param());
  } else if (name == "backbone") {
    out = vit.parameters();
  } else if (name != "classifier") {
    throw InvalidArgument("unknown parameter scope '" + name + "'");
  }
  return out;
}

std::vector<ad::Param*> Model::parameters() {
  std::vector<ad::Param*> out = vit.parameters();
  for (auto* p : prompts.parameters()) out.push_back(p);
  if (pool) {
    for (auto* p : scope("lsp_generators")) out.push_back(p);
    for (auto* p : scope("lsp_keys")) out.push_back(p);
    out.push_back(&pool->temperature_param());
  }
  if (rings) {
    out.push_back(&rings->weights());
    out.push_back(&rings->temperature_param());
  }
  out.push_back(&fusion.alpha_l_param());
  out.push_back(&fusion.alpha_g_param());
  return out;
}

void Model::freeze_all() {
  for (auto* p : parameters()) p->trainable = false;
  for (auto* p : bank.parameters()) p->trainable = false;
}

}  // namespace lgsp::model
