#include "lgsp/backbone.hpp"

#include <cmath>
#include <cstring>
#include <string>
#include <type_traits>

#include "lgsp/error.hpp"
#include "lgsp/lsp.hpp"

namespace lgsp::backbone {

namespace {

Tensor sinusoidal(std::size_t positions, std::size_t d) {
  Tensor pe({positions, d});
  for (std::size_t p = 0; p < positions; ++p) {
    for (std::size_t i = 0; i < d; ++i) {
      double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      double angle = static_cast<double>(p) * freq;
      pe[p * d + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

ad::Param normal_param(std::string name, Shape shape, double stddev, Rng& rng) {
  return ad::Param(std::move(name), randn(std::move(shape), rng, stddev));
}

template <typename PromptsT>
std::size_t entry_len(PromptsT& prompts) {
  return prompts.pool.empty() ? 0 : prompts.pool[0].prompts.at(0).value.dim(0);
}

// Prompt block for `layer`, or an invalid Var when the block is inactive or
// carried over from the previous layer.
template <typename PromptsT>
ad::Var vpt_block(ad::Tape& tape, PromptsT& prompts, std::size_t layer) {
  if (prompts.vpt_mode == InsertMode::None || prompts.vpt.empty()) return {};
  if (prompts.vpt_mode == InsertMode::Shallow && layer > 0) return {};
  return tape.param(prompts.vpt.at(prompts.vpt_mode == InsertMode::Deep ? layer : 0));
}

template <typename PromptsT>
ad::Var pool_block(ad::Tape& tape, PromptsT& prompts, const std::vector<std::size_t>& selected, std::size_t layer) {
  if (prompts.pool_mode == InsertMode::None || selected.empty()) return {};
  if (prompts.pool_mode == InsertMode::Shallow && layer > 0) return {};
  std::vector<ad::Var> parts;
  for (std::size_t i : selected) {
    parts.push_back(tape.param(prompts.pool[i].prompts.at(prompts.pool_mode == InsertMode::Deep ? layer : 0)));
  }
  return ad::concat_rows(parts);
}

template <typename VitT, typename PromptsT>
ad::Var forward_impl(ad::Tape& tape, VitT& vit, const ad::Var& x, PromptsT* prompts, std::span<const double> pool_query,
                     ForwardTrace* trace) {
  const ViTOptions& o = vit.options();
  const Shape& xs = x.shape();
  if (xs.size() != 4 || xs[0] != 1 || xs[1] != o.channels || xs[2] != o.height || xs[3] != o.width) {
    throw InvalidArgument("backbone expects a 1x" + std::to_string(o.channels) + "x" + std::to_string(o.height) + "x" +
                          std::to_string(o.width) + " image, got " + shape_string(xs));
  }
  const std::size_t d = o.d_model;
  const std::size_t heads = o.heads;
  const std::size_t dh = d / heads;

  ad::Var patches = ad::patchify(x, o.patch);
  ad::Var emb = ad::add_row(ad::matmul(patches, tape.param(vit.patch_weight())), tape.param(vit.patch_bias()));
  emb = ad::add(emb, tape.constant(vit.positional()));
  ad::Var cls = tape.param(vit.cls_token());
  const std::size_t n_patches = vit.patch_count();

  std::vector<std::size_t> selected;
  std::size_t vpt_len = 0;
  std::size_t pool_len = 0;
  if (prompts) {
    vpt_len = prompts->vpt_mode == InsertMode::None ? 0 : prompts->vpt_length();
    if (prompts->pool_mode != InsertMode::None && !prompts->pool.empty() && prompts->pool_select > 0) {
      if (pool_query.size() != d) throw InvalidArgument("token pool selection needs a d_model query");
      std::vector<double> sims(prompts->pool.size(), 0.0);
      if (l2_norm(pool_query) > kNormEpsilon) {
        for (std::size_t i = 0; i < sims.size(); ++i) {
          sims[i] = cosine_similarity(pool_query, prompts->pool[i].key.value.data());
        }
      }
      selected = lsp::select_topk(sims, prompts->pool_select);
      pool_len = selected.size() * entry_len(*prompts);
    }
  }
  if (trace) trace->pool_selected = selected;

  std::vector<ad::Var> initial{cls};
  if (prompts) {
    if (vpt_len) initial.push_back(vpt_block(tape, *prompts, 0));
    if (pool_len) initial.push_back(pool_block(tape, *prompts, selected, 0));
  }
  initial.push_back(emb);
  ad::Var tokens = ad::concat_rows(initial);

  for (std::size_t l = 0; l < o.layers; ++l) {
    if (l > 0 && prompts && (vpt_len || pool_len)) {
      ad::Var nv = vpt_len ? vpt_block(tape, *prompts, l) : ad::Var{};
      ad::Var np = pool_len ? pool_block(tape, *prompts, selected, l) : ad::Var{};
      if (nv.valid() || np.valid()) {
        std::vector<ad::Var> parts{ad::slice_rows(tokens, 0, 1)};
        if (vpt_len) parts.push_back(nv.valid() ? nv : ad::slice_rows(tokens, 1, vpt_len));
        if (pool_len) parts.push_back(np.valid() ? np : ad::slice_rows(tokens, 1 + vpt_len, pool_len));
        parts.push_back(ad::slice_rows(tokens, 1 + vpt_len + pool_len, n_patches));
        tokens = ad::concat_rows(parts);
      }
    }
    auto& L = vit.layer(l);
    ad::Var q = ad::matmul(tokens, tape.param(L.wq));
    ad::Var k = ad::matmul(tokens, tape.param(L.wk));
    ad::Var v = ad::matmul(tokens, tape.param(L.wv));
    std::vector<ad::Var> head_out;
    std::vector<Tensor> head_attn;
    for (std::size_t h = 0; h < heads; ++h) {
      ad::Var qh = ad::slice_cols(q, h * dh, dh);
      ad::Var kh = ad::slice_cols(k, h * dh, dh);
      ad::Var vh = ad::slice_cols(v, h * dh, dh);
      ad::Var attn = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh))));
      if (trace) head_attn.push_back(attn.value());
      head_out.push_back(ad::matmul(attn, vh));
    }
    ad::Var merged = heads == 1 ? head_out[0] : ad::concat_cols(head_out);
    ad::Var attn_out = ad::add_row(ad::matmul(merged, tape.param(L.wo)), tape.param(L.bo));
    tokens = ad::add(tokens, attn_out);
    ad::Var hidden = ad::relu(ad::add_row(ad::matmul(tokens, tape.param(L.w1)), tape.param(L.b1)));
    tokens = ad::add(tokens, ad::add_row(ad::matmul(hidden, tape.param(L.w2)), tape.param(L.b2)));
    if (trace) {
      trace->attention.push_back(std::move(head_attn));
      trace->token_counts.push_back(tokens.shape()[0]);
    }
  }
  return tokens;
}

}  // namespace

ToyViT::ToyViT(const ViTOptions& o, Rng& rng) : options_(o) {
  if (o.patch == 0 || o.height % o.patch != 0 || o.width % o.patch != 0) {
    throw InvalidArgument("image dimensions must be divisible by the patch size");
  }
  if (o.heads == 0 || o.d_model % o.heads != 0) throw InvalidArgument("d_model must be divisible by the head count");
  if (o.layers == 0) throw InvalidArgument("backbone needs at least one layer");
  const std::size_t d = o.d_model;
  const std::size_t in = o.channels * o.patch * o.patch;
  patch_w_ = normal_param("vit.patch.weight", {in, d}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  patch_b_ = ad::Param("vit.patch.bias", Tensor({d}));
  cls_ = normal_param("vit.cls", {1, d}, 0.5, rng);
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t l = 0; l < o.layers; ++l) {
    std::string p = "vit.layer" + std::to_string(l) + ".";
    Layer L;
    L.wq = normal_param(p + "wq", {d, d}, sd, rng);
    L.wk = normal_param(p + "wk", {d, d}, sd, rng);
    L.wv = normal_param(p + "wv", {d, d}, sd, rng);
    L.wo = normal_param(p + "wo", {d, d}, sd * 0.5, rng);
    L.bo = ad::Param(p + "bo", Tensor({d}));
    L.w1 = normal_param(p + "w1", {d, o.mlp_hidden}, std::sqrt(2.0 / static_cast<double>(d)), rng);
    L.b1 = ad::Param(p + "b1", Tensor({o.mlp_hidden}));
    L.w2 = normal_param(p + "w2", {o.mlp_hidden, d}, 0.5 / std::sqrt(static_cast<double>(o.mlp_hidden)), rng);
    L.b2 = ad::Param(p + "b2", Tensor({d}));
    layers_.push_back(std::move(L));
  }
  pos_ = sinusoidal(patch_count(), d);
}

void ToyViT::set_frozen(bool frozen) {
  frozen_ = frozen;
  for (ad::Param* p : parameters()) p->trainable = !frozen;
}

std::vector<ad::Param*> ToyViT::parameters() {
  std::vector<ad::Param*> out{&patch_w_, &patch_b_, &cls_};
  for (Layer& L : layers_) {
    for (ad::Param* p : {&L.wq, &L.wk, &L.wv, &L.wo, &L.bo, &L.w1, &L.b1, &L.w2, &L.b2}) out.push_back(p);
  }
  return out;
}

std::vector<const ad::Param*> ToyViT::parameters() const {
  std::vector<const ad::Param*> out;
  for (ad::Param* p : const_cast<ToyViT*>(this)->parameters()) out.push_back(p);
  return out;
}

std::uint64_t ToyViT::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const ad::Param* p : parameters()) {
    for (double v : p->value.data()) {
      std::uint64_t bits = 0;
      std::memcpy(&bits, &v, sizeof bits);
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xff;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

std::size_t TokenPrompts::vpt_length() const {
  if (vpt_mode == InsertMode::None || vpt.empty()) return 0;
  return vpt[0].value.dim(0);
}

std::size_t TokenPrompts::pool_entry_length() const {
  return pool.empty() ? 0 : pool[0].prompts.at(0).value.dim(0);
}

std::size_t TokenPrompts::pool_tokens() const {
  if (pool_mode == InsertMode::None || pool.empty()) return 0;
  return pool_select * pool_entry_length();
}

std::vector<ad::Param*> TokenPrompts::parameters() {
  std::vector<ad::Param*> out;
  for (ad::Param& p : vpt) out.push_back(&p);
  for (PoolTokenEntry& e : pool) {
    for (ad::Param& p : e.prompts) out.push_back(&p);
  }
  return out;
}

std::vector<ad::Param*> TokenPrompts::pool_keys() {
  std::vector<ad::Param*> out;
  for (PoolTokenEntry& e : pool) out.push_back(&e.key);
  return out;
}

TokenPrompts make_vpt(InsertMode mode, std::size_t length, const ToyViT& vit, Rng& rng) {
  TokenPrompts tp;
  tp.vpt_mode = length == 0 ? InsertMode::None : mode;
  if (tp.vpt_mode == InsertMode::None) return tp;
  std::size_t count = mode == InsertMode::Deep ? vit.options().layers : 1;
  for (std::size_t l = 0; l < count; ++l) {
    tp.vpt.emplace_back("vpt.layer" + std::to_string(l), randn({length, vit.options().d_model}, rng, 0.1));
  }
  return tp;
}

void add_token_pool(TokenPrompts& tp, InsertMode mode, std::size_t pool_size, std::size_t select,
                    std::size_t entry_length, const ToyViT& vit, Rng& rng) {
  if (select > pool_size) throw InvalidArgument("token pool selection exceeds the pool size");
  tp.pool_mode = (pool_size == 0 || select == 0 || entry_length == 0) ? InsertMode::None : mode;
  tp.pool.clear();
  tp.pool_select = select;
  if (tp.pool_mode == InsertMode::None) return;
  const std::size_t d = vit.options().d_model;
  std::size_t count = mode == InsertMode::Deep ? vit.options().layers : 1;
  for (std::size_t i = 0; i < pool_size; ++i) {
    PoolTokenEntry e;
    Tensor key = randn({d}, rng);
    e.key = ad::Param("tokpool.key" + std::to_string(i), scaled(key, 1.0 / l2_norm(key.data())));
    for (std::size_t l = 0; l < count; ++l) {
      e.prompts.emplace_back("tokpool.entry" + std::to_string(i) + ".layer" + std::to_string(l),
                             randn({entry_length, d}, rng, 0.1));
    }
    tp.pool.push_back(std::move(e));
  }
}

ad::Var forward(ad::Tape& tape, ToyViT& vit, const ad::Var& x, TokenPrompts* prompts, std::span<const double> pool_query,
                ForwardTrace* trace) {
  return forward_impl(tape, vit, x, prompts, pool_query, trace);
}

Tensor forward(const ToyViT& vit, const Tensor& x, const TokenPrompts* prompts, std::span<const double> pool_query,
               ForwardTrace* trace) {
  ad::Tape tape;
  return forward_impl(tape, vit, tape.constant(x), prompts, pool_query, trace).value();
}

Tensor attention_map(const ToyViT& vit, const Tensor& x, const TokenPrompts* prompts, std::size_t layer,
                     std::size_t query_token, std::span<const double> pool_query) {
  if (layer >= vit.options().layers) throw InvalidArgument("attention_map: layer out of range");
  ForwardTrace trace;
  forward(vit, x, prompts, pool_query, &trace);
  const auto& heads = trace.attention[layer];
  std::size_t t = heads[0].dim(0);
  if (query_token >= t) throw InvalidArgument("attention_map: token index out of range");
  std::size_t first_patch = t - vit.patch_count();
  if (query_token != 0 && query_token >= first_patch) {
    throw InvalidArgument("attention_map: query must be the class token or a prompt token");
  }
  Tensor map({vit.grid_height(), vit.grid_width()});
  for (const Tensor& a : heads) {
    for (std::size_t p = 0; p < vit.patch_count(); ++p) map[p] += a[query_token * t + first_patch + p];
  }
  double total = 0.0;
  for (double v : map.data()) total += v;
  for (double& v : map.data()) v /= total;
  return map;
}

}  // namespace lgsp::backbone
