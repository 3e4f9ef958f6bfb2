#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "lgsp/autodiff.hpp"
#include "lgsp/tensor.hpp"

// Toy vision transformer: patch embedding, class token, sinusoidal positions,
// pre-residual multi-head attention and ReLU MLP blocks (no normalization).
namespace lgsp::backbone {

struct ViTOptions {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t patch = 4;
  std::size_t d_model = 32;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t mlp_hidden = 64;
};

struct Layer {
  ad::Param wq, wk, wv, wo, bo;
  ad::Param w1, b1, w2, b2;
};

class ToyViT {
 public:
  ToyViT() = default;
  ToyViT(const ViTOptions& options, Rng& rng);

  const ViTOptions& options() const { return options_; }
  std::size_t grid_height() const { return options_.height / options_.patch; }
  std::size_t grid_width() const { return options_.width / options_.patch; }
  std::size_t patch_count() const { return grid_height() * grid_width(); }

  bool frozen() const { return frozen_; }
  void set_frozen(bool frozen);

  std::vector<ad::Param*> parameters();
  std::vector<const ad::Param*> parameters() const;
  // FNV-1a over the bit patterns of every parameter value.
  std::uint64_t checksum() const;

  ad::Param& patch_weight() { return patch_w_; }
  const ad::Param& patch_weight() const { return patch_w_; }
  ad::Param& patch_bias() { return patch_b_; }
  const ad::Param& patch_bias() const { return patch_b_; }
  ad::Param& cls_token() { return cls_; }
  const ad::Param& cls_token() const { return cls_; }
  Layer& layer(std::size_t l) { return layers_.at(l); }
  const Layer& layer(std::size_t l) const { return layers_.at(l); }
  const Tensor& positional() const { return pos_; }

 private:
  ViTOptions options_;
  ad::Param patch_w_;  // [C*p*p, d]
  ad::Param patch_b_;  // [d]
  ad::Param cls_;      // [1, d]
  std::vector<Layer> layers_;
  Tensor pos_;         // [P, d], sinusoidal
  bool frozen_ = false;
};

enum class InsertMode { None, Shallow, Deep };

struct PoolTokenEntry {
  ad::Param key;                   // [d]
  std::vector<ad::Param> prompts;  // one [len x d] per layer (only [0] used when shallow)
};

// Prompt tokens inserted between the class token and the patch tokens:
// [cls | vpt block | pool block | patches].
struct TokenPrompts {
  InsertMode vpt_mode = InsertMode::None;
  std::vector<ad::Param> vpt;  // one [len x d] per layer (only [0] used when shallow)

  InsertMode pool_mode = InsertMode::None;
  std::vector<PoolTokenEntry> pool;
  std::size_t pool_select = 0;

  std::size_t vpt_length() const;
  std::size_t pool_entry_length() const;
  std::size_t pool_tokens() const;  // pool_select * entry length when a pool is active
  std::size_t prompt_tokens() const { return vpt_length() + pool_tokens(); }

  std::vector<ad::Param*> parameters();
  std::vector<ad::Param*> pool_keys();
};

TokenPrompts make_vpt(InsertMode mode, std::size_t length, const ToyViT& vit, Rng& rng);
void add_token_pool(TokenPrompts& prompts, InsertMode mode, std::size_t pool_size, std::size_t select,
                    std::size_t entry_length, const ToyViT& vit, Rng& rng);

struct ForwardTrace {
  // attention[layer][head] is a [T x T] row-stochastic matrix.
  std::vector<std::vector<Tensor>> attention;
  std::vector<std::size_t> token_counts;
  std::vector<std::size_t> pool_selected;
};

// Recorded forward of one image [1 x C x H x W]. `pool_query` selects token
// pool entries (top-k cosine against their keys, ties to lowest index).
// Returns the final [T x d] token matrix with the class token at row 0.
ad::Var forward(ad::Tape& tape, ToyViT& vit, const ad::Var& x, TokenPrompts* prompts,
                std::span<const double> pool_query = {}, ForwardTrace* trace = nullptr);

// Unrecorded convenience forward; returns [T x d].
Tensor forward(const ToyViT& vit, const Tensor& x, const TokenPrompts* prompts = nullptr,
               std::span<const double> pool_query = {}, ForwardTrace* trace = nullptr);

// Class-token (or prompt-token) attention over patch tokens at `layer`,
// averaged over heads and renormalized over patches. [grid_h x grid_w]
Tensor attention_map(const ToyViT& vit, const Tensor& x, const TokenPrompts* prompts, std::size_t layer,
                     std::size_t query_token, std::span<const double> pool_query = {});

}  // namespace lgsp::backbone
