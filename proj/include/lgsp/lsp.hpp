#pragma once

#include <vector>

#include "lgsp/autodiff.hpp"
#include "lgsp/tensor.hpp"

// Local spatial prompting: a pool of small convolutional prompt generators,
// each with a learnable key matched against a query projected from the
// backbone's class token.
namespace lgsp::lsp {

enum class SelectionMode { Hard, Soft };

struct PromptPoolEntry {
  ad::Param conv1_weight;  // [C_hidden, C_in, k1, k1]
  ad::Param conv1_bias;    // [C_hidden]
  ad::Param conv2_weight;  // [C_in, C_hidden, k2, k2]
  ad::Param conv2_bias;    // [C_in]
  ad::Param key;           // [d_key]
  double dropout_rate = 0.1;

  std::size_t in_channels() const { return conv1_weight.value.dim(1); }
  std::size_t hidden_channels() const { return conv1_weight.value.dim(0); }
  std::size_t kernel1() const { return conv1_weight.value.dim(2); }
  std::size_t kernel2() const { return conv2_weight.value.dim(2); }
};

struct PoolOptions {
  std::size_t pool_size = 30;
  std::size_t n_select = 5;
  double temperature = 1.0;
  bool learnable_temperature = false;
  SelectionMode mode = SelectionMode::Hard;
  std::size_t in_channels = 3;
  std::size_t hidden_channels = 8;
  std::vector<std::size_t> kernels = {1, 3, 5, 7};
  double dropout = 0.1;
  std::size_t d_model = 32;
  std::size_t d_key = 32;
};

// Kaiming fan-in normal kernels, zero biases, unit-norm N(0,1) key.
PromptPoolEntry make_entry(std::size_t index, const PoolOptions& options, std::size_t k1, std::size_t k2, Rng& rng);

class PromptPool {
 public:
  PromptPool() = default;
  // Kernel pairs cycle through consecutive pairs of `options.kernels`; the
  // projection g starts as the identity when d_key == d_model.
  PromptPool(const PoolOptions& options, Rng& rng);

  std::size_t size() const { return entries_.size(); }
  std::size_t n_select() const { return n_select_; }
  SelectionMode mode() const { return mode_; }
  double temperature() const { return temperature_.value[0]; }

  std::vector<PromptPoolEntry>& entries() { return entries_; }
  const std::vector<PromptPoolEntry>& entries() const { return entries_; }
  ad::Param& projection() { return projection_; }
  const ad::Param& projection() const { return projection_; }
  ad::Param& temperature_param() { return temperature_; }
  const ad::Param& temperature_param() const { return temperature_; }

  void set_mode(SelectionMode mode) { mode_ = mode; }
  void set_n_select(std::size_t n);
  void set_temperature(double tau);

  // Entries are taken as-is; used by tests and permutation checks.
  void assign(std::vector<PromptPoolEntry> entries, ad::Param projection, std::size_t n_select, double temperature,
              SelectionMode mode);

 private:
  std::vector<PromptPoolEntry> entries_;
  ad::Param projection_;
  ad::Param temperature_;
  std::size_t n_select_ = 1;
  SelectionMode mode_ = SelectionMode::Hard;
};

// conv(k1) -> ReLU -> dropout (training only) -> conv(k2); output keeps the
// input's B x C x H x W shape.
Tensor generate_prompt(const PromptPoolEntry& entry, const Tensor& x, bool training, Rng& rng);
ad::Var generate_prompt(ad::Tape& tape, PromptPoolEntry& entry, const ad::Var& x, bool training, Rng& rng);

// q = g(features[b, 0, :]) for every batch item; features is B x T x d_model
// (or T x d_model for a single item). Returns [B x d_key].
Tensor query_key(const Tensor& features, const Tensor& projection);

// Cosine similarity of q against every key. A degenerate (near-zero) query
// yields all zeros so selection falls back to the index tie-break.
std::vector<double> similarities(std::span<const double> q, const PromptPool& pool);

// Indices of the n largest scores, sorted by descending score then index.
std::vector<std::size_t> select_topk(std::span<const double> scores, std::size_t n);
std::vector<std::size_t> select_topk(std::span<const double> q, const PromptPool& pool);

// softmax over the selected similarities divided by tau.
std::vector<double> selection_weights(std::span<const double> q, const PromptPool& pool,
                                      const std::vector<std::size_t>& selected);

Tensor aggregate(const std::vector<Tensor>& prompts, std::span<const double> weights);

// Softmax over all M similarities and weighted sum of every entry's prompt.
Tensor soft_pool_forward(std::span<const double> q, const PromptPool& pool, const Tensor& x, bool training, Rng& rng);

struct LocalPrompt {
  Tensor prompt;
  std::vector<std::size_t> selected;
  std::vector<double> weights;
};

// Full local prompt for one query: hard top-k or soft pooling per the pool mode.
LocalPrompt local_prompt(std::span<const double> q, const PromptPool& pool, const Tensor& x, bool training, Rng& rng);

struct RecordedLocalPrompt {
  ad::Var prompt;
  std::vector<std::size_t> selected;
  std::vector<double> weights;
};

// Differentiable local prompt. `q` is the recorded projected query [1 x d_key].
// The discrete selection is computed from current values and held fixed.
RecordedLocalPrompt local_prompt(ad::Tape& tape, PromptPool& pool, const ad::Var& q, const ad::Var& x, bool training,
                                 Rng& rng);

}  // namespace lgsp::lsp
