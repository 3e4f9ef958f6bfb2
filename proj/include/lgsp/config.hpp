#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lgsp/backbone.hpp"
#include "lgsp/fusion.hpp"
#include "lgsp/gsp.hpp"
#include "lgsp/lsp.hpp"
#include "lgsp/protocol.hpp"

namespace lgsp::config {

struct DataConfig {
  std::string dir = "data";
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t classes = 20;
  std::size_t pretext_classes = 6;
  std::size_t pretext_per_class = 20;
  std::size_t train_per_class = 20;
  std::size_t test_per_class = 15;
  double template_scale = 0.5;
  double signature_scale = 0.6;
  double motif_scale = 0.8;
  std::size_t motif_size = 8;
  // Size of the shared motif dictionary; 0 draws each class motif independently.
  std::size_t motif_atoms = 6;
  double noise = 0.35;
};

struct BackboneConfig {
  std::size_t patch = 4;
  std::size_t d_model = 32;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t mlp_hidden = 64;
  std::size_t pretext_epochs = 8;
  double pretext_lr = 0.02;
};

struct VptConfig {
  backbone::InsertMode mode = backbone::InsertMode::Deep;
  std::size_t length = 4;
};

struct TokenPoolConfig {
  backbone::InsertMode mode = backbone::InsertMode::None;
  std::size_t size = 10;
  std::size_t select = 5;
  std::size_t length = 1;
  double key_weight = 0.1;
};

struct LspConfig {
  bool enabled = true;
  std::size_t pool_size = 30;
  std::size_t n_select = 5;
  double tau = 1.0;
  bool tau_learnable = false;
  lsp::SelectionMode selection_mode = lsp::SelectionMode::Hard;
  std::size_t hidden = 8;
  std::vector<std::size_t> kernels = {1, 3, 5, 7};
  double dropout = 0.1;
};

struct GspConfig {
  bool enabled = true;
  std::size_t rings = 8;
  double beta = 10.0;
  double tau = 1.0;
  bool tau_learnable = false;
  gsp::FormulaMode formula_mode = gsp::FormulaMode::Annulus;
};

struct FusionConfig {
  fusion::ConstraintMode constraint_mode = fusion::ConstraintMode::Independent;
  double alpha_l = 0.5;
  double alpha_g = 0.5;
};

struct TrainConfig {
  std::size_t base_epochs = 16;
  std::size_t novel_epochs = 5;
  std::size_t batch_size = 8;
  double base_lr = 0.02;
  double novel_lr = 0.002;
  double lsp_lr = 0.001;
  double gsp_base_lr = 0.1;
  double gsp_novel_lr = 0.005;
  double fusion_lr = 0.005;
  double momentum = 0.9;
  double logit_scale = 16.0;
  // Parameter groups trained in sessions >= 1.
  std::vector<std::string> novel_scope = {"classifier", "gsp", "lsp_keys"};
  bool backbone_trainable = false;
};

struct ExperimentConfig {
  std::uint64_t seed = 42;
  std::size_t threads = 1;
  // Empty means a tag derived from the enabled components and ablation flags.
  std::string tag;
  DataConfig data;
  protocol::FscilSpec fscil;
  BackboneConfig backbone;
  VptConfig vpt;
  TokenPoolConfig tokpool;
  LspConfig lsp;
  GspConfig gsp;
  FusionConfig fusion;
  TrainConfig train;
  std::vector<std::size_t> sweep_pool_sizes = {1, 4, 16, 64};
  std::size_t export_samples = 4;
};

// Scope names accepted in train.novel_scope.
const std::vector<std::string>& scope_names();

std::vector<std::string> keys();
// Throws ConfigError on unknown keys and malformed values.
void set(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::string get(const ExperimentConfig& cfg, const std::string& key);

// Applies `key = value` lines (blank lines and # comments ignored) on top of `base`.
ExperimentConfig parse(const std::string& text, ExperimentConfig base = {});
void validate_data(const DataConfig& data);
// Cross-field checks; throws ConfigError naming the offending key.
void validate(const ExperimentConfig& cfg);
// Every key in schema order except `threads`, which never affects results.
// parse(resolved(c)) reproduces c up to the thread count.
std::string resolved(const ExperimentConfig& cfg);

std::string effective_tag(const ExperimentConfig& cfg);

protocol::FscilSpec fscil_spec(const ExperimentConfig& cfg);
backbone::ViTOptions vit_options(const ExperimentConfig& cfg);
lsp::PoolOptions pool_options(const ExperimentConfig& cfg);
gsp::RingBankOptions ring_options(const ExperimentConfig& cfg);

}  // namespace lgsp::config
