#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lgsp/backbone.hpp"
#include "lgsp/classifier.hpp"
#include "lgsp/config.hpp"
#include "lgsp/fusion.hpp"
#include "lgsp/gsp.hpp"
#include "lgsp/lsp.hpp"

// The full prompted model: X_final = X + a_l * P_local + a_g * X_global fed
// to the frozen toy transformer with optional token prompts; the class token
// is matched against class prototypes.
namespace lgsp::model {

struct Recorded {
  ad::Var feature;   // [1 x d]
  ad::Var aux_loss;  // token pool key pull term; invalid when unused
  std::vector<std::size_t> lsp_selected;
  std::vector<std::size_t> pool_selected;
};

class Model {
 public:
  explicit Model(const config::ExperimentConfig& cfg);

  const config::ExperimentConfig& config() const { return cfg_; }

  backbone::ToyViT vit;
  backbone::TokenPrompts prompts;
  std::optional<lsp::PromptPool> pool;
  std::optional<gsp::RingBank> rings;
  fusion::FusionParams fusion;
  classifier::PrototypeBank bank;

  // Class-token feature of the unprompted backbone on the raw image.
  std::vector<double> query(const Tensor& x) const;

  // Fused input image fed to the backbone. Evaluation mode.
  Tensor fused_input(const Tensor& x, std::span<const double> query) const;
  // Class-token feature of the prompted model. Evaluation mode.
  std::vector<double> feature(const Tensor& x, std::span<const double> query) const;

  Recorded forward(ad::Tape& tape, const Tensor& x, std::span<const double> query, bool training, Rng& rng);

  // Parameters belonging to a scope name (see config::scope_names). The
  // classifier scope is resolved by the caller since it depends on the session.
  std::vector<ad::Param*> scope(const std::string& name);
  // Every parameter except prototypes, in a fixed order.
  std::vector<ad::Param*> parameters();

  void freeze_all();

 private:
  config::ExperimentConfig cfg_;
};

}  // namespace lgsp::model
