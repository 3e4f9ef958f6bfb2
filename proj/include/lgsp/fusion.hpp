#pragma once

#include "lgsp/autodiff.hpp"
#include "lgsp/tensor.hpp"

namespace lgsp::fusion {

enum class ConstraintMode { Independent, FixedSum };

// Residual mixing weights. In FixedSum mode only alpha_l is a free
// parameter and alpha_g is reported as 1 - alpha_l.
class FusionParams {
 public:
  explicit FusionParams(ConstraintMode mode = ConstraintMode::Independent, double alpha_l = 0.5, double alpha_g = 0.5);

  ConstraintMode mode() const { return mode_; }
  double alpha_l() const { return alpha_l_.value[0]; }
  double alpha_g() const { return mode_ == ConstraintMode::FixedSum ? 1.0 - alpha_l() : alpha_g_.value[0]; }

  ad::Param& alpha_l_param() { return alpha_l_; }
  ad::Param& alpha_g_param() { return alpha_g_; }
  const ad::Param& alpha_l_param() const { return alpha_l_; }
  const ad::Param& alpha_g_param() const { return alpha_g_; }

  void set(double alpha_l, double alpha_g);
  void set_trainable(bool trainable);

  ad::Var alpha_l(ad::Tape& tape);
  ad::Var alpha_g(ad::Tape& tape);

 private:
  ConstraintMode mode_;
  ad::Param alpha_l_;
  ad::Param alpha_g_;
};

// X + alpha_l * P_local + alpha_g * X_global
Tensor fuse(const Tensor& x, const Tensor& p_local, const Tensor& x_global, const FusionParams& params);

// Differentiable form. Either prompt may be absent (invalid Var) to model
// the single-branch ablations.
ad::Var fuse(ad::Tape& tape, const ad::Var& x, const ad::Var& p_local, const ad::Var& x_global, FusionParams& params);

}  // namespace lgsp::fusion
