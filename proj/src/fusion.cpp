#include "lgsp/fusion.hpp"

#include "lgsp/error.hpp"

namespace lgsp::fusion {

FusionParams::FusionParams(ConstraintMode mode, double alpha_l, double alpha_g)
    : mode_(mode),
      alpha_l_("fusion.alpha_l", Tensor::scalar(alpha_l)),
      alpha_g_("fusion.alpha_g", Tensor::scalar(mode == ConstraintMode::FixedSum ? 1.0 - alpha_l : alpha_g)) {
  if (mode_ == ConstraintMode::FixedSum) alpha_g_.trainable = false;
}

void FusionParams::set(double alpha_l, double alpha_g) {
  alpha_l_.value[0] = alpha_l;
  alpha_g_.value[0] = mode_ == ConstraintMode::FixedSum ? 1.0 - alpha_l : alpha_g;
}

void FusionParams::set_trainable(bool trainable) {
  alpha_l_.trainable = trainable;
  alpha_g_.trainable = trainable && mode_ == ConstraintMode::Independent;
}

ad::Var FusionParams::alpha_l(ad::Tape& tape) { return tape.param(alpha_l_); }

ad::Var FusionParams::alpha_g(ad::Tape& tape) {
  if (mode_ == ConstraintMode::FixedSum) return ad::affine(tape.param(alpha_l_), -1.0, 1.0);
  return tape.param(alpha_g_);
}

Tensor fuse(const Tensor& x, const Tensor& p_local, const Tensor& x_global, const FusionParams& params) {
  if (x.shape() != p_local.shape() || x.shape() != x_global.shape()) throw InvalidArgument("fuse: shape mismatch");
  double al = params.alpha_l();
  double ag = params.alpha_g();
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + al * p_local[i] + ag * x_global[i];
  return out;
}

ad::Var fuse(ad::Tape& tape, const ad::Var& x, const ad::Var& p_local, const ad::Var& x_global, FusionParams& params) {
  ad::Var out = x;
  if (p_local.valid()) {
    if (p_local.shape() != x.shape()) throw InvalidArgument("fuse: local prompt shape mismatch");
    out = ad::add(out, ad::mul_scalar(p_local, params.alpha_l(tape)));
  }
  if (x_global.valid()) {
    if (x_global.shape() != x.shape()) throw InvalidArgument("fuse: global prompt shape mismatch");
    out = ad::add(out, ad::mul_scalar(x_global, params.alpha_g(tape)));
  }
  return out;
}

}  // namespace lgsp::fusion
