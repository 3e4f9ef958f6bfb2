#pragma once

#include <optional>
#include <vector>

#include "lgsp/autodiff.hpp"
#include "lgsp/spectral.hpp"
#include "lgsp/tensor.hpp"

// Global spatial prompting: softmax-weighted concentric frequency-ring masks
// applied to the centered spectrum of the input.
namespace lgsp::gsp {

// How the two sigmoids of a ring mask are written. `Verbatim` evaluates
// sigma(-beta (D - r)) and `Annulus` evaluates sigma(beta (r - D)); the two
// are the same function and are kept selectable so both spellings stay tested.
enum class FormulaMode { Verbatim, Annulus };

// D[y][x] = sqrt((y - H/2)^2 + (x - W/2)^2) with real-valued halves. [H x W]
Tensor distance_matrix(std::size_t h, std::size_t w);

double max_radius(std::size_t h, std::size_t w);

// r_k = (k / K) * R_max for k = 1..K.
std::vector<double> ring_radii(std::size_t rings, std::size_t h, std::size_t w);

// M_k at one distance value: edge(r_outer) - edge(r_inner).
double ring_value(double d, double r_inner, double r_outer, double beta, FormulaMode mode);

struct RingBankOptions {
  std::size_t rings = 8;
  double beta = 10.0;
  double temperature = 1.0;
  bool learnable_temperature = false;
  FormulaMode mode = FormulaMode::Annulus;
};

class RingBank {
 public:
  // Band weights drawn from N(0, 1).
  RingBank(std::size_t h, std::size_t w, const RingBankOptions& options, Rng& rng);
  RingBank(std::size_t h, std::size_t w, const RingBankOptions& options, std::vector<double> weights);

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  std::size_t rings() const { return options_.rings; }
  double beta() const { return options_.beta; }
  FormulaMode mode() const { return options_.mode; }
  double temperature() const { return temperature_.value[0]; }
  // r_0 .. r_K with r_0 = 0.
  const std::vector<double>& radii() const { return radii_; }
  const Tensor& distance() const { return distance_; }

  ad::Param& weights() { return weights_; }
  const ad::Param& weights() const { return weights_; }
  ad::Param& temperature_param() { return temperature_; }
  const ad::Param& temperature_param() const { return temperature_; }

  // M_k, 1 <= k <= K. [H x W]
  Tensor ring_mask(std::size_t k) const;
  // All K masks stacked as [K x H*W].
  const Tensor& mask_stack() const { return masks_; }
  // softmax(w * tau)
  std::vector<double> band_weights() const;
  // sum_k softmax(w * tau)_k M_k. [H x W]
  Tensor combined_mask() const;
  // sigma(-beta(D - r_K)) - sigma(-beta D), the closed form of sum_k M_k.
  Tensor telescoped_mask() const;

  // Differentiable combined mask, [1 x H*W].
  ad::Var combined_mask(ad::Tape& tape);

 private:
  double edge(double d, double r) const;

  std::size_t h_, w_;
  RingBankOptions options_;
  std::vector<double> radii_;
  Tensor distance_;
  Tensor masks_;
  ad::Param weights_;
  ad::Param temperature_;
};

struct Enhanced {
  Tensor x_global;
  spectral::SpectrumTensor f_enhanced;
  double max_imag_residue = 0.0;
};

// F_enhanced = F_c(x) * combined mask; x_global = real(idft_c(F_enhanced)).
// `mask_override`, when set, replaces the bank's combined mask.
Enhanced enhance(const Tensor& x, const RingBank& bank, const std::optional<Tensor>& mask_override = std::nullopt);

// Differentiable counterpart of `enhance` for one recorded input.
ad::Var enhance(ad::Tape& tape, const ad::Var& x, RingBank& bank);

}  // namespace lgsp::gsp
