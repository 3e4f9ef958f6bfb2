#pragma once

#include <complex>
#include <vector>

#include "lgsp/tensor.hpp"

namespace lgsp::spectral {

using Complex = std::complex<double>;

// Complex B x C x H x W array. When `centered` is set the zero frequency sits
// at (floor(H/2), floor(W/2)) of every plane.
struct SpectrumTensor {
  Shape shape;
  std::vector<Complex> data;
  bool centered = true;

  std::size_t batch() const { return shape[0]; }
  std::size_t channels() const { return shape[1]; }
  std::size_t height() const { return shape[2]; }
  std::size_t width() const { return shape[3]; }
  std::size_t plane_size() const { return shape[2] * shape[3]; }
};

enum class Method { Auto, Naive, Radix2 };

bool is_power_of_two(std::size_t n);

// Plane-level transforms on an H x W row-major complex buffer. `inverse`
// flips the exponent sign and applies the 1/(H*W) normalization.
void dft2_plane(std::vector<Complex>& plane, std::size_t h, std::size_t w, bool inverse, Method method);

// Half-period index rotation: out[(y + H/2) % H][(x + W/2) % W] = in[y][x]
// for `forward`; the exact inverse permutation otherwise. Odd sizes supported.
void center_shift(std::vector<Complex>& plane, std::size_t h, std::size_t w, bool forward);

// Unnormalized forward 2D DFT of every (batch, channel) plane followed by the
// centering rotation. Requires a rank-4 tensor with H, W >= 2.
SpectrumTensor dft2_centered(const Tensor& x, Method method = Method::Auto);

struct Reconstruction {
  Tensor image;
  double max_imag_residue = 0.0;
};

// Inverse rotation, inverse DFT with 1/(H*W) normalization, real part.
Reconstruction idft2_centered(const SpectrumTensor& s, Method method = Method::Auto);

// Multiplies every plane by the same real H x W mask.
SpectrumTensor apply_mask(const SpectrumTensor& s, const Tensor& mask);

}  // namespace lgsp::spectral
