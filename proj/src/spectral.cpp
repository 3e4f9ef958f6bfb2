#include "lgsp/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lgsp/error.hpp"

namespace lgsp::spectral {

namespace {

std::vector<Complex> twiddles(std::size_t n, bool inverse) {
  std::vector<Complex> tw(n);
  double sign = inverse ? 1.0 : -1.0;
  for (std::size_t k = 0; k < n; ++k) {
    double angle = sign * 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    tw[k] = Complex(std::cos(angle), std::sin(angle));
  }
  return tw;
}

// Direct double sum over the whole plane: O((HW)^2).
void naive_plane(std::vector<Complex>& plane, std::size_t h, std::size_t w, bool inverse) {
  auto row_tw = twiddles(h, inverse);
  auto col_tw = twiddles(w, inverse);
  std::vector<Complex> out(h * w);
  for (std::size_t u = 0; u < h; ++u) {
    for (std::size_t v = 0; v < w; ++v) {
      Complex acc(0.0, 0.0);
      for (std::size_t y = 0; y < h; ++y) {
        Complex ry = row_tw[(u * y) % h];
        for (std::size_t x = 0; x < w; ++x) {
          acc += plane[y * w + x] * ry * col_tw[(v * x) % w];
        }
      }
      out[u * w + v] = acc;
    }
  }
  plane.swap(out);
}

// In-place iterative radix-2 transform of a strided 1D sequence.
void fft1d(Complex* data, std::size_t n, std::size_t stride, const std::vector<Complex>& tw) {
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i * stride], data[j * stride]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    std::size_t step = n / len;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        Complex a = data[(i + k) * stride];
        Complex b = data[(i + k + len / 2) * stride] * tw[k * step];
        data[(i + k) * stride] = a + b;
        data[(i + k + len / 2) * stride] = a - b;
      }
    }
  }
}

void radix2_plane(std::vector<Complex>& plane, std::size_t h, std::size_t w, bool inverse) {
  auto row_tw = twiddles(w, inverse);
  for (std::size_t y = 0; y < h; ++y) fft1d(plane.data() + y * w, w, 1, row_tw);
  auto col_tw = twiddles(h, inverse);
  for (std::size_t x = 0; x < w; ++x) fft1d(plane.data() + x, h, w, col_tw);
}

void check_image(const Tensor& x) {
  if (x.rank() != 4) throw InvalidArgument("expected a B x C x H x W tensor, got " + shape_string(x.shape()));
  if (x.dim(2) < 2 || x.dim(3) < 2) throw InvalidArgument("spectral transforms need H >= 2 and W >= 2");
}

}  // namespace

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

void dft2_plane(std::vector<Complex>& plane, std::size_t h, std::size_t w, bool inverse, Method method) {
  if (plane.size() != h * w) throw InvalidArgument("dft2_plane: buffer size mismatch");
  bool fast = is_power_of_two(h) && is_power_of_two(w);
  if (method == Method::Radix2 && !fast) throw InvalidArgument("radix-2 transform needs power-of-two dimensions");
  if (method == Method::Radix2 || (method == Method::Auto && fast)) {
    radix2_plane(plane, h, w, inverse);
  } else {
    naive_plane(plane, h, w, inverse);
  }
  if (inverse) {
    double norm = 1.0 / static_cast<double>(h * w);
    for (Complex& c : plane) c *= norm;
  }
}

void center_shift(std::vector<Complex>& plane, std::size_t h, std::size_t w, bool forward) {
  std::vector<Complex> out(plane.size());
  std::size_t sy = h / 2;
  std::size_t sx = w / 2;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (forward) {
        out[((y + sy) % h) * w + (x + sx) % w] = plane[y * w + x];
      } else {
        out[y * w + x] = plane[((y + sy) % h) * w + (x + sx) % w];
      }
    }
  }
  plane.swap(out);
}

SpectrumTensor dft2_centered(const Tensor& x, Method method) {
  check_image(x);
  SpectrumTensor s;
  s.shape = x.shape();
  s.centered = true;
  std::size_t h = x.dim(2);
  std::size_t w = x.dim(3);
  std::size_t planes = x.dim(0) * x.dim(1);
  s.data.resize(x.size());
  std::vector<Complex> plane(h * w);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < h * w; ++i) plane[i] = Complex(x[p * h * w + i], 0.0);
    dft2_plane(plane, h, w, false, method);
    center_shift(plane, h, w, true);
    std::copy(plane.begin(), plane.end(), s.data.begin() + static_cast<std::ptrdiff_t>(p * h * w));
  }
  return s;
}

Reconstruction idft2_centered(const SpectrumTensor& s, Method method) {
  if (!s.centered) throw InvalidArgument("idft2_centered expects a centered spectrum");
  if (s.shape.size() != 4) throw InvalidArgument("spectrum must be rank 4");
  std::size_t h = s.height();
  std::size_t w = s.width();
  std::size_t planes = s.batch() * s.channels();
  std::vector<double> out(s.data.size());
  double residue = 0.0;
  std::vector<Complex> plane(h * w);
  for (std::size_t p = 0; p < planes; ++p) {
    std::copy_n(s.data.begin() + static_cast<std::ptrdiff_t>(p * h * w), h * w, plane.begin());
    center_shift(plane, h, w, false);
    dft2_plane(plane, h, w, true, method);
    for (std::size_t i = 0; i < h * w; ++i) {
      out[p * h * w + i] = plane[i].real();
      residue = std::max(residue, std::abs(plane[i].imag()));
    }
  }
  return {Tensor(s.shape, std::move(out)), residue};
}

SpectrumTensor apply_mask(const SpectrumTensor& s, const Tensor& mask) {
  std::size_t hw = s.plane_size();
  if (mask.size() != hw) throw InvalidArgument("mask size does not match spectrum plane");
  SpectrumTensor out = s;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask[i % hw];
  return out;
}

}  // namespace lgsp::spectral
