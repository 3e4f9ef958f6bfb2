#include <cmath>
#include <numbers>

#include "doctest.h"
#include "lgsp/error.hpp"
#include "lgsp/spectral.hpp"
#include "test_util.hpp"

using namespace lgsp;
using spectral::Complex;

namespace {

// Direct double sum, zero frequency placed at (floor(H/2), floor(W/2)).
std::vector<Complex> oracle_centered(const Tensor& plane, std::size_t h, std::size_t w) {
  std::vector<Complex> out(h * w);
  const long ch = static_cast<long>(h / 2), cw = static_cast<long>(w / 2);
  for (std::size_t u = 0; u < h; ++u) {
    for (std::size_t v = 0; v < w; ++v) {
      double ky = static_cast<double>(static_cast<long>(u) - ch), kx = static_cast<double>(static_cast<long>(v) - cw);
      Complex acc = 0.0;
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          double ang = -2.0 * std::numbers::pi * (ky * y / h + kx * x / w);
          acc += plane[y * w + x] * Complex(std::cos(ang), std::sin(ang));
        }
      }
      out[u * w + v] = acc;
    }
  }
  return out;
}

double max_diff(const std::vector<Complex>& a, const std::vector<Complex>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("dft of a constant image is a single centered bin") {
  Tensor x = Tensor::filled({1, 1, 4, 4}, 2.5);
  auto s = spectral::dft2_centered(x);
  for (std::size_t y = 0; y < 4; ++y) {
    for (std::size_t v = 0; v < 4; ++v) {
      Complex expect = (y == 2 && v == 2) ? Complex(2.5 * 16.0) : Complex(0.0);
      CHECK(std::abs(s.data[y * 4 + v] - expect) <= 1e-10);
    }
  }
}

TEST_CASE("dft of a unit impulse is flat") {
  Tensor x({1, 1, 4, 4});
  x[0] = 1.0;
  auto s = spectral::dft2_centered(x);
  for (const auto& c : s.data) CHECK(std::abs(std::abs(c) - 1.0) <= 1e-10);
}

TEST_CASE("dft matches the direct-sum oracle") {
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{8, 8}, {5, 7}, {6, 4}, {2, 3}, {16, 8}}) {
    Tensor x = testing::random_tensor({1, 1, h, w}, 100 + h * 10 + w);
    auto s = spectral::dft2_centered(x);
    CHECK(max_diff(s.data, oracle_centered(x, h, w)) <= 1e-9);
  }
}

TEST_CASE("parseval on a random 8x8 image") {
  Tensor x = testing::random_tensor({1, 1, 8, 8}, 77);
  auto s = spectral::dft2_centered(x);
  double ex = 0.0, es = 0.0;
  for (double v : x.data()) ex += v * v;
  for (const auto& c : s.data) es += std::norm(c);
  CHECK(std::abs(ex - es / 64.0) <= 1e-9 * ex);
}

TEST_CASE("round trip, zero spectrum and linearity") {
  Tensor x = testing::random_tensor({2, 3, 8, 8}, 1);
  Tensor y = testing::random_tensor({2, 3, 8, 8}, 2);
  auto back = spectral::idft2_centered(spectral::dft2_centered(x));
  CHECK(max_abs_diff(back.image, x) <= 1e-9);

  spectral::SpectrumTensor zero{{1, 1, 6, 6}, std::vector<Complex>(36), true};
  auto z = spectral::idft2_centered(zero);
  for (double v : z.image.data()) CHECK(v == 0.0);

  const double a = 1.7, b = -0.3;
  Tensor comb = add(scaled(x, a), scaled(y, b));
  auto sc = spectral::dft2_centered(comb), sx = spectral::dft2_centered(x), sy = spectral::dft2_centered(y);
  double m = 0.0;
  for (std::size_t i = 0; i < sc.data.size(); ++i) m = std::max(m, std::abs(sc.data[i] - (a * sx.data[i] + b * sy.data[i])));
  CHECK(m <= 1e-9);
}

TEST_CASE("conjugate symmetry of a real image spectrum") {
  for (std::size_t n : {6u, 7u, 8u}) {
    Tensor x = testing::random_tensor({1, 1, n, n + 1}, n);
    auto s = spectral::dft2_centered(x);
    const std::size_t h = n, w = n + 1, ch = h / 2, cw = w / 2;
    for (std::size_t u = 0; u < h; ++u) {
      for (std::size_t v = 0; v < w; ++v) {
        std::size_t pu = (2 * ch + h - u) % h, pv = (2 * cw + w - v) % w;
        CHECK(std::abs(s.data[u * w + v] - std::conj(s.data[pu * w + pv])) <= 1e-9);
      }
    }
  }
}

TEST_CASE("radially symmetric masks leave a real reconstruction") {
  for (std::size_t n : {8u, 9u, 16u}) {
    Tensor x = testing::random_tensor({1, 2, n, n}, 40 + n);
    // Radius measured from the spectrum's zero-frequency bin.
    const double c = static_cast<double>(n / 2);
    Tensor mask({n, n});
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        double d = std::hypot(static_cast<double>(y) - c, static_cast<double>(x) - c);
        mask[y * n + x] = std::exp(-0.3 * d) + 0.1 * std::cos(d);
      }
    }
    auto rec = spectral::idft2_centered(spectral::apply_mask(spectral::dft2_centered(x), mask));
    CHECK(rec.max_imag_residue <= 1e-9);
  }
}

TEST_CASE("naive and radix-2 agree") {
  for (std::size_t n : {2u, 4u, 8u, 16u, 32u}) {
    Tensor x = testing::random_tensor({1, 1, n, n * 2}, n);
    auto a = spectral::dft2_centered(x, spectral::Method::Naive);
    auto b = spectral::dft2_centered(x, spectral::Method::Radix2);
    CHECK(max_diff(a.data, b.data) <= 1e-9);
  }
  Tensor odd = testing::random_tensor({1, 1, 6, 6}, 3);
  CHECK_THROWS_AS(spectral::dft2_centered(odd, spectral::Method::Radix2), InvalidArgument);
}

TEST_CASE("center shift is a permutation with an exact inverse") {
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{4, 4}, {5, 3}, {7, 8}}) {
    std::vector<Complex> p(h * w);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = Complex(static_cast<double>(i), 0.0);
    auto q = p;
    spectral::center_shift(q, h, w, true);
    CHECK(q[(h / 2) * w + w / 2] == p[0]);
    spectral::center_shift(q, h, w, false);
    CHECK(q == p);
  }
}

TEST_CASE("degenerate dims are rejected") {
  CHECK_THROWS_AS(spectral::dft2_centered(Tensor({1, 1, 1, 4})), InvalidArgument);
  CHECK_THROWS_AS(spectral::dft2_centered(Tensor({4, 4})), InvalidArgument);
  CHECK(spectral::is_power_of_two(8));
  CHECK_FALSE(spectral::is_power_of_two(6));
  CHECK_FALSE(spectral::is_power_of_two(0));
}
