#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace lgsp {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array of doubles. Construction rejects NaN/Inf and shapes
// whose product disagrees with the payload length.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor filled(Shape shape, double value);
  static Tensor vector(std::vector<double> values);
  static Tensor scalar(double value) { return vector({value}); }

  const Shape& shape() const { return shape_; }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  double at(std::initializer_list<std::size_t> index) const;
  double& at(std::initializer_list<std::size_t> index);

  // Same payload, new shape with identical element count.
  Tensor reshaped(Shape shape) const;

  // Throws InvalidArgument when any entry is NaN or infinite.
  void check_finite(const char* what = "tensor") const;

  bool operator==(const Tensor& other) const = default;

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<double> data_;
};

// SplitMix64 (Steele, Lea & Flood 2014): state += 0x9E3779B97F4A7C15, then
// z = (z ^ z>>30) * 0xBF58476D1CE4E5B9, z = (z ^ z>>27) * 0x94D049BB133111EB,
// z ^= z>>31. Identical streams on every platform for a given seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  // Standard normal via Box-Muller; the second variate of each pair is kept.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  // Independent stream keyed by (this stream's seed material, tag).
  Rng fork(std::uint64_t tag) const;

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Deterministic seed derivation used for per-item streams.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag);

Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);

constexpr double kNormEpsilon = 1e-12;

double sigmoid(double x);

// Temperature softmax with max subtraction. Throws on empty input, non-finite
// entries, or temperature <= 0.
std::vector<double> softmax(std::span<const double> v, double temperature = 1.0);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);

// <a,b>/(|a||b|) clamped to [-1,1]. Throws when either norm is <= 1e-12.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Elementwise helpers used by the non-differentiable paths.
Tensor add(const Tensor& a, const Tensor& b);
Tensor scaled(const Tensor& a, double s);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace lgsp
