#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "lgsp/tensor.hpp"

// Tape-based reverse-mode differentiation. A Tape lives for one training step
// (or one gradient check evaluation); evaluation paths run without one.
namespace lgsp::ad {

struct Param {
  Param() = default;
  Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  void zero_grad();
};

class Tape;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Receives the gradient flowing into the node's output.
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Leaf bound to a parameter; gradients accumulate into p.grad when the
  // parameter is trainable.
  Var param(Param& p);
  // Read-only binding: recorded as a constant, never receives gradients.
  Var param(const Param& p) { return constant(p.value); }
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward fn);
  Var record(Tensor value, const std::vector<Var>& inputs, Backward fn);

  const Tensor& value(const Var& v) const;
  bool requires_grad(const Var& v) const;
  // Accumulates `g` into v's gradient buffer; no-op when v needs no gradient.
  void accumulate(const Var& v, const Tensor& g);
  Tensor* grad_buffer(const Var& v);

  // Seeds d(loss)/d(loss) = 1 and runs every recorded backward in reverse.
  void backward(const Var& loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    Param* param = nullptr;
    Backward backward;
  };

  void check(const Var& v) const;
  Var push(Node node);

  std::deque<Node> nodes_;
};

// Elementwise
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
// a * s where s holds a single element.
Var mul_scalar(const Var& a, const Var& s);
// s * m + c for a single-element s.
Var affine(const Var& s, double m, double c);
// 1 / s for a single-element s.
Var reciprocal(const Var& s);
Var relu(const Var& a);
Var sigmoid(const Var& a);
// Multiplies by a fixed mask (dropout with the keep-scale folded in).
Var mask_multiply(const Var& a, const Tensor& mask);
Var reshape(const Var& a, Shape shape);
Var sum(const Var& a);

// Matrices (rank 2)
Var matmul(const Var& a, const Var& b);
// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var add_row(const Var& a, const Var& bias);
Var slice_rows(const Var& a, std::size_t begin, std::size_t count);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(const Var& a, std::size_t begin, std::size_t count);
Var concat_cols(const std::vector<Var>& parts);
// Row-wise softmax over the last axis with temperature.
Var softmax_rows(const Var& a, double temperature = 1.0);

// Vectors
// Cosine similarity of two equal-length arrays, result has one element.
Var cosine(const Var& a, const Var& b);
// Cosine similarity of every row of a against every row of b: [n x m].
Var cosine_rows(const Var& a, const Var& b);
Var stack(const std::vector<Var>& scalars);
// sum_i w[i] * items[i]
Var weighted_sum(const Var& weights, const std::vector<Var>& items);
// Mean cross entropy of a [n] or [1 x n] logit row against `target`.
Var cross_entropy(const Var& logits, std::size_t target);

// Images
// Same-padded 2D convolution: x [B,Cin,H,W], w [Cout,Cin,k,k], b [Cout].
Var conv2d(const Var& x, const Var& w, const Var& b);
// x [1,C,H,W] -> [(H/p)*(W/p), C*p*p], patches in row-major grid order.
Var patchify(const Var& x, std::size_t patch);
// real(idft_c(dft_c(x) * mask)) for every plane; mask is H x W (any shape
// with H*W elements).
Var spectral_filter(const Var& x, const Var& mask);

}  // namespace lgsp::ad
