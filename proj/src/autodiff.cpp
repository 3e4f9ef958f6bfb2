#include "lgsp/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "lgsp/error.hpp"
#include "lgsp/spectral.hpp"

namespace lgsp::ad {

void Param::zero_grad() {
  if (grad.shape() != value.shape()) {
    grad = Tensor(value.shape());
  } else {
    std::fill(grad.data().begin(), grad.data().end(), 0.0);
  }
}

const Tensor& Var::value() const {
  if (!tape_) throw InvalidArgument("use of an unrecorded value");
  return tape_->value(*this);
}

void Tape::check(const Var& v) const {
  if (v.tape() != this || v.id() >= nodes_.size()) {
    throw InvalidArgument("value was not recorded on this tape");
  }
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::param(Param& p) {
  Node n;
  n.value = p.value;
  n.param = &p;
  n.requires_grad = p.trainable;
  if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
  return push(std::move(n));
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward fn) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(fn));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, Backward fn) {
  Node n;
  n.value = std::move(value);
  for (const Var& v : inputs) {
    check(v);
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

const Tensor& Tape::value(const Var& v) const {
  check(v);
  return nodes_[v.id()].value;
}

bool Tape::requires_grad(const Var& v) const {
  check(v);
  return nodes_[v.id()].requires_grad;
}

Tensor* Tape::grad_buffer(const Var& v) {
  check(v);
  Node& n = nodes_[v.id()];
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return &n.grad;
}

void Tape::accumulate(const Var& v, const Tensor& g) {
  Tensor* buf = grad_buffer(v);
  if (!buf) return;
  if (buf->size() != g.size()) throw InvalidArgument("gradient shape mismatch during backward");
  auto dst = buf->data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Tape::backward(const Var& loss) {
  check(loss);
  if (nodes_[loss.id()].value.size() != 1) throw InvalidArgument("backward needs a scalar loss");
  Tensor* seed = grad_buffer(loss);
  if (!seed) return;
  (*seed)[0] += 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad) continue;
    if (n.param) {
      auto dst = n.param->grad.data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad[k];
    } else if (n.backward) {
      n.backward(*this, n.grad);
    }
  }
}

namespace {

void same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw InvalidArgument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                          shape_string(b.shape()));
  }
}

Tape& tape_of(const Var& a) {
  if (!a.tape()) throw InvalidArgument("use of an unrecorded value");
  return *a.tape();
}

void require_rank2(const Var& a, const char* op) {
  if (a.shape().size() != 2) throw InvalidArgument(std::string(op) + " expects a matrix");
}

// Raw matrix products on row-major buffers.
void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[n x m] += a[n x k] * b[m x k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * m + j] += s;
    }
  }
}

// c[k x m] += a[n x k]^T * b[n x m]
void gemm_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double av = a[i * k + p];
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) c[p * m + j] += av * b[i * m + j];
    }
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  same_shape(a, b, "add");
  Tensor out = lgsp::add(a.value(), b.value());
  return tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, scaled(g, -1.0));
  });
}

Var mul(const Var& a, const Var& b) {
  same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) {
      Tensor ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= t.value(b)[i];
      t.accumulate(a, ga);
    }
    if (t.requires_grad(b)) {
      Tensor gb = g;
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= t.value(a)[i];
      t.accumulate(b, gb);
    }
  });
}

Var scale(const Var& a, double s) {
  return tape_of(a).record(scaled(a.value(), s), {a}, [a, s](Tape& t, const Tensor& g) { t.accumulate(a, scaled(g, s)); });
}

Var mul_scalar(const Var& a, const Var& s) {
  if (s.size() != 1) throw InvalidArgument("mul_scalar: scale must have one element");
  double sv = s.value()[0];
  return tape_of(a).record(scaled(a.value(), sv), {a, s}, [a, s](Tape& t, const Tensor& g) {
    double sv = t.value(s)[0];
    if (t.requires_grad(a)) t.accumulate(a, scaled(g, sv));
    if (t.requires_grad(s)) {
      double acc = dot(g.data(), t.value(a).data());
      t.accumulate(s, Tensor(t.value(s).shape(), {acc}));
    }
  });
}

Var affine(const Var& s, double m, double c) {
  if (s.size() != 1) throw InvalidArgument("affine: input must have one element");
  Tensor out(s.shape(), {m * s.value()[0] + c});
  return tape_of(s).record(std::move(out), {s}, [s, m](Tape& t, const Tensor& g) { t.accumulate(s, scaled(g, m)); });
}

Var reciprocal(const Var& s) {
  if (s.size() != 1) throw InvalidArgument("reciprocal: input must have one element");
  double v = s.value()[0];
  if (v == 0.0) throw InvalidArgument("reciprocal of zero");
  return tape_of(s).record(Tensor(s.shape(), {1.0 / v}), {s}, [s](Tape& t, const Tensor& g) {
    double sv = t.value(s)[0];
    t.accumulate(s, Tensor(t.value(s).shape(), {-g[0] / (sv * sv)}));
  });
}

Var relu(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    Tensor ga = g;
    const Tensor& av = t.value(a);
    for (std::size_t i = 0; i < ga.size(); ++i) {
      if (!(av[i] > 0.0)) ga[i] = 0.0;
    }
    t.accumulate(a, ga);
  });
}

Var sigmoid(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = lgsp::sigmoid(v);
  Tensor y = out;
  return tape_of(a).record(std::move(out), {a}, [a, y](Tape& t, const Tensor& g) {
    Tensor ga = g;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= y[i] * (1.0 - y[i]);
    t.accumulate(a, ga);
  });
}

Var mask_multiply(const Var& a, const Tensor& mask) {
  if (mask.size() != a.size()) throw InvalidArgument("mask_multiply: size mismatch");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return tape_of(a).record(std::move(out), {a}, [a, mask](Tape& t, const Tensor& g) {
    Tensor ga = g;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= mask[i];
    t.accumulate(a, ga);
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Tensor& g) { t.accumulate(a, g); });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return tape_of(a).record(Tensor::scalar(s), {a}, [a](Tape& t, const Tensor& g) {
    t.accumulate(a, Tensor::filled(t.value(a).shape(), g[0]));
  });
}

Var matmul(const Var& a, const Var& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  if (b.shape()[0] != k) throw InvalidArgument("matmul: inner dimension mismatch");
  Tensor out({n, m});
  gemm_nn(a.value().data().data(), b.value().data().data(), out.data().data(), n, k, m);
  return tape_of(a).record(std::move(out), {a, b}, [a, b, n, k, m](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a)) gemm_nt(g.data().data(), t.value(b).data().data(), ga->data().data(), n, m, k);
    if (Tensor* gb = t.grad_buffer(b)) gemm_tn(t.value(a).data().data(), g.data().data(), gb->data().data(), n, k, m);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[0];
  if (b.shape()[1] != k) throw InvalidArgument("matmul_nt: inner dimension mismatch");
  Tensor out({n, m});
  gemm_nt(a.value().data().data(), b.value().data().data(), out.data().data(), n, k, m);
  return tape_of(a).record(std::move(out), {a, b}, [a, b, n, k, m](Tape& t, const Tensor& g) {
    // ga[n x k] += g[n x m] * b[m x k]; gb[m x k] += g^T[m x n] * a[n x k]
    if (Tensor* ga = t.grad_buffer(a)) gemm_nn(g.data().data(), t.value(b).data().data(), ga->data().data(), n, m, k);
    if (Tensor* gb = t.grad_buffer(b)) gemm_tn(g.data().data(), t.value(a).data().data(), gb->data().data(), n, m, k);
  });
}

Var add_row(const Var& a, const Var& bias) {
  require_rank2(a, "add_row");
  std::size_t n = a.shape()[0], m = a.shape()[1];
  if (bias.size() != m) throw InvalidArgument("add_row: bias length mismatch");
  Tensor out = a.value();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] += bias.value()[j];
  }
  return tape_of(a).record(std::move(out), {a, bias}, [a, bias, n, m](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    if (Tensor* gb = t.grad_buffer(bias)) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) (*gb)[j] += g[i * m + j];
      }
    }
  });
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t count) {
  require_rank2(a, "slice_rows");
  std::size_t n = a.shape()[0], m = a.shape()[1];
  if (count == 0 || begin + count > n) throw InvalidArgument("slice_rows: range out of bounds");
  const auto src = a.value().data();
  std::vector<double> out(src.begin() + static_cast<std::ptrdiff_t>(begin * m),
                          src.begin() + static_cast<std::ptrdiff_t>((begin + count) * m));
  return tape_of(a).record(Tensor({count, m}, std::move(out)), {a}, [a, begin, m](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[begin * m + i] += g[i];
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw InvalidArgument("concat_rows: nothing to concatenate");
  std::size_t m = parts[0].shape().at(1);
  std::size_t rows = 0;
  for (const Var& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.shape()[1] != m) throw InvalidArgument("concat_rows: column mismatch");
    rows += p.shape()[0];
  }
  std::vector<double> out;
  out.reserve(rows * m);
  for (const Var& p : parts) out.insert(out.end(), p.value().data().begin(), p.value().data().end());
  return tape_of(parts[0]).record(Tensor({rows, m}, std::move(out)), parts, [parts](Tape& t, const Tensor& g) {
    std::size_t off = 0;
    for (const Var& p : parts) {
      std::size_t len = t.value(p).size();
      if (Tensor* gp = t.grad_buffer(p)) {
        for (std::size_t i = 0; i < len; ++i) (*gp)[i] += g[off + i];
      }
      off += len;
    }
  });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t count) {
  require_rank2(a, "slice_cols");
  std::size_t n = a.shape()[0], m = a.shape()[1];
  if (count == 0 || begin + count > m) throw InvalidArgument("slice_cols: range out of bounds");
  Tensor out({n, count});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = a.value()[i * m + begin + j];
  }
  return tape_of(a).record(std::move(out), {a}, [a, begin, count, n, m](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a)) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < count; ++j) (*ga)[i * m + begin + j] += g[i * count + j];
      }
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw InvalidArgument("concat_cols: nothing to concatenate");
  std::size_t n = parts[0].shape().at(0);
  std::size_t cols = 0;
  for (const Var& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.shape()[0] != n) throw InvalidArgument("concat_cols: row mismatch");
    cols += p.shape()[1];
  }
  Tensor out({n, cols});
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::size_t pc = p.shape()[1];
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < pc; ++j) out[i * cols + off + j] = p.value()[i * pc + j];
    }
    off += pc;
  }
  return tape_of(parts[0]).record(std::move(out), parts, [parts, n, cols](Tape& t, const Tensor& g) {
    std::size_t off = 0;
    for (const Var& p : parts) {
      std::size_t pc = t.value(p).shape()[1];
      if (Tensor* gp = t.grad_buffer(p)) {
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < pc; ++j) (*gp)[i * pc + j] += g[i * cols + off + j];
        }
      }
      off += pc;
    }
  });
}

Var softmax_rows(const Var& a, double temperature) {
  std::size_t m = a.shape().back();
  std::size_t n = a.size() / m;
  Tensor out(a.shape());
  for (std::size_t i = 0; i < n; ++i) {
    auto row = lgsp::softmax(a.value().data().subspan(i * m, m), temperature);
    std::copy(row.begin(), row.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * m));
  }
  Tensor y = out;
  return tape_of(a).record(std::move(out), {a}, [a, y, n, m, temperature](Tape& t, const Tensor& g) {
    Tensor ga(y.shape());
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += g[i * m + j] * y[i * m + j];
      for (std::size_t j = 0; j < m; ++j) ga[i * m + j] = y[i * m + j] * (g[i * m + j] - s) / temperature;
    }
    t.accumulate(a, ga);
  });
}

Var cosine(const Var& a, const Var& b) {
  if (a.size() != b.size()) throw InvalidArgument("cosine: length mismatch");
  double c = cosine_similarity(a.value().data(), b.value().data());
  return tape_of(a).record(Tensor::scalar(c), {a, b}, [a, b](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    double na = l2_norm(av.data());
    double nb = l2_norm(bv.data());
    double c = dot(av.data(), bv.data()) / (na * nb);
    if (t.requires_grad(a)) {
      Tensor ga(av.shape());
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = g[0] * (bv[i] / (na * nb) - c * av[i] / (na * na));
      t.accumulate(a, ga);
    }
    if (t.requires_grad(b)) {
      Tensor gb(bv.shape());
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] = g[0] * (av[i] / (na * nb) - c * bv[i] / (nb * nb));
      t.accumulate(b, gb);
    }
  });
}

Var cosine_rows(const Var& a, const Var& b) {
  require_rank2(a, "cosine_rows");
  require_rank2(b, "cosine_rows");
  std::size_t n = a.shape()[0], d = a.shape()[1], m = b.shape()[0];
  if (b.shape()[1] != d) throw InvalidArgument("cosine_rows: width mismatch");
  Tensor out({n, m});
  const auto av = a.value().data();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = cosine_similarity(av.subspan(i * d, d), bv.subspan(j * d, d));
  }
  return tape_of(a).record(std::move(out), {a, b}, [a, b, n, d, m](Tape& t, const Tensor& g) {
    const auto av = t.value(a).data();
    const auto bv = t.value(b).data();
    std::vector<double> na(n), nb(m);
    for (std::size_t i = 0; i < n; ++i) na[i] = l2_norm(av.subspan(i * d, d));
    for (std::size_t j = 0; j < m; ++j) nb[j] = l2_norm(bv.subspan(j * d, d));
    Tensor* ga = t.grad_buffer(a);
    Tensor* gb = t.grad_buffer(b);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        double gij = g[i * m + j];
        if (gij == 0.0) continue;
        double c = dot(av.subspan(i * d, d), bv.subspan(j * d, d)) / (na[i] * nb[j]);
        for (std::size_t k = 0; k < d; ++k) {
          if (ga) (*ga)[i * d + k] += gij * (bv[j * d + k] / (na[i] * nb[j]) - c * av[i * d + k] / (na[i] * na[i]));
          if (gb) (*gb)[j * d + k] += gij * (av[i * d + k] / (na[i] * nb[j]) - c * bv[j * d + k] / (nb[j] * nb[j]));
        }
      }
    }
  });
}

Var stack(const std::vector<Var>& scalars) {
  if (scalars.empty()) throw InvalidArgument("stack: nothing to stack");
  std::vector<double> out;
  for (const Var& s : scalars) {
    if (s.size() != 1) throw InvalidArgument("stack: inputs must hold one element");
    out.push_back(s.value()[0]);
  }
  return tape_of(scalars[0]).record(Tensor::vector(std::move(out)), scalars, [scalars](Tape& t, const Tensor& g) {
    for (std::size_t i = 0; i < scalars.size(); ++i) {
      t.accumulate(scalars[i], Tensor(t.value(scalars[i]).shape(), {g[i]}));
    }
  });
}

Var weighted_sum(const Var& weights, const std::vector<Var>& items) {
  if (items.empty() || weights.size() != items.size()) throw InvalidArgument("weighted_sum: weight count mismatch");
  Tensor out(items[0].shape());
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].shape() != out.shape()) throw InvalidArgument("weighted_sum: item shape mismatch");
    double w = weights.value()[i];
    const auto src = items[i].value().data();
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += w * src[k];
  }
  std::vector<Var> inputs = items;
  inputs.push_back(weights);
  return tape_of(weights).record(std::move(out), inputs, [weights, items](Tape& t, const Tensor& g) {
    const Tensor& w = t.value(weights);
    Tensor* gw = t.grad_buffer(weights);
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (t.requires_grad(items[i])) t.accumulate(items[i], scaled(g, w[i]));
      if (gw) (*gw)[i] += dot(g.data(), t.value(items[i]).data());
    }
  });
}

Var cross_entropy(const Var& logits, std::size_t target) {
  std::size_t n = logits.size();
  if (target >= n) throw InvalidArgument("cross_entropy: target out of range");
  auto p = lgsp::softmax(logits.value().data(), 1.0);
  double loss = -std::log(std::max(p[target], 1e-300));
  return tape_of(logits).record(Tensor::scalar(loss), {logits}, [logits, p, target](Tape& t, const Tensor& g) {
    Tensor gl(t.value(logits).shape());
    for (std::size_t i = 0; i < p.size(); ++i) gl[i] = g[0] * (p[i] - (i == target ? 1.0 : 0.0));
    t.accumulate(logits, gl);
  });
}

Var conv2d(const Var& x, const Var& w, const Var& b) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4) throw InvalidArgument("conv2d: expected rank-4 input and kernel");
  std::size_t batch = xs[0], cin = xs[1], h = xs[2], wd = xs[3];
  std::size_t cout = ws[0], k = ws[2];
  if (ws[1] != cin) throw InvalidArgument("conv2d: channel mismatch");
  if (ws[3] != k || k % 2 == 0) throw InvalidArgument("conv2d: kernel must be square with odd size");
  if (b.size() != cout) throw InvalidArgument("conv2d: bias length mismatch");
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(k / 2);
  const auto xv = x.value().data();
  const auto wv = w.value().data();
  Tensor out({batch, cout, h, wd});
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t co = 0; co < cout; ++co) {
      double* o = out.data().data() + (n * cout + co) * h * wd;
      for (std::size_t i = 0; i < h * wd; ++i) o[i] = b.value()[co];
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double* xi = xv.data() + (n * cin + ci) * h * wd;
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            double wk = wv[((co * cin + ci) * k + ky) * k + kx];
            if (wk == 0.0) continue;
            std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - r;
            std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - r;
            for (std::size_t y = 0; y < h; ++y) {
              std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
              if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
              std::size_t x0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dx));
              std::size_t x1 = static_cast<std::size_t>(std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(wd),
                                                                                 static_cast<std::ptrdiff_t>(wd) - dx));
              const double* row = xi + static_cast<std::size_t>(sy) * wd;
              double* orow = o + y * wd;
              for (std::size_t xx = x0; xx < x1; ++xx) orow[xx] += wk * row[static_cast<std::ptrdiff_t>(xx) + dx];
            }
          }
        }
      }
    }
  }
  return tape_of(x).record(std::move(out), {x, w, b}, [x, w, b, batch, cin, cout, h, wd, k, r](Tape& t, const Tensor& g) {
    const auto xv = t.value(x).data();
    const auto wv = t.value(w).data();
    Tensor* gx = t.grad_buffer(x);
    Tensor* gw = t.grad_buffer(w);
    Tensor* gb = t.grad_buffer(b);
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t co = 0; co < cout; ++co) {
        const double* go = g.data().data() + (n * cout + co) * h * wd;
        if (gb) {
          double s = 0.0;
          for (std::size_t i = 0; i < h * wd; ++i) s += go[i];
          (*gb)[co] += s;
        }
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const double* xi = xv.data() + (n * cin + ci) * h * wd;
          double* gxi = gx ? gx->data().data() + (n * cin + ci) * h * wd : nullptr;
          for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
              std::size_t widx = ((co * cin + ci) * k + ky) * k + kx;
              double wk = wv[widx];
              std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - r;
              std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - r;
              double acc = 0.0;
              for (std::size_t y = 0; y < h; ++y) {
                std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
                if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
                std::size_t x0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dx));
                std::size_t x1 = static_cast<std::size_t>(std::min<std::ptrdiff_t>(
                    static_cast<std::ptrdiff_t>(wd), static_cast<std::ptrdiff_t>(wd) - dx));
                std::size_t src = static_cast<std::size_t>(sy) * wd;
                const double* grow = go + y * wd;
                for (std::size_t xx = x0; xx < x1; ++xx) {
                  std::size_t sidx = src + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(xx) + dx);
                  acc += grow[xx] * xi[sidx];
                  if (gxi) gxi[sidx] += grow[xx] * wk;
                }
              }
              if (gw) (*gw)[widx] += acc;
            }
          }
        }
      }
    }
  });
}

Var patchify(const Var& x, std::size_t patch) {
  const Shape& xs = x.shape();
  if (xs.size() != 4 || xs[0] != 1) throw InvalidArgument("patchify: expected a 1 x C x H x W tensor");
  std::size_t c = xs[1], h = xs[2], w = xs[3];
  if (patch == 0 || h % patch != 0 || w % patch != 0) throw InvalidArgument("patchify: image not divisible by patch size");
  std::size_t gh = h / patch, gw = w / patch;
  std::size_t cols = c * patch * patch;
  std::vector<std::size_t> index(gh * gw * cols);
  for (std::size_t py = 0; py < gh; ++py) {
    for (std::size_t px = 0; px < gw; ++px) {
      std::size_t row = py * gw + px;
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t iy = 0; iy < patch; ++iy) {
          for (std::size_t ix = 0; ix < patch; ++ix) {
            std::size_t col = (ch * patch + iy) * patch + ix;
            index[row * cols + col] = (ch * h + py * patch + iy) * w + px * patch + ix;
          }
        }
      }
    }
  }
  Tensor out({gh * gw, cols});
  for (std::size_t i = 0; i < index.size(); ++i) out[i] = x.value()[index[i]];
  return tape_of(x).record(std::move(out), {x}, [x, index](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(x)) {
      for (std::size_t i = 0; i < index.size(); ++i) (*gx)[index[i]] += g[i];
    }
  });
}

namespace {

using spectral::Complex;

// Centered spectrum of one real plane.
std::vector<Complex> centered_spectrum(const double* plane, std::size_t h, std::size_t w) {
  std::vector<Complex> buf(h * w);
  for (std::size_t i = 0; i < h * w; ++i) buf[i] = Complex(plane[i], 0.0);
  spectral::dft2_plane(buf, h, w, false, spectral::Method::Auto);
  spectral::center_shift(buf, h, w, true);
  return buf;
}

void masked_inverse(std::vector<Complex> spec, const Tensor& mask, std::size_t h, std::size_t w, double* out) {
  for (std::size_t i = 0; i < h * w; ++i) spec[i] *= mask[i];
  spectral::center_shift(spec, h, w, false);
  spectral::dft2_plane(spec, h, w, true, spectral::Method::Auto);
  for (std::size_t i = 0; i < h * w; ++i) out[i] = spec[i].real();
}

}  // namespace

Var spectral_filter(const Var& x, const Var& mask) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) throw InvalidArgument("spectral_filter: expected a B x C x H x W tensor");
  std::size_t h = xs[2], w = xs[3];
  if (mask.size() != h * w) throw InvalidArgument("spectral_filter: mask size does not match image plane");
  std::size_t planes = xs[0] * xs[1];
  const Tensor& m = mask.value();
  std::vector<std::vector<Complex>> spectra(planes);
  Tensor out(xs);
  for (std::size_t p = 0; p < planes; ++p) {
    spectra[p] = centered_spectrum(x.value().data().data() + p * h * w, h, w);
    masked_inverse(spectra[p], m, h, w, out.data().data() + p * h * w);
  }
  return tape_of(x).record(std::move(out), {x, mask}, [x, mask, spectra, planes, h, w](Tape& t, const Tensor& g) {
    const Tensor& m = t.value(mask);
    Tensor* gx = t.grad_buffer(x);
    Tensor* gm = t.grad_buffer(mask);
    const double inv_n = 1.0 / static_cast<double>(h * w);
    for (std::size_t p = 0; p < planes; ++p) {
      auto gspec = centered_spectrum(g.data().data() + p * h * w, h, w);
      if (gm) {
        for (std::size_t i = 0; i < h * w; ++i) (*gm)[i] += (spectra[p][i] * std::conj(gspec[i])).real() * inv_n;
      }
      if (gx) {
        // The masked real filter is self-adjoint for a real mask.
        std::vector<double> back(h * w);
        masked_inverse(std::move(gspec), m, h, w, back.data());
        for (std::size_t i = 0; i < h * w; ++i) (*gx)[p * h * w + i] += back[i];
      }
    }
  });
}

}  // namespace lgsp::ad
