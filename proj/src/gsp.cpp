#include "lgsp/gsp.hpp"

#include <cmath>

#include "lgsp/error.hpp"

namespace lgsp::gsp {

Tensor distance_matrix(std::size_t h, std::size_t w) {
  if (h < 2 || w < 2) throw InvalidArgument("distance_matrix needs H >= 2 and W >= 2");
  Tensor d({h, w});
  double cy = static_cast<double>(h) / 2.0;
  double cx = static_cast<double>(w) / 2.0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double dy = static_cast<double>(y) - cy;
      double dx = static_cast<double>(x) - cx;
      d[y * w + x] = std::sqrt(dy * dy + dx * dx);
    }
  }
  return d;
}

double max_radius(std::size_t h, std::size_t w) {
  double hh = static_cast<double>(h) / 2.0;
  double hw = static_cast<double>(w) / 2.0;
  return std::sqrt(hh * hh + hw * hw);
}

std::vector<double> ring_radii(std::size_t rings, std::size_t h, std::size_t w) {
  if (rings == 0) throw InvalidArgument("ring count must be at least 1");
  double rmax = max_radius(h, w);
  std::vector<double> r(rings);
  for (std::size_t k = 1; k <= rings; ++k) {
    r[k - 1] = k == rings ? rmax : static_cast<double>(k) / static_cast<double>(rings) * rmax;
  }
  return r;
}

RingBank::RingBank(std::size_t h, std::size_t w, const RingBankOptions& options, Rng& rng)
    : RingBank(h, w, options, [&] {
        std::vector<double> wk(options.rings);
        for (double& v : wk) v = rng.normal();
        return wk;
      }()) {}

RingBank::RingBank(std::size_t h, std::size_t w, const RingBankOptions& options, std::vector<double> weights)
    : h_(h), w_(w), options_(options) {
  if (!(options.beta > 0.0)) throw InvalidArgument("ring sharpness beta must be > 0");
  if (!(options.temperature > 0.0)) throw InvalidArgument("ring temperature must be > 0");
  if (weights.size() != options.rings) throw InvalidArgument("band weight count must equal the ring count");
  distance_ = distance_matrix(h, w);
  auto r = ring_radii(options.rings, h, w);
  radii_.reserve(r.size() + 1);
  radii_.push_back(0.0);
  radii_.insert(radii_.end(), r.begin(), r.end());
  masks_ = Tensor({options.rings, h * w});
  for (std::size_t k = 1; k <= options.rings; ++k) {
    for (std::size_t i = 0; i < h * w; ++i) {
      masks_[(k - 1) * h * w + i] = edge(distance_[i], radii_[k]) - edge(distance_[i], radii_[k - 1]);
    }
  }
  weights_ = ad::Param("gsp.weights", Tensor::vector(std::move(weights)));
  temperature_ = ad::Param("gsp.temperature", Tensor::scalar(options.temperature));
  temperature_.trainable = options.learnable_temperature;
}

namespace {
double edge_value(double d, double r, double beta, FormulaMode mode) {
  if (mode == FormulaMode::Verbatim) return sigmoid(-beta * (d - r));
  return sigmoid(beta * (r - d));
}
}  // namespace

double ring_value(double d, double r_inner, double r_outer, double beta, FormulaMode mode) {
  return edge_value(d, r_outer, beta, mode) - edge_value(d, r_inner, beta, mode);
}

double RingBank::edge(double d, double r) const { return edge_value(d, r, options_.beta, options_.mode); }

Tensor RingBank::ring_mask(std::size_t k) const {
  if (k < 1 || k > options_.rings) throw InvalidArgument("ring index out of range");
  const auto row = masks_.data().subspan((k - 1) * h_ * w_, h_ * w_);
  return Tensor({h_, w_}, std::vector<double>(row.begin(), row.end()));
}

std::vector<double> RingBank::band_weights() const {
  std::vector<double> scaled_w(weights_.value.size());
  double tau = temperature();
  for (std::size_t k = 0; k < scaled_w.size(); ++k) scaled_w[k] = weights_.value[k] * tau;
  return softmax(scaled_w, 1.0);
}

Tensor RingBank::combined_mask() const {
  auto bw = band_weights();
  Tensor out({h_, w_});
  for (std::size_t k = 0; k < bw.size(); ++k) {
    for (std::size_t i = 0; i < h_ * w_; ++i) out[i] += bw[k] * masks_[k * h_ * w_ + i];
  }
  return out;
}

Tensor RingBank::telescoped_mask() const {
  Tensor out({h_, w_});
  for (std::size_t i = 0; i < h_ * w_; ++i) out[i] = edge(distance_[i], radii_.back()) - edge(distance_[i], 0.0);
  return out;
}

ad::Var RingBank::combined_mask(ad::Tape& tape) {
  ad::Var w = tape.param(weights_);
  ad::Var tau = tape.param(temperature_);
  ad::Var logits = ad::reshape(ad::mul_scalar(w, tau), {1, options_.rings});
  ad::Var bw = ad::softmax_rows(logits, 1.0);
  return ad::matmul(bw, tape.constant(masks_));
}

Enhanced enhance(const Tensor& x, const RingBank& bank, const std::optional<Tensor>& mask_override) {
  if (x.rank() != 4 || x.dim(2) != bank.height() || x.dim(3) != bank.width()) {
    throw InvalidArgument("enhance: image " + shape_string(x.shape()) + " does not match ring bank " +
                          std::to_string(bank.height()) + "x" + std::to_string(bank.width()));
  }
  Tensor mask = mask_override ? *mask_override : bank.combined_mask();
  if (mask.size() != bank.height() * bank.width()) throw InvalidArgument("enhance: mask override has the wrong size");
  Enhanced out;
  out.f_enhanced = spectral::apply_mask(spectral::dft2_centered(x), mask);
  auto rec = spectral::idft2_centered(out.f_enhanced);
  out.x_global = std::move(rec.image);
  out.max_imag_residue = rec.max_imag_residue;
  return out;
}

ad::Var enhance(ad::Tape& tape, const ad::Var& x, RingBank& bank) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[2] != bank.height() || s[3] != bank.width()) {
    throw InvalidArgument("enhance: image does not match ring bank");
  }
  return ad::spectral_filter(x, bank.combined_mask(tape));
}

}  // namespace lgsp::gsp
