#include "lgsp/datagen.hpp"

#include <cmath>
#include <numbers>

#include "lgsp/error.hpp"
#include "lgsp/io.hpp"

namespace lgsp::datagen {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

void normalize_rms(Tensor& t, double scale) {
  double ss = 0.0;
  for (double v : t.data()) ss += v * v;
  double rms = std::sqrt(ss / static_cast<double>(t.size()));
  if (rms <= kNormEpsilon) return;
  for (double& v : t.data()) v *= scale / rms;
}

}  // namespace

ClassRecipe recipe(const config::DataConfig& d, std::uint64_t seed, classifier::ClassId id) {
  Rng rng(mix_seed(mix_seed(seed, 0xDA7A), static_cast<std::uint64_t>(id)));
  ClassRecipe r;
  r.id = id;
  const std::size_t C = d.channels, H = d.height, W = d.width;

  r.templ = Tensor({C, H, W});
  for (std::size_t c = 0; c < C; ++c) {
    for (int wave = 0; wave < 4; ++wave) {
      double fy = static_cast<double>(rng.below(4)), fx = static_cast<double>(rng.below(4));
      double phase = rng.uniform() * kTwoPi, amp = rng.normal();
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
          r.templ[(c * H + y) * W + x] +=
              amp * std::cos(kTwoPi * (fy * static_cast<double>(y) / H + fx * static_cast<double>(x) / W) + phase);
        }
      }
    }
  }
  normalize_rms(r.templ, d.template_scale);

  double nyquist = static_cast<double>(std::min(H, W)) / 2.0;
  double lo = std::min(2.0, nyquist / 2.0), hi = std::max(lo, nyquist - 1.0);
  r.band_radius = lo + rng.uniform() * (hi - lo);
  for (int i = 0; i < 6; ++i) {
    double angle = rng.uniform() * std::numbers::pi;
    r.frequencies.push_back({r.band_radius * std::sin(angle), r.band_radius * std::cos(angle)});
  }
  for (std::size_t c = 0; c < C; ++c) r.channel_gain.push_back(0.5 + rng.uniform());

  std::size_t m = d.motif_size;
  if (d.motif_atoms == 0) {
    r.motif = randn({C, m, m}, rng);
  } else {
    // Class motifs mix a dataset-wide dictionary of local patterns.
    Rng atoms(mix_seed(seed, 0xA70B5));
    r.motif = Tensor({C, m, m});
    for (std::size_t a = 0; a < d.motif_atoms; ++a) {
      Tensor atom = randn({C, m, m}, atoms);
      double w = rng.normal();
      for (std::size_t i = 0; i < atom.size(); ++i) r.motif[i] += w * atom[i];
    }
  }
  normalize_rms(r.motif, d.motif_scale);
  return r;
}

Tensor sample(const ClassRecipe& r, const config::DataConfig& d, Rng& rng) {
  const std::size_t C = d.channels, H = d.height, W = d.width, m = d.motif_size;
  Tensor out({1, C, H, W});
  auto v = out.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = r.templ[i];

  Tensor sig({C, H, W});
  for (const auto& f : r.frequencies) {
    double phase = rng.uniform() * kTwoPi;
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        double s = std::cos(kTwoPi * (f[0] * static_cast<double>(y) / H + f[1] * static_cast<double>(x) / W) + phase);
        for (std::size_t c = 0; c < C; ++c) sig[(c * H + y) * W + x] += r.channel_gain[c] * s;
      }
    }
  }
  normalize_rms(sig, d.signature_scale);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += sig[i];

  std::size_t oy = rng.below(H - m + 1), ox = rng.below(W - m + 1);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < m; ++y) {
      for (std::size_t x = 0; x < m; ++x) v[(c * H + oy + y) * W + ox + x] += r.motif[(c * m + y) * m + x];
    }
  }
  for (double& x : v) x += d.noise * rng.normal();
  return out;
}

double min_template_distance(const config::DataConfig& d, std::uint64_t seed, std::size_t count) {
  if (count < 2) throw InvalidArgument("need at least two classes");
  std::vector<Tensor> t;
  for (std::size_t i = 0; i < count; ++i) t.push_back(recipe(d, seed, static_cast<int>(i)).templ);
  double best = INFINITY;
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t j = i + 1; j < count; ++j) {
      double ss = 0.0;
      for (std::size_t k = 0; k < t[i].size(); ++k) ss += (t[i][k] - t[j][k]) * (t[i][k] - t[j][k]);
      best = std::min(best, std::sqrt(ss));
    }
  }
  return best;
}

classifier::ClassId pretext_label(const config::DataConfig& d, std::size_t i) {
  return static_cast<classifier::ClassId>(d.classes + i);
}

std::vector<protocol::ManifestRow> generate(const config::DataConfig& d, std::uint64_t seed,
                                            const std::filesystem::path& dir) {
  config::validate_data(d);
  std::vector<protocol::ManifestRow> rows;
  auto emit = [&](classifier::ClassId label, protocol::Split split, std::size_t count) {
    ClassRecipe r = recipe(d, seed, label);
    for (std::size_t i = 0; i < count; ++i) {
      Rng rng(mix_seed(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(label)), static_cast<std::uint64_t>(split)), i));
      std::string rel = protocol::to_string(split) + "/c" + std::to_string(label) + "_" + std::to_string(i) + ".lgsp";
      io::write_tensor(dir / rel, sample(r, d, rng), io::Dtype::F32);
      rows.push_back({rel, label, split});
    }
  };
  for (std::size_t c = 0; c < d.classes; ++c) {
    emit(static_cast<int>(c), protocol::Split::Train, d.train_per_class);
    emit(static_cast<int>(c), protocol::Split::Test, d.test_per_class);
  }
  for (std::size_t p = 0; p < d.pretext_classes; ++p) emit(pretext_label(d, p), protocol::Split::Pretext, d.pretext_per_class);
  io::write_text(dir / "manifest.csv", io::manifest_csv(rows));
  return rows;
}

}  // namespace lgsp::datagen
