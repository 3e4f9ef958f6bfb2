#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "lgsp/config.hpp"
#include "lgsp/protocol.hpp"

// Synthetic image classes: a smooth class template, a band-limited frequency
// signature with per-sample random phases, and a class motif pasted at a
// random position, plus Gaussian noise.
namespace lgsp::datagen {

struct ClassRecipe {
  classifier::ClassId id = 0;
  Tensor templ;  // [C, H, W]
  double band_radius = 0.0;
  std::vector<std::array<double, 2>> frequencies;  // (fy, fx) in cycles per image
  std::vector<double> channel_gain;
  Tensor motif;  // [C, m, m]
};

ClassRecipe recipe(const config::DataConfig& data, std::uint64_t seed, classifier::ClassId id);

// One [1, C, H, W] sample drawn from `rng`.
Tensor sample(const ClassRecipe& r, const config::DataConfig& data, Rng& rng);

// Smallest pairwise L2 distance between the templates of classes [0, count).
double min_template_distance(const config::DataConfig& data, std::uint64_t seed, std::size_t count);

// Label of the i-th pretext class; pretext ids follow the FSCIL class ids.
classifier::ClassId pretext_label(const config::DataConfig& data, std::size_t i);

// Writes <dir>/<split>/c<label>_<index>.lgsp (f32) and <dir>/manifest.csv.
std::vector<protocol::ManifestRow> generate(const config::DataConfig& data, std::uint64_t seed,
                                            const std::filesystem::path& dir);

}  // namespace lgsp::datagen
