#pragma once

#include <atomic>
#include <filesystem>
#include <string>

#include "lgsp/config.hpp"
#include "lgsp/datagen.hpp"
#include "lgsp/io.hpp"
#include "lgsp/tensor.hpp"

namespace lgsp::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double stddev = 1.0) {
  Rng rng(seed);
  return randn(std::move(shape), rng, stddev);
}

// Fresh directory under the build tree, wiped on creation.
inline std::filesystem::path scratch_dir(const std::string& name) {
  static std::atomic<int> counter{0};
  auto dir = std::filesystem::path(LGSP_TEST_SCRATCH) / (name + "_" + std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::filesystem::path source_path(const std::string& rel) { return std::filesystem::path(LGSP_SOURCE_DIR) / rel; }

// configs/smoke.cfg with its dataset generated once per process.
inline config::ExperimentConfig smoke_config() {
  static const config::ExperimentConfig cfg = [] {
    auto c = config::parse(io::read_text(source_path("configs/smoke.cfg")));
    auto dir = scratch_dir("smoke_data");
    datagen::generate(c.data, c.seed, dir);
    c.data.dir = dir.string();
    return c;
  }();
  return cfg;
}

}  // namespace lgsp::testing
