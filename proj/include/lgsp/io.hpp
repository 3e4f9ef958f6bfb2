#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lgsp/protocol.hpp"
#include "lgsp/tensor.hpp"

namespace lgsp::io {

namespace fs = std::filesystem;

enum class Dtype : std::uint8_t { F32 = 0, F64 = 1 };

// "LGSP", version 1, dtype, ndim, u32 LE dims, LE row-major payload.
std::string encode_tensor(const Tensor& t, Dtype dtype = Dtype::F64);
Tensor decode_tensor(const std::string& bytes, Dtype* dtype = nullptr);

void write_tensor(const fs::path& path, const Tensor& t, Dtype dtype = Dtype::F64);
Tensor read_tensor(const fs::path& path, Dtype* dtype = nullptr);

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

// Binary P5 image of a rank-2 tensor, min-max scaled to 0..255. A constant
// image maps to all zeros.
std::string encode_pgm(const Tensor& image);
void write_pgm(const fs::path& path, const Tensor& image);
// Raw values, one image row per line.
std::string matrix_csv(const Tensor& image);
// Writes <stem>.pgm and <stem>.csv.
void write_heatmap(const fs::path& stem, const Tensor& image);

std::string manifest_csv(const std::vector<protocol::ManifestRow>& rows);
std::vector<protocol::ManifestRow> parse_manifest(const std::string& text);

}  // namespace lgsp::io
