#include "lgsp/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include "lgsp/error.hpp"

namespace lgsp::io {

namespace {

constexpr char kMagic[4] = {'L', 'G', 'S', 'P'};
constexpr std::uint8_t kVersion = 1;

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw IoError("tensor file truncated");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    v |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  pos += sizeof(U);
  return v;
}

}  // namespace

std::string encode_tensor(const Tensor& t, Dtype dtype) {
  if (t.rank() > 255) throw InvalidArgument("tensor rank exceeds 255");
  std::string out(kMagic, 4);
  out.push_back(static_cast<char>(kVersion));
  out.push_back(static_cast<char>(dtype));
  out.push_back(static_cast<char>(t.rank()));
  for (std::size_t d : t.shape()) {
    if (d > 0xFFFFFFFFu) throw InvalidArgument("tensor dimension exceeds 32 bits");
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  }
  for (double v : t.data()) {
    if (dtype == Dtype::F64) {
      put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    } else {
      put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  return out;
}

Tensor decode_tensor(const std::string& bytes, Dtype* dtype) {
  if (bytes.size() < 7 || bytes.compare(0, 4, kMagic, 4) != 0) throw IoError("not an LGSP tensor file");
  if (static_cast<std::uint8_t>(bytes[4]) != kVersion) throw IoError("unsupported tensor file version");
  auto dt = static_cast<std::uint8_t>(bytes[5]);
  if (dt > 1) throw IoError("unknown tensor dtype " + std::to_string(dt));
  std::size_t ndim = static_cast<std::uint8_t>(bytes[6]);
  std::size_t pos = 7;
  Shape shape;
  std::size_t count = 1;
  for (std::size_t i = 0; i < ndim; ++i) {
    shape.push_back(get_le<std::uint32_t>(bytes, pos));
    count *= shape.back();
  }
  std::size_t width = dt == 1 ? 8 : 4;
  if (bytes.size() - pos != count * width) {
    throw IoError("tensor payload holds " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                  std::to_string(count * width));
  }
  std::vector<double> values(count);
  for (auto& v : values) {
    v = dt == 1 ? std::bit_cast<double>(get_le<std::uint64_t>(bytes, pos))
                : static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(bytes, pos)));
  }
  if (dtype) *dtype = static_cast<Dtype>(dt);
  return Tensor(std::move(shape), std::move(values));
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_tensor(const fs::path& path, const Tensor& t, Dtype dtype) { write_text(path, encode_tensor(t, dtype)); }

Tensor read_tensor(const fs::path& path, Dtype* dtype) {
  try {
    return decode_tensor(read_text(path), dtype);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::string encode_pgm(const Tensor& image) {
  if (image.rank() != 2) throw InvalidArgument("PGM export needs a rank-2 image");
  std::size_t h = image.dim(0), w = image.dim(1);
  auto [lo, hi] = std::minmax_element(image.data().begin(), image.data().end());
  double min = *lo, range = *hi - *lo;
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (double v : image.data()) {
    double n = range > 0.0 ? (v - min) / range : 0.0;
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(n * 255.0))));
  }
  return out;
}

void write_pgm(const fs::path& path, const Tensor& image) { write_text(path, encode_pgm(image)); }

std::string matrix_csv(const Tensor& image) {
  if (image.rank() != 2) throw InvalidArgument("matrix CSV needs a rank-2 tensor");
  std::string out;
  for (std::size_t y = 0; y < image.dim(0); ++y) {
    for (std::size_t x = 0; x < image.dim(1); ++x) {
      if (x) out.push_back(',');
      out += protocol::format_double(image[y * image.dim(1) + x]);
    }
    out.push_back('\n');
  }
  return out;
}

void write_heatmap(const fs::path& stem, const Tensor& image) {
  write_pgm(fs::path(stem.string() + ".pgm"), image);
  write_text(fs::path(stem.string() + ".csv"), matrix_csv(image));
}

std::string manifest_csv(const std::vector<protocol::ManifestRow>& rows) {
  std::string out = "file,label,split\n";
  for (const auto& r : rows) out += r.file + "," + std::to_string(r.label) + "," + protocol::to_string(r.split) + "\n";
  return out;
}

std::vector<protocol::ManifestRow> parse_manifest(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "file,label,split") throw IoError("manifest: unexpected header");
  std::vector<protocol::ManifestRow> rows;
  std::size_t n = 1;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty()) continue;
    auto a = line.find(','), b = line.rfind(',');
    if (a == std::string::npos || a == b) throw IoError("manifest line " + std::to_string(n) + ": expected 3 fields");
    protocol::ManifestRow r;
    r.file = line.substr(0, a);
    try {
      r.label = std::stoi(line.substr(a + 1, b - a - 1));
      r.split = protocol::parse_split(line.substr(b + 1));
    } catch (const std::exception& e) {
      throw IoError("manifest line " + std::to_string(n) + ": " + e.what());
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace lgsp::io
