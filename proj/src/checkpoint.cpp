#include "formlink/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace formlink {

namespace {

constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

bool read_u32(std::istream& in, uint32_t& v) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) return false;
  v = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
      (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  return true;
}

void write_f32(std::ostream& out, float f) {
  uint32_t v;
  std::memcpy(&v, &f, 4);
  write_u32(out, v);
}

bool read_f32(std::istream& in, float& f) {
  uint32_t v;
  if (!read_u32(in, v)) return false;
  std::memcpy(&f, &v, 4);
  return true;
}

}  // namespace

void save_checkpoint(const NamedTensors& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write("MSPW", 4);
  write_u32(out, kVersion);
  for (const auto& [name, value] : params) {
    write_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<uint32_t>(value.rank()));
    for (int d : value.shape) write_u32(out, static_cast<uint32_t>(d));
    for (float f : value.data) write_f32(out, f);
  }
  if (!out) throw std::runtime_error("write failed for " + path);
}

NamedTensors load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "MSPW", 4) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  uint32_t version;
  if (!read_u32(in, version) || version != kVersion)
    throw std::runtime_error("unsupported checkpoint version in " + path);
  NamedTensors params;
  uint32_t name_len;
  while (read_u32(in, name_len)) {
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw std::runtime_error("truncated name in " + path);
    uint32_t rank;
    if (!read_u32(in, rank)) throw std::runtime_error("truncated header in " + path);
    std::vector<int> shape(rank);
    int64_t numel = 1;
    for (auto& d : shape) {
      uint32_t e;
      if (!read_u32(in, e)) throw std::runtime_error("truncated shape in " + path);
      d = static_cast<int>(e);
      numel *= d;
    }
    Tensor<float> t(shape);
    for (int64_t i = 0; i < numel; ++i)
      if (!read_f32(in, t.data[static_cast<size_t>(i)]))
        throw std::runtime_error("truncated values in " + path);
    params.emplace_back(std::move(name), std::move(t));
  }
  return params;
}

}  // namespace formlink
