#include "closenas/compute/checkpoint.hpp"

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace closenas::compute {

namespace {

constexpr std::array<char, 8> kMagic{'C', 'L', 'N', 'S', 'C', 'K', 'P', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
  std::array<unsigned char, 8> b{};
  for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b.data()), 8);
}

std::uint64_t read_u64(std::istream& is) {
  std::array<unsigned char, 8> b{};
  is.read(reinterpret_cast<char*>(b.data()), 8);
  if (!is) throw std::runtime_error("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
  return v;
}

void write_string(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  const auto n = read_u64(is);
  if (n > (1ULL << 32)) throw std::runtime_error("checkpoint string length is implausible");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error("checkpoint truncated");
  return s;
}

}  // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic.data(), kMagic.size());
  write_u64(os, meta.size());
  for (const auto& [k, v] : meta) {
    write_string(os, k);
    write_string(os, v);
  }
  write_u64(os, arrays.size());
  for (const auto& [name, t] : arrays) {
    write_string(os, name);
    write_u64(os, t.shape().size());
    for (int d : t.shape()) write_u64(os, static_cast<std::uint64_t>(d));
    for (float f : t.values()) {
      std::uint32_t bits = 0;
      std::memcpy(&bits, &f, sizeof bits);
      for (int i = 0; i < 4; ++i) os.put(static_cast<char>((bits >> (8 * i)) & 0xFF));
    }
  }
  if (!os) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw std::runtime_error("not a checkpoint file: " + path.string());
  Checkpoint ck;
  const auto n_meta = read_u64(is);
  for (std::uint64_t i = 0; i < n_meta; ++i) {
    auto k = read_string(is);
    ck.meta[k] = read_string(is);
  }
  const auto n_arrays = read_u64(is);
  for (std::uint64_t i = 0; i < n_arrays; ++i) {
    auto name = read_string(is);
    const auto rank = read_u64(is);
    if (rank > 8) throw std::runtime_error("checkpoint array rank is implausible");
    Shape shape;
    for (std::uint64_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(read_u64(is)));
    Tensor<float> t(shape);
    for (float& f : t.storage()) {
      std::array<unsigned char, 4> b{};
      is.read(reinterpret_cast<char*>(b.data()), 4);
      if (!is) throw std::runtime_error("checkpoint truncated");
      const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                                 (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
      std::memcpy(&f, &bits, sizeof f);
    }
    ck.arrays.emplace(std::move(name), std::move(t));
  }
  return ck;
}

}  // namespace closenas::compute
