#include "bhrnet/serial.hpp"

#include <cstring>
#include <fstream>
#include <unordered_map>
#include <vector>

namespace bhrnet {

namespace {

constexpr uint32_t kWeightsVersion = 1;
constexpr uint32_t kMaxRank = 8;
constexpr uint64_t kMaxElements = uint64_t{1} << 30;

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  put_u32(os, static_cast<uint32_t>(v));
  put_u32(os, static_cast<uint32_t>(v >> 32));
}

void put_f32_array(std::ostream& os, const float* data, size_t n) {
  std::vector<unsigned char> buf(n * 4);
  for (size_t i = 0; i < n; ++i) {
    uint32_t u;
    std::memcpy(&u, &data[i], 4);
    buf[4 * i + 0] = static_cast<unsigned char>(u);
    buf[4 * i + 1] = static_cast<unsigned char>(u >> 8);
    buf[4 * i + 2] = static_cast<unsigned char>(u >> 16);
    buf[4 * i + 3] = static_cast<unsigned char>(u >> 24);
  }
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw std::runtime_error(path + ": unexpected end of file");
  }
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint64_t get_u64(std::istream& is, const std::string& path) {
  const uint64_t lo = get_u32(is, path);
  const uint64_t hi = get_u32(is, path);
  return lo | (hi << 32);
}

void get_f32_array(std::istream& is, float* data, size_t n, const std::string& path) {
  std::vector<unsigned char> buf(n * 4);
  if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
    throw std::runtime_error(path + ": unexpected end of file");
  }
  for (size_t i = 0; i < n; ++i) {
    const uint32_t u = static_cast<uint32_t>(buf[4 * i + 0]) |
                       (static_cast<uint32_t>(buf[4 * i + 1]) << 8) |
                       (static_cast<uint32_t>(buf[4 * i + 2]) << 16) |
                       (static_cast<uint32_t>(buf[4 * i + 3]) << 24);
    std::memcpy(&data[i], &u, 4);
  }
}

void check_magic(std::istream& is, const char* magic, const std::string& path) {
  char got[4];
  if (!is.read(got, 4) || std::memcmp(got, magic, 4) != 0) {
    throw std::runtime_error(path + ": bad magic, expected " + magic);
  }
}

void check_no_trailing(std::istream& is, const std::string& path) {
  if (is.peek() != std::char_traits<char>::eof()) {
    throw std::runtime_error(path + ": trailing bytes after payload");
  }
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error(path + ": cannot open for writing");
  return os;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error(path + ": cannot open for reading");
  return is;
}

std::vector<int64_t> read_extents(std::istream& is, const std::string& path) {
  const uint32_t rank = get_u32(is, path);
  if (rank == 0 || rank > kMaxRank) {
    throw std::runtime_error(path + ": unreasonable rank " + std::to_string(rank));
  }
  std::vector<int64_t> extents(rank);
  uint64_t elements = 1;
  for (uint32_t d = 0; d < rank; ++d) {
    const uint64_t e = get_u64(is, path);
    if (e == 0 || e > kMaxElements || (elements *= e) > kMaxElements) {
      throw std::runtime_error(path + ": unreasonable extents");
    }
    extents[d] = static_cast<int64_t>(e);
  }
  return extents;
}

}  // namespace

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream os = open_out(path);
  os.write("BHRT", 4);
  put_u32(os, 4);
  for (int64_t e : t.shape) put_u64(os, static_cast<uint64_t>(e));
  put_f32_array(os, t.data.data(), t.data.size());
  if (!os) throw std::runtime_error(path + ": write failed");
}

Tensor load_tensor(const std::string& path) {
  std::ifstream is = open_in(path);
  check_magic(is, "BHRT", path);
  const std::vector<int64_t> extents = read_extents(is, path);
  if (extents.size() != 4) {
    throw std::runtime_error(path + ": expected a rank-4 tensor, got rank " +
                             std::to_string(extents.size()));
  }
  Tensor t(extents[0], extents[1], extents[2], extents[3], 0.0f);
  get_f32_array(is, t.data.data(), t.data.size(), path);
  check_no_trailing(is, path);
  return t;
}

void save_weights(const std::string& path, Network& net) {
  std::vector<ParamRef> params = parameters(net);
  std::ofstream os = open_out(path);
  os.write("BHRW", 4);
  put_u32(os, kWeightsVersion);
  put_u32(os, static_cast<uint32_t>(params.size()));
  for (const ParamRef& p : params) {
    put_u32(os, static_cast<uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put_u32(os, static_cast<uint32_t>(p.extents.size()));
    for (int64_t e : p.extents) put_u64(os, static_cast<uint64_t>(e));
    put_f32_array(os, p.data, p.count);
  }
  if (!os) throw std::runtime_error(path + ": write failed");
}

void load_weights(const std::string& path, Network& net) {
  std::vector<ParamRef> params = parameters(net);
  std::unordered_map<std::string, ParamRef*> by_name;
  for (ParamRef& p : params) by_name[p.name] = &p;

  std::ifstream is = open_in(path);
  check_magic(is, "BHRW", path);
  const uint32_t version = get_u32(is, path);
  if (version != kWeightsVersion) {
    throw std::runtime_error(path + ": unsupported format version " + std::to_string(version));
  }
  const uint32_t count = get_u32(is, path);
  std::unordered_map<std::string, bool> seen;
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = get_u32(is, path);
    if (name_len == 0 || name_len > 4096) {
      throw std::runtime_error(path + ": unreasonable name length");
    }
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) {
      throw std::runtime_error(path + ": unexpected end of file");
    }
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw std::runtime_error(path + ": unknown parameter \"" + name + "\"");
    }
    if (!seen.emplace(name, true).second) {
      throw std::runtime_error(path + ": duplicate parameter \"" + name + "\"");
    }
    const std::vector<int64_t> extents = read_extents(is, path);
    if (extents != it->second->extents) {
      throw std::runtime_error(path + ": shape mismatch for \"" + name + "\"");
    }
    get_f32_array(is, it->second->data, it->second->count, path);
  }
  check_no_trailing(is, path);
  if (seen.size() != by_name.size()) {
    for (const ParamRef& p : params) {
      if (!seen.count(p.name)) {
        throw std::runtime_error(path + ": missing parameter \"" + p.name + "\"");
      }
    }
  }
}

}  // namespace bhrnet
