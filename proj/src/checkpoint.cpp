#include <cstdio>
#include <cstring>
#include <fstream>

#include "mtl/checkpoint.hpp"
#include "mtl/errors.hpp"
#include "mtl/sha256.hpp"

namespace mtl {

namespace {

constexpr char kMagic[4] = {'M', 'T', 'L', 'C'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u16(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

void write_f64(std::ostream& os, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t read_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw FormatError(std::string("checkpoint truncated while reading ") + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint16_t read_u16(std::istream& is, const char* what) {
  unsigned char b[2];
  if (!is.read(reinterpret_cast<char*>(b), 2))
    throw FormatError(std::string("checkpoint truncated while reading ") + what);
  return static_cast<std::uint16_t>(static_cast<std::uint16_t>(b[0]) |
                                    (static_cast<std::uint16_t>(b[1]) << 8));
}

double read_f64(std::istream& is, const char* what) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw FormatError(std::string("checkpoint truncated while reading ") + what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

}  // namespace

void Checkpoint::add(const std::string& name, const Tensor& t) {
  if (name.empty() || name.size() > 0xffff)
    throw ContractError("checkpoint tensor name must be 1..65535 bytes");
  if (!t.defined()) throw ContractError("checkpoint tensor '" + name + "' is undefined");
  if (has(name)) throw ContractError("checkpoint already contains tensor '" + name + "'");
  entries_.emplace_back(name, t);
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, _] : entries_)
    if (n == name) return true;
  return false;
}

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw FormatError("checkpoint has no tensor named '" + name + "'");
}

void Checkpoint::save(const std::string& path) const {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot open '" + tmp + "' for writing");
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    write_u32(os, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& [name, t] : entries_) {
      write_u16(os, static_cast<std::uint16_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      if (t.rank() > 0xff) throw ContractError("checkpoint tensor rank exceeds 255");
      const unsigned char rank = static_cast<unsigned char>(t.rank());
      os.write(reinterpret_cast<const char*>(&rank), 1);
      for (std::int64_t d = 0; d < t.rank(); ++d)
        write_u32(os, static_cast<std::uint32_t>(t.dim(d)));
      for (std::int64_t i = 0; i < t.size(); ++i) write_f64(os, t.data()[i]);
    }
    if (!os) throw IoError("write to '" + tmp + "' failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("cannot move '" + tmp + "' into place at '" + path + "'");
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  char magic[4];
  if (!is.read(magic, 4)) throw FormatError("checkpoint truncated while reading magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("'" + path + "' is not a checkpoint file (bad magic)");
  const std::uint32_t version = read_u32(is, "version");
  if (version != kVersion)
    throw FormatError("checkpoint version " + std::to_string(version) + " unsupported (want " +
                      std::to_string(kVersion) + ")");
  const std::uint32_t count = read_u32(is, "tensor count");
  Checkpoint ck;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = read_u16(is, "name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len))
      throw FormatError("checkpoint truncated while reading tensor name");
    unsigned char rank;
    if (!is.read(reinterpret_cast<char*>(&rank), 1))
      throw FormatError("checkpoint truncated while reading rank");
    if (rank == 0) throw FormatError("checkpoint tensor '" + name + "' has rank 0");
    Shape shape;
    for (int d = 0; d < rank; ++d)
      shape.push_back(static_cast<std::int64_t>(read_u32(is, "dimension")));
    Tensor t = Tensor::zeros(shape);
    for (std::int64_t j = 0; j < t.size(); ++j) t.data()[j] = read_f64(is, "tensor data");
    ck.add(name, t);
  }
  return ck;
}

std::string checksum_tensors(const std::vector<Tensor>& tensors) {
  Sha256 h;
  for (const Tensor& t : tensors) {
    for (std::int64_t d = 0; d < t.rank(); ++d) {
      const std::int64_t dim = t.dim(d);
      h.update(&dim, sizeof(dim));
    }
    h.update(t.data(), static_cast<std::size_t>(t.size()) * sizeof(double));
  }
  return h.hex_digest();
}

}  // namespace mtl
