#include "core/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

namespace imac {

namespace {

constexpr char kMagic[8] = {'I', 'M', 'A', 'C', 'C', 'K', 'P', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}

void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw RuntimeError("checkpoint: truncated file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void BlockFile::add(const std::string& name, std::vector<std::uint64_t> shape,
                    std::vector<double> data) {
  std::uint64_t numel = 1;
  for (std::uint64_t s : shape) numel *= s;
  if (numel != data.size()) throw RuntimeError("checkpoint: shape/data mismatch for " + name);
  blocks_[name] = Block{std::move(shape), std::move(data)};
}

void BlockFile::add_tensor(const std::string& name, const Tensor& t) {
  std::vector<std::uint64_t> shape(t.shape.begin(), t.shape.end());
  add(name, std::move(shape), t.data);
}

const BlockFile::Block& BlockFile::get(const std::string& name) const {
  auto it = blocks_.find(name);
  if (it == blocks_.end()) throw RuntimeError("checkpoint: missing block " + name);
  return it->second;
}

double BlockFile::get_scalar(const std::string& name) const {
  const Block& b = get(name);
  if (b.data.size() != 1) throw RuntimeError("checkpoint: block " + name + " is not scalar");
  return b.data[0];
}

void BlockFile::load_tensor(const std::string& name, Tensor& t) const {
  const Block& b = get(name);
  if (b.data.size() != t.numel())
    throw RuntimeError("checkpoint: block " + name + " has wrong element count");
  t.data = b.data;
}

void BlockFile::write(const std::string& path) const {
  std::string out;
  out.append(kMagic, 8);
  put_u32(out, static_cast<std::uint32_t>(blocks_.size()));
  for (const auto& [name, block] : blocks_) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(block.shape.size()));
    for (std::uint64_t s : block.shape) put_u64(out, s);
    for (double d : block.data) put_f64(out, d);
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw RuntimeError("checkpoint: cannot open " + tmp + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw RuntimeError("checkpoint: write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw RuntimeError("checkpoint: rename failed for " + path);
}

BlockFile BlockFile::read(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("checkpoint: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r{buf};
  const std::string magic = r.bytes(8);
  if (std::memcmp(magic.data(), kMagic, 8) != 0)
    throw ConfigError("checkpoint: bad magic in " + path);
  const std::uint32_t count = r.u32();
  BlockFile out;
  for (std::uint32_t b = 0; b < count; ++b) {
    const std::uint32_t name_len = r.u32();
    const std::string name = r.bytes(name_len);
    const std::uint32_t rank = r.u32();
    std::vector<std::uint64_t> shape(rank);
    std::uint64_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      shape[i] = r.u64();
      numel *= shape[i];
    }
    std::vector<double> data(numel);
    for (std::uint64_t i = 0; i < numel; ++i) data[i] = r.f64();
    out.blocks_[name] = Block{std::move(shape), std::move(data)};
  }
  return out;
}

}  // namespace imac
