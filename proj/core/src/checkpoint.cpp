#include "prunecnn/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <vector>

namespace prunecnn {

namespace {

constexpr char kMagic[8] = {'P', 'C', 'N', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

struct Writer {
  std::vector<unsigned char> buf;

  void bytes(const void* p, std::size_t n) {
    const unsigned char* b = (const unsigned char*)p;
    buf.insert(buf.end(), b, b + n);
  }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void tensor(const Tensor& t) { bytes(t.data(), t.size() * 8); }
};

struct Reader {
  const unsigned char* p;
  std::size_t len;
  std::size_t off = 0;

  void bytes(void* dst, std::size_t n) {
    if (off + n > len) {
      throw FormatError("checkpoint truncated at offset " +
                        std::to_string(off));
    }
    std::memcpy(dst, p + off, n);
    off += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, 8);
    return v;
  }
  void tensor(Tensor& t) { bytes(t.data(), t.size() * 8); }
};

}  // namespace

std::uint32_t crc32(const unsigned char* data, std::size_t len) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) {
        c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      }
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i) {
    c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
  }
  return c ^ 0xFFFFFFFFu;
}

void save_checkpoint(const Network& net, const std::string& path) {
  Writer w;
  w.bytes(kMagic, 8);
  w.u32(kVersion);
  for (std::size_t m : net.config.map_counts) w.u32((std::uint32_t)m);
  w.u32((std::uint32_t)net.config.patch_size);
  w.u64(net.init_seed);
  w.u64(net.iteration);
  for (int i = 0; i < 3; ++i) {
    w.tensor(net.conv_kernels[i]);
    w.tensor(net.conv_bias[i]);
  }
  w.tensor(net.fc4_weights);
  w.tensor(net.fc4_bias);
  w.tensor(net.fc5_weights);
  w.tensor(net.fc5_bias);
  for (const auto& m : net.masks) {
    w.u32((std::uint32_t)m.size());
    w.bytes(m.data(), m.size());
  }
  w.u32(crc32(w.buf.data(), w.buf.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot open for writing: " + path);
  out.write((const char*)w.buf.data(), (std::streamsize)w.buf.size());
  if (!out) throw InputError("write failed: " + path);
}

Network load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint: " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 16) throw FormatError("checkpoint truncated at offset 0");

  const std::uint32_t stored_crc =
      (std::uint32_t)buf[buf.size() - 4] |
      ((std::uint32_t)buf[buf.size() - 3] << 8) |
      ((std::uint32_t)buf[buf.size() - 2] << 16) |
      ((std::uint32_t)buf[buf.size() - 1] << 24);
  if (crc32(buf.data(), buf.size() - 4) != stored_crc) {
    throw FormatError("checkpoint CRC mismatch at offset " +
                      std::to_string(buf.size() - 4));
  }

  Reader r{buf.data(), buf.size() - 4};
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) {
    throw FormatError("bad checkpoint magic at offset 0");
  }
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw FormatError("unsupported checkpoint version " +
                      std::to_string(version));
  }
  NetworkConfig cfg;
  for (int i = 0; i < 4; ++i) cfg.map_counts[i] = r.u32();
  cfg.patch_size = r.u32();
  cfg.validate();

  Network net = build_network(cfg, 0);
  net.init_seed = r.u64();
  net.iteration = r.u64();
  for (int i = 0; i < 3; ++i) {
    r.tensor(net.conv_kernels[i]);
    r.tensor(net.conv_bias[i]);
  }
  r.tensor(net.fc4_weights);
  r.tensor(net.fc4_bias);
  r.tensor(net.fc5_weights);
  r.tensor(net.fc5_bias);
  for (auto& m : net.masks) {
    const std::uint32_t n = r.u32();
    if (n != m.size()) {
      throw FormatError("mask length mismatch at offset " +
                        std::to_string(r.off));
    }
    r.bytes(m.data(), n);
  }
  if (r.off != r.len) {
    throw FormatError("trailing bytes after checkpoint payload at offset " +
                      std::to_string(r.off));
  }
  return net;
}

}  // namespace prunecnn
