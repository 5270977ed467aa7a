#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "layeragg/data.hpp"

namespace layeragg {

namespace {

constexpr std::array<char, 4> kMagic = {'L', 'I', 'F', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kDtypeF32 = 1;
constexpr std::size_t kHeaderBytes = 24;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint32_t checked_u32(Index v, const char* what) {
  if (v < 1 || v > static_cast<Index>(std::numeric_limits<std::uint32_t>::max())) {
    throw FormatError(std::string("lif: ") + what + " out of range");
  }
  return static_cast<std::uint32_t>(v);
}

LifHeader parse_header(const unsigned char* p, const std::filesystem::path& path) {
  if (std::memcmp(p, kMagic.data(), kMagic.size()) != 0) {
    throw FormatError("lif: bad magic in " + path.string());
  }
  if (get_u32(p + 4) != kVersion) throw FormatError("lif: unsupported version in " + path.string());
  if (get_u32(p + 20) != kDtypeF32) throw FormatError("lif: unsupported dtype in " + path.string());
  LifHeader h{get_u32(p + 8), get_u32(p + 12), get_u32(p + 16)};
  if (h.layers == 0 || h.frames == 0 || h.dim == 0) {
    throw FormatError("lif: zero extent in header of " + path.string());
  }
  return h;
}

}  // namespace

void write_lif(const LayerStack& stack, const std::filesystem::path& path) {
  std::string buf;
  const Tensord& v = stack.values();
  buf.reserve(kHeaderBytes + 4 * static_cast<std::size_t>(v.size()));
  buf.append(kMagic.data(), kMagic.size());
  put_u32(buf, kVersion);
  put_u32(buf, checked_u32(stack.layers(), "L"));
  put_u32(buf, checked_u32(stack.frames(), "T"));
  put_u32(buf, checked_u32(stack.dim(), "D"));
  put_u32(buf, kDtypeF32);
  for (Index i = 0; i < v.size(); ++i) {
    put_u32(buf, std::bit_cast<std::uint32_t>(static_cast<float>(v[i])));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("lif: cannot open " + path.string() + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw FormatError("lif: write failed for " + path.string());
}

LifHeader read_lif_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("lif: cannot open " + path.string());
  std::array<unsigned char, kHeaderBytes> head{};
  in.read(reinterpret_cast<char*>(head.data()), kHeaderBytes);
  if (in.gcount() != static_cast<std::streamsize>(kHeaderBytes)) {
    throw FormatError("lif: truncated header in " + path.string());
  }
  return parse_header(head.data(), path);
}

LayerStack read_lif(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw FormatError("lif: cannot open " + path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  if (bytes < kHeaderBytes) throw FormatError("lif: truncated header in " + path.string());
  std::vector<unsigned char> buf(bytes);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw FormatError("lif: read failed for " + path.string());

  const LifHeader h = parse_header(buf.data(), path);
  const std::size_t count = std::size_t{h.layers} * h.frames * h.dim;
  const std::size_t payload = bytes - kHeaderBytes;
  if (payload < 4 * count) {
    throw FormatError("lif: truncated payload in " + path.string() + " (" +
                      std::to_string(payload / 4) + " of " + std::to_string(count) + " values)");
  }
  if (payload != 4 * count) throw FormatError("lif: trailing bytes in " + path.string());

  Tensord values({Index{h.layers}, Index{h.frames}, Index{h.dim}});
  const unsigned char* p = buf.data() + kHeaderBytes;
  for (std::size_t i = 0; i < count; ++i, p += 4) {
    values[static_cast<Index>(i)] = static_cast<double>(std::bit_cast<float>(get_u32(p)));
  }
  return LayerStack(std::move(values));
}

}  // namespace layeragg
