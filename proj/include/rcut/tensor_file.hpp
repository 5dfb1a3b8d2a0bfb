#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "rcut/common.hpp"

// RCUT tensor container: the one binary format used for model weights,
// protocol tensor payloads, and cached maps.
//
// Layout (all integers and floats little-endian):
//   magic   - 4 ASCII bytes "RCUT"
//   version - u32 (currently 1)
//   count   - u32, number of entries
//   entry   - name_len u16
//             name     utf8 bytes
//             dtype    u8 (0 = f32, nothing else defined)
//             ndim     u8
//             dims     u32 x ndim
//             payload  f32 x prod(dims), row-major
//
// Round-trips are bit-exact for f32 payloads.

namespace rcut {

struct TensorEntry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  std::size_t elem_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

class TensorFile {
 public:
  static constexpr std::uint32_t kVersion = 1;

  const std::vector<TensorEntry>& entries() const { return entries_; }

  void add(std::string name, std::vector<std::uint32_t> dims,
           std::vector<float> data) {
    if (find(name) != nullptr)
      throw FormatError("tensor file: duplicate entry name '" + name + "'");
    TensorEntry e{std::move(name), std::move(dims), std::move(data)};
    if (e.data.size() != e.elem_count())
      throw FormatError("tensor file: entry '" + e.name + "' has " +
                        std::to_string(e.data.size()) + " values, dims imply " +
                        std::to_string(e.elem_count()));
    entries_.push_back(std::move(e));
  }

  const TensorEntry* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e;
    return nullptr;
  }

  const TensorEntry& at(const std::string& name) const {
    const TensorEntry* e = find(name);
    if (!e) throw FormatError("tensor file: missing entry '" + name + "'");
    return *e;
  }

  std::vector<std::uint8_t> serialize() const {
    std::vector<std::uint8_t> out;
    out.reserve(16);
    out.insert(out.end(), {'R', 'C', 'U', 'T'});
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& e : entries_) {
      put_u16(out, static_cast<std::uint16_t>(e.name.size()));
      out.insert(out.end(), e.name.begin(), e.name.end());
      out.push_back(0);  // dtype f32
      out.push_back(static_cast<std::uint8_t>(e.dims.size()));
      for (auto d : e.dims) put_u32(out, d);
      for (float v : e.data) put_f32(out, v);
    }
    return out;
  }

  static TensorFile parse(const std::uint8_t* p, std::size_t len) {
    Reader r{p, len, 0};
    if (r.remaining() < 4 || std::memcmp(p, "RCUT", 4) != 0)
      throw FormatError("tensor file: bad magic at offset 0");
    r.off = 4;
    std::uint32_t version = r.u32("version");
    if (version != kVersion)
      throw FormatError("tensor file: unsupported version " +
                        std::to_string(version) + " at offset 4");
    std::uint32_t count = r.u32("entry count");
    TensorFile tf;
    for (std::uint32_t i = 0; i < count; ++i) {
      std::uint16_t name_len = r.u16("name length");
      std::string name = r.str(name_len);
      std::uint8_t dtype = r.u8("dtype");
      if (dtype != 0)
        throw FormatError("tensor file: unknown dtype " +
                          std::to_string(dtype) + " at offset " +
                          std::to_string(r.off - 1));
      std::uint8_t ndim = r.u8("ndim");
      std::vector<std::uint32_t> dims(ndim);
      std::size_t n = 1;
      for (auto& d : dims) {
        d = r.u32("dim");
        n *= d;
      }
      std::size_t need = n * 4;
      if (r.remaining() < need)
        throw FormatError("tensor file: truncated payload for '" + name +
                          "', expected " + std::to_string(need) +
                          " bytes, have " + std::to_string(r.remaining()) +
                          " at offset " + std::to_string(r.off));
      std::vector<float> data(n);
      for (auto& v : data) v = r.f32();
      tf.entries_.push_back({std::move(name), std::move(dims), std::move(data)});
    }
    return tf;
  }

  void save(const std::string& path) const {
    auto bytes = serialize();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for write: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write: " + path);
  }

  static TensorFile load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return parse(bytes.data(), bytes.size());
  }

 private:
  struct Reader {
    const std::uint8_t* p;
    std::size_t len;
    std::size_t off;

    std::size_t remaining() const { return len - off; }

    void need(std::size_t n, const char* what) {
      if (remaining() < n)
        throw FormatError(std::string("tensor file: truncated ") + what +
                          " at offset " + std::to_string(off));
    }
    std::uint8_t u8(const char* what) {
      need(1, what);
      return p[off++];
    }
    std::uint16_t u16(const char* what) {
      need(2, what);
      std::uint16_t v = static_cast<std::uint16_t>(p[off]) |
                        static_cast<std::uint16_t>(p[off + 1]) << 8;
      off += 2;
      return v;
    }
    std::uint32_t u32(const char* what) {
      need(4, what);
      std::uint32_t v = 0;
      for (int i = 3; i >= 0; --i) v = (v << 8) | p[off + i];
      off += 4;
      return v;
    }
    float f32() {
      std::uint32_t bits = u32("payload");
      float v;
      std::memcpy(&v, &bits, 4);
      return v;
    }
    std::string str(std::size_t n) {
      need(n, "name");
      std::string s(reinterpret_cast<const char*>(p + off), n);
      off += n;
      return s;
    }
  };

  static void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(v & 0xff);
    out.push_back((v >> 8) & 0xff);
  }
  static void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xff);
  }
  static void put_f32(std::vector<std::uint8_t>& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
  }

  std::vector<TensorEntry> entries_;
};

}  // namespace rcut
