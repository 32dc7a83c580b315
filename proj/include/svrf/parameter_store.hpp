// Copyright Contributors to the SVRF Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace svrf::ad {

/// Named flat arrays of 64-bit reals with attached shapes. The map keeps
/// entries sorted by name, which fixes checkpoint byte order and gradient
/// traversal order.
class ParameterStore {
 public:
  struct Entry {
    std::vector<std::uint32_t> dims;
    std::vector<double> data;
  };

  static std::size_t element_count(const std::vector<std::uint32_t>& dims) {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  void set(const std::string& name, std::vector<std::uint32_t> dims,
           std::vector<double> data) {
    if (element_count(dims) != data.size())
      throw std::invalid_argument("ParameterStore::set('" + name +
                                  "'): shape product != array length");
    entries_[name] = Entry{std::move(dims), std::move(data)};
  }

  const std::vector<double>& values(const std::string& name) const {
    return find(name).data;
  }
  std::vector<double>& values(const std::string& name) {
    return const_cast<Entry&>(find(name)).data;
  }
  const std::vector<std::uint32_t>& dims(const std::string& name) const {
    return find(name).dims;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
  }

  std::size_t size() const { return entries_.size(); }

  std::size_t total_parameters() const {
    std::size_t n = 0;
    for (const auto& [k, v] : entries_) n += v.data.size();
    return n;
  }

  static ParameterStore zeros_like(const ParameterStore& other) {
    ParameterStore out;
    for (const auto& [k, v] : other.entries_)
      out.entries_[k] = Entry{v.dims, std::vector<double>(v.data.size(), 0.0)};
    return out;
  }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  const Entry& find(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end())
      throw std::invalid_argument("ParameterStore: no entry named '" + name + "'");
    return it->second;
  }

  std::map<std::string, Entry> entries_;
};

// ---- checkpoint container ----
//
// Layout (all integers little-endian):
//   "SVRF"            4-byte magic
//   version           1 byte (currently 1)
//   section tag       4 bytes, e.g. "PARM" or "FLOW"
//   entry count       u32
//   per entry:        u32 name length, name bytes,
//                     u32 rank, u32 dims[rank],
//                     f64 values[prod(dims)] (IEEE-754 bits)

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double d) {
  std::uint64_t v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  ByteReader(const std::string& buf) : buf_(buf) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) {
    if (pos_ + n > buf_.size()) throw std::runtime_error("checkpoint: truncated file");
  }
  const std::string& buf_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline constexpr char kCheckpointMagic[4] = {'S', 'V', 'R', 'F'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

inline std::string serialize_checkpoint(const ParameterStore& store,
                                        const std::string& section = "PARM") {
  if (section.size() != 4)
    throw std::invalid_argument("checkpoint section tag must be 4 bytes");
  std::string out;
  out.append(kCheckpointMagic, 4);
  out.push_back(static_cast<char>(kCheckpointVersion));
  out.append(section);
  detail::put_u32(out, static_cast<std::uint32_t>(store.size()));
  for (const auto& [name, entry] : store) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    detail::put_u32(out, static_cast<std::uint32_t>(entry.dims.size()));
    for (auto d : entry.dims) detail::put_u32(out, d);
    for (double v : entry.data) detail::put_f64(out, v);
  }
  return out;
}

struct Checkpoint {
  ParameterStore params;
  std::string section;
};

inline Checkpoint parse_checkpoint(const std::string& buf) {
  detail::ByteReader r(buf);
  if (r.bytes(4) != std::string(kCheckpointMagic, 4))
    throw std::runtime_error("checkpoint: bad magic");
  std::string ver = r.bytes(1);
  if (static_cast<std::uint8_t>(ver[0]) != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version");
  Checkpoint ck;
  ck.section = r.bytes(4);
  std::uint32_t count = r.u32();
  for (std::uint32_t e = 0; e < count; ++e) {
    std::uint32_t name_len = r.u32();
    std::string name = r.bytes(name_len);
    std::uint32_t rank = r.u32();
    std::vector<std::uint32_t> dims(rank);
    for (auto& d : dims) d = r.u32();
    std::vector<double> data(ParameterStore::element_count(dims));
    for (auto& v : data) v = r.f64();
    ck.params.set(name, std::move(dims), std::move(data));
  }
  return ck;
}

inline void save_checkpoint(const ParameterStore& store, const std::string& path,
                            const std::string& section = "PARM") {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  std::string buf = serialize_checkpoint(store, section);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_checkpoint(buf);
}

}  // namespace svrf::ad
