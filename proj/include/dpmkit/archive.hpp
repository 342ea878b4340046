#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpmkit/common.hpp"

namespace dpmkit {

// NamedArrayArchive: a length-prefixed UTF-8 JSON manifest followed by the
// raw array payload.
//
//   [u64 LE: manifest byte length][manifest JSON][payload]
//
// The manifest is {"format_version":1, "entries":[{"name","dtype","shape"},...]}
// with dtype "f32" or "f64". Payload arrays are little-endian, row-major, and
// concatenated in manifest order. Round trips are bit-exact.

struct ArchiveEntry {
  std::string name;
  std::string dtype;  // "f32" | "f64"
  std::vector<int> shape;
  std::vector<double> data;  // held as doubles regardless of stored dtype

  size_t element_count() const {
    size_t n = 1;
    for (int d : shape) n *= size_t(d);
    return n;
  }
  size_t byte_size() const { return element_count() * (dtype == "f32" ? 4 : 8); }
};

namespace detail {

inline void put_u64_le(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline uint64_t get_u64_le(const unsigned char* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(p[i]) << (8 * i);
  return v;
}

inline void put_f64_le(std::string& out, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64_le(out, bits);
}

inline void put_f32_le(std::string& out, float f) {
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  for (int i = 0; i < 4; ++i) out.push_back(char((bits >> (8 * i)) & 0xff));
}

inline double get_f64_le(const unsigned char* p) {
  uint64_t bits = get_u64_le(p);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

inline float get_f32_le(const unsigned char* p) {
  uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= uint32_t(p[i]) << (8 * i);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace detail

inline std::string serialize_archive(const std::vector<ArchiveEntry>& entries) {
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["entries"] = nlohmann::json::array();
  std::map<std::string, int> seen;
  for (const auto& e : entries) {
    require(seen.emplace(e.name, 1).second, ErrorKind::io,
            "archive: duplicate entry name '" + e.name + "'");
    require(e.dtype == "f32" || e.dtype == "f64", ErrorKind::io,
            "archive: bad dtype for '" + e.name + "'");
    require(e.data.size() == e.element_count(), ErrorKind::io,
            "archive: data size mismatch for '" + e.name + "'");
    manifest["entries"].push_back({{"name", e.name}, {"dtype", e.dtype}, {"shape", e.shape}});
  }
  const std::string header = manifest.dump();
  std::string out;
  detail::put_u64_le(out, header.size());
  out += header;
  for (const auto& e : entries) {
    if (e.dtype == "f64") {
      for (double d : e.data) detail::put_f64_le(out, d);
    } else {
      for (double d : e.data) detail::put_f32_le(out, float(d));
    }
  }
  return out;
}

inline std::vector<ArchiveEntry> deserialize_archive(const std::string& bytes) {
  require(bytes.size() >= 8, ErrorKind::io, "archive: truncated before header length");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const uint64_t hlen = detail::get_u64_le(p);
  require(bytes.size() >= 8 + hlen, ErrorKind::io,
          "archive: header claims " + std::to_string(hlen) + " bytes but only " +
              std::to_string(bytes.size() - 8) + " remain after position 8");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(8, hlen));
  } catch (const std::exception& e) {
    fail(ErrorKind::io, std::string("archive: malformed header JSON: ") + e.what());
  }
  require(manifest.contains("format_version") && manifest["format_version"].get<int>() == 1,
          ErrorKind::io, "archive: unsupported format_version");

  std::vector<ArchiveEntry> entries;
  std::map<std::string, int> seen;
  size_t pos = 8 + hlen;
  for (const auto& je : manifest["entries"]) {
    ArchiveEntry e;
    e.name = je.at("name").get<std::string>();
    e.dtype = je.at("dtype").get<std::string>();
    e.shape = je.at("shape").get<std::vector<int>>();
    require(e.dtype == "f32" || e.dtype == "f64", ErrorKind::io,
            "archive: bad dtype for '" + e.name + "'");
    require(seen.emplace(e.name, 1).second, ErrorKind::io,
            "archive: duplicate entry name '" + e.name + "'");
    const size_t nbytes = e.byte_size();
    require(bytes.size() >= pos + nbytes, ErrorKind::io,
            "archive: payload for '" + e.name + "' truncated at byte " +
                std::to_string(bytes.size()) + ", expected up to " +
                std::to_string(pos + nbytes));
    const auto* q = reinterpret_cast<const unsigned char*>(bytes.data()) + pos;
    e.data.resize(e.element_count());
    if (e.dtype == "f64") {
      for (size_t i = 0; i < e.data.size(); ++i) e.data[i] = detail::get_f64_le(q + 8 * i);
    } else {
      for (size_t i = 0; i < e.data.size(); ++i) e.data[i] = double(detail::get_f32_le(q + 4 * i));
    }
    pos += nbytes;
    entries.push_back(std::move(e));
  }
  require(pos == bytes.size(), ErrorKind::io,
          "archive: trailing bytes after payload at position " + std::to_string(pos));
  return entries;
}

inline void write_archive(const std::vector<ArchiveEntry>& entries, const std::string& path) {
  const std::string bytes = serialize_archive(entries);
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::io, "archive: cannot open for write: " + path);
  out.write(bytes.data(), std::streamsize(bytes.size()));
  require(out.good(), ErrorKind::io, "archive: write failed: " + path);
}

inline std::vector<ArchiveEntry> read_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::io, "archive: cannot open: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_archive(bytes);
}

inline ArchiveEntry entry_from_mat(const std::string& name, const Mat& m,
                                   const std::string& dtype = "f64") {
  ArchiveEntry e;
  e.name = name;
  e.dtype = dtype;
  e.shape = {m.rows, m.cols};
  e.data = m.a;
  return e;
}

inline Mat mat_from_entry(const ArchiveEntry& e) {
  require(e.shape.size() == 2, ErrorKind::io, "archive: entry '" + e.name + "' is not 2-D");
  Mat m(e.shape[0], e.shape[1]);
  m.a = e.data;
  return m;
}

}  // namespace dpmkit
