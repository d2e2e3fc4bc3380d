// Copyright 2026 The stau Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Byte-level file helpers shared by the checkpoint, sequence container and
// report writers. All multi-byte values are little-endian on disk.

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "stau/error.hpp"

namespace stau {
namespace bin {

inline void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f32(std::ostream& os, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

inline void put_f64(std::ostream& os, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(os, bits);
}

inline void read_exact(std::istream& is, void* dst, size_t n, const char* what) {
  is.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n) {
    throw IoError(std::string("truncated file while reading ") + what);
  }
}

inline uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  read_exact(is, b, 4, what);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

inline uint64_t get_u64(std::istream& is, const char* what) {
  unsigned char b[8];
  read_exact(is, b, 8, what);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

inline float get_f32(std::istream& is, const char* what) {
  uint32_t bits = get_u32(is, what);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline double get_f64(std::istream& is, const char* what) {
  uint64_t bits = get_u64(is, what);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

inline void put_f32_array(std::ostream& os, const float* data, size_t n) {
  for (size_t i = 0; i < n; ++i) put_f32(os, data[i]);
}

inline void get_f32_array(std::istream& is, float* data, size_t n, const char* what) {
  for (size_t i = 0; i < n; ++i) data[i] = get_f32(is, what);
}

}  // namespace bin

// Binary PGM (P5), maxval 255. Values are clamped to [0,1] before scaling
// unless minmax is set, in which case the image is min-max normalized first.
inline void write_pgm(const std::string& path, const float* data, int h, int w,
                      bool minmax = false) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  float lo = 0.0f, hi = 1.0f;
  if (minmax) {
    lo = data[0];
    hi = data[0];
    for (int i = 1; i < h * w; ++i) {
      if (data[i] < lo) lo = data[i];
      if (data[i] > hi) hi = data[i];
    }
    if (hi <= lo) hi = lo + 1.0f;
  }
  os << "P5\n" << w << " " << h << "\n255\n";
  for (int i = 0; i < h * w; ++i) {
    float v = (data[i] - lo) / (hi - lo);
    if (v < 0.0f) v = 0.0f;
    if (v > 1.0f) v = 1.0f;
    os.put(static_cast<char>(static_cast<int>(v * 255.0f + 0.5f)));
  }
  if (!os) throw IoError("write failed: " + path);
}

inline std::vector<float> read_pgm(const std::string& path, int& h, int& w) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  std::string magic;
  is >> magic;
  if (magic != "P5") throw IoError("not a P5 PGM: " + path);
  int maxval = 0;
  is >> w >> h >> maxval;
  if (!is || w <= 0 || h <= 0 || maxval != 255) throw IoError("bad PGM header: " + path);
  is.get();  // single whitespace after header
  std::vector<float> out(static_cast<size_t>(h) * w);
  for (auto& v : out) {
    int c = is.get();
    if (c == EOF) throw IoError("truncated PGM: " + path);
    v = static_cast<float>(c) / 255.0f;
  }
  return out;
}

// CSV with '#' comment lines. Fields never contain commas in this project.
inline void write_csv(const std::string& path, const std::vector<std::string>& comments,
                      const std::vector<std::vector<std::string>>& rows) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  for (const auto& c : comments) os << "# " << c << "\n";
  for (const auto& row : rows) {
    for (size_t i = 0; i < row.size(); ++i) {
      if (i) os << ",";
      os << row[i];
    }
    os << "\n";
  }
  if (!os) throw IoError("write failed: " + path);
}

struct CsvFile {
  std::vector<std::string> comments;
  std::vector<std::vector<std::string>> rows;
};

inline CsvFile read_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path);
  CsvFile out;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      size_t start = line.find_first_not_of("# ");
      out.comments.push_back(start == std::string::npos ? "" : line.substr(start));
      continue;
    }
    std::vector<std::string> row;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) row.push_back(field);
    out.rows.push_back(std::move(row));
  }
  return out;
}

}  // namespace stau
