/* Copyright 2026 The StatA Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef STATA_TENSOR_IO_HPP_
#define STATA_TENSOR_IO_HPP_

// EMB1 tensor files:
//   bytes 0-3   ASCII "EMB1"
//   bytes 4-7   little-endian u32 header length H
//   bytes 8..   UTF-8 JSON {"n": int, "d": int, "dtype": "f32"|"f64", "order": "row"}
//   remainder   n*d values, little-endian, row-major
// Label files: UTF-8 text, one decimal integer per line, LF-terminated.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stata/types.hpp"

static_assert(std::endian::native == std::endian::little,
              "EMB1 I/O assumes a little-endian host");

namespace stata {

enum class Dtype { kF32, kF64 };

namespace io_detail {

inline constexpr char kMagic[4] = {'E', 'M', 'B', '1'};

inline std::ifstream open_for_read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open for reading");
  return in;
}

/// Reads the payload as raw doubles (widening f32 on the fly).
inline Matrix read_emb1(const std::string& path) {
  std::ifstream in = open_for_read(path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError(path + ": not an EMB1 file (bad magic)");
  }
  uint32_t header_len = 0;
  if (!in.read(reinterpret_cast<char*>(&header_len), 4)) {
    throw DataError(path + ": truncated header length");
  }
  std::string header(header_len, '\0');
  if (!in.read(header.data(), header_len)) {
    throw DataError(path + ": truncated header");
  }
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": malformed header JSON: " + e.what());
  }
  if (!meta.contains("n") || !meta.contains("d") || !meta.contains("dtype")) {
    throw DataError(path + ": header missing n/d/dtype");
  }
  const int64_t n = meta["n"].get<int64_t>();
  const int64_t d = meta["d"].get<int64_t>();
  if (n < 1 || d < 1) throw DataError(path + ": header has n or d < 1");
  if (meta.value("order", "row") != "row") {
    throw DataError(path + ": unsupported order (only \"row\")");
  }
  const std::string dtype = meta["dtype"].get<std::string>();
  Matrix out(n, d);
  if (dtype == "f64") {
    if (!in.read(reinterpret_cast<char*>(out.data()),
                 static_cast<std::streamsize>(n * d * sizeof(double)))) {
      throw DataError(path + ": truncated f64 payload");
    }
  } else if (dtype == "f32") {
    std::vector<float> buf(static_cast<size_t>(n * d));
    if (!in.read(reinterpret_cast<char*>(buf.data()),
                 static_cast<std::streamsize>(buf.size() * sizeof(float)))) {
      throw DataError(path + ": truncated f32 payload");
    }
    for (int64_t i = 0; i < n * d; ++i) {
      out.data()[i] = static_cast<double>(buf[static_cast<size_t>(i)]);
    }
  } else {
    throw DataError(path + ": unsupported dtype \"" + dtype + "\" (want f32 or f64)");
  }
  return out;
}

}  // namespace io_detail

/// Writes `data` as an EMB1 file. f32 narrows each value with round-to-nearest.
inline void write_embeddings(const std::string& path, const Matrix& data, Dtype dtype) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(path + ": cannot open for writing");
  nlohmann::json meta{{"n", data.rows()},
                      {"d", data.cols()},
                      {"dtype", dtype == Dtype::kF32 ? "f32" : "f64"},
                      {"order", "row"}};
  const std::string header = meta.dump();
  const uint32_t header_len = static_cast<uint32_t>(header.size());
  out.write(io_detail::kMagic, 4);
  out.write(reinterpret_cast<const char*>(&header_len), 4);
  out.write(header.data(), header_len);
  if (dtype == Dtype::kF64) {
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
  } else {
    std::vector<float> buf(static_cast<size_t>(data.size()));
    for (Eigen::Index i = 0; i < data.size(); ++i) {
      buf[static_cast<size_t>(i)] = static_cast<float>(data.data()[i]);
    }
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) throw DataError(path + ": write failed");
}

/// Loads, validates and row-normalizes a query embedding file.
inline EmbeddingSet load_embeddings(const std::string& path) {
  return EmbeddingSet::from_rows(io_detail::read_emb1(path));
}

/// Loads, validates and row-normalizes a class anchor file.
inline AnchorSet load_anchors(const std::string& path) {
  return AnchorSet::from_rows(io_detail::read_emb1(path));
}

/// Loads a label file; every index must lie in [0, k).
inline LabelVector load_labels(const std::string& path, int64_t k) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open for reading");
  LabelVector out;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      throw DataError(path + ": empty line " + std::to_string(lineno));
    }
    size_t pos = 0;
    long long value = 0;
    try {
      value = std::stoll(line, &pos);
    } catch (const std::exception&) {
      throw DataError(path + ": non-integer line " + std::to_string(lineno) +
                      ": \"" + line + "\"");
    }
    if (pos != line.size() || value < 0) {
      throw DataError(path + ": non-integer line " + std::to_string(lineno) +
                      ": \"" + line + "\"");
    }
    if (value >= k) {
      throw DataError(path + ": label " + std::to_string(value) + " on line " +
                      std::to_string(lineno) + " out of range [0, " +
                      std::to_string(k) + ")");
    }
    out.labels.push_back(static_cast<int32_t>(value));
  }
  if (out.labels.empty()) throw DataError(path + ": empty label file");
  return out;
}

inline void write_labels(const std::string& path, const LabelVector& labels) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError(path + ": cannot open for writing");
  for (int32_t v : labels.labels) out << v << '\n';
  if (!out) throw DataError(path + ": write failed");
}

}  // namespace stata

#endif  // STATA_TENSOR_IO_HPP_
