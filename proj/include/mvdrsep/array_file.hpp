// Copyright 2026 mvdrsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Binary array container with a one-line JSON header.
//
//   line 1: "MVDRSEP-ARRAY 1"
//   line 2: {"meta": {...}, "arrays": [{"name": .., "shape": [..], "offset": ..}]}
//   rest  : little-endian float64 payload; offsets count doubles from the start
//
// Used for feature dumps, speaker embeddings, masks and network parameters.

#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "mvdrsep/error.hpp"

namespace mvdrsep {

struct NamedArray {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<double> data;  // row-major

  std::int64_t numel() const {
    return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                           std::multiplies<>());
  }

  static NamedArray from_matrix(std::string name, const Eigen::MatrixXd &m) {
    NamedArray a{std::move(name), {m.rows(), m.cols()}, {}};
    a.data.resize(m.size());
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        a.data.data(), m.rows(), m.cols()) = m;
    return a;
  }

  static NamedArray from_vector(std::string name, const Eigen::VectorXd &v) {
    return {std::move(name), {v.size()}, std::vector<double>(v.data(), v.data() + v.size())};
  }

  Eigen::MatrixXd to_matrix() const {
    require(shape.size() == 2, ErrorKind::data, "array '" + name + "' is not 2-D");
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                          Eigen::RowMajor>>(data.data(), shape[0],
                                                            shape[1]);
  }

  Eigen::VectorXd to_vector() const {
    require(shape.size() == 1, ErrorKind::data, "array '" + name + "' is not 1-D");
    return Eigen::Map<const Eigen::VectorXd>(data.data(), shape[0]);
  }
};

struct ArrayFile {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const NamedArray &get(const std::string &name) const {
    for (const auto &a : arrays)
      if (a.name == name) return a;
    fail(ErrorKind::data, "array file has no entry '" + name + "'");
  }

  bool has(const std::string &name) const {
    for (const auto &a : arrays)
      if (a.name == name) return true;
    return false;
  }
};

inline constexpr const char *kArrayMagic = "MVDRSEP-ARRAY 1";

inline void write_array_file(const std::string &path, const ArrayFile &file) {
  static_assert(std::endian::native == std::endian::little,
                "array files assume a little-endian host");
  nlohmann::json header;
  header["meta"] = file.meta;
  header["arrays"] = nlohmann::json::array();
  std::int64_t offset = 0;
  for (const auto &a : file.arrays) {
    require(static_cast<std::int64_t>(a.data.size()) == a.numel(), ErrorKind::data,
            "array '" + a.name + "' data does not match its shape");
    header["arrays"].push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset}});
    offset += a.numel();
  }
  std::ofstream os(path, std::ios::binary);
  require(os.is_open(), ErrorKind::data, "cannot open for writing: " + path);
  os << kArrayMagic << '\n' << header.dump() << '\n';
  for (const auto &a : file.arrays)
    os.write(reinterpret_cast<const char *>(a.data.data()),
             static_cast<std::streamsize>(a.data.size() * sizeof(double)));
  require(os.good(), ErrorKind::data, "write failed: " + path);
}

inline ArrayFile read_array_file(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  require(is.is_open(), ErrorKind::data, "cannot open array file: " + path);
  std::string magic, header_line;
  std::getline(is, magic);
  require(magic == kArrayMagic, ErrorKind::data, "bad array file magic: " + path);
  std::getline(is, header_line);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception &e) {
    fail(ErrorKind::data, "bad array file header in " + path + ": " + e.what());
  }
  std::vector<double> payload;
  {
    std::vector<char> raw((std::istreambuf_iterator<char>(is)),
                          std::istreambuf_iterator<char>());
    require(raw.size() % sizeof(double) == 0, ErrorKind::data,
            "truncated array payload: " + path);
    payload.resize(raw.size() / sizeof(double));
    std::memcpy(payload.data(), raw.data(), raw.size());
  }
  ArrayFile file;
  file.meta = header.value("meta", nlohmann::json::object());
  for (const auto &entry : header.at("arrays")) {
    NamedArray a;
    a.name = entry.at("name").get<std::string>();
    a.shape = entry.at("shape").get<std::vector<std::int64_t>>();
    const auto offset = entry.at("offset").get<std::int64_t>();
    require(offset >= 0 && offset + a.numel() <= static_cast<std::int64_t>(payload.size()),
            ErrorKind::data, "array '" + a.name + "' exceeds payload in " + path);
    a.data.assign(payload.begin() + offset, payload.begin() + offset + a.numel());
    file.arrays.push_back(std::move(a));
  }
  return file;
}

}  // namespace mvdrsep
