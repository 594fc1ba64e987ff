#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "beamsel/errors.hpp"
#include "beamsel/linalg.hpp"

namespace beamsel {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

inline void write_f32(std::ostream& os, const std::vector<float>& data) {
  os.write(reinterpret_cast<const char*>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(float)));
}

inline void write_u32(std::ostream& os, const std::vector<std::uint32_t>& data) {
  os.write(reinterpret_cast<const char*>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(std::uint32_t)));
}

inline std::vector<float> read_f32(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open " + path.string());
  is.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(is.tellg());
  is.seekg(0);
  if (bytes % sizeof(float) != 0)
    throw ConfigError("file size not a multiple of 4: " + path.string());
  std::vector<float> data(bytes / sizeof(float));
  is.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(bytes));
  return data;
}

inline std::vector<std::uint32_t> read_u32(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open " + path.string());
  is.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(is.tellg());
  is.seekg(0);
  if (bytes % sizeof(std::uint32_t) != 0)
    throw ConfigError("file size not a multiple of 4: " + path.string());
  std::vector<std::uint32_t> data(bytes / sizeof(std::uint32_t));
  is.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(bytes));
  return data;
}

// Row-major interleaved (re, im) f32 encoding of a complex matrix.
inline std::vector<float> complex_to_f32(const CMat& m) {
  std::vector<float> out;
  out.reserve(static_cast<std::size_t>(m.size()) * 2);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      out.push_back(static_cast<float>(m(i, j).real()));
      out.push_back(static_cast<float>(m(i, j).imag()));
    }
  }
  return out;
}

inline CMat f32_to_complex(const std::vector<float>& data, Eigen::Index rows,
                           Eigen::Index cols) {
  if (static_cast<Eigen::Index>(data.size()) != rows * cols * 2)
    throw ShapeMismatch("complex payload size mismatch");
  CMat m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      m(i, j) = Complex(data[k], data[k + 1]);
      k += 2;
    }
  }
  return m;
}

}  // namespace beamsel
