#pragma once

// Raw little-endian array files plus JSON manifests. Writes are byte-stable:
// fixed field order in the manifest (nlohmann sorts object keys) and fixed
// array order in the blob.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lnn/common.hpp"
#include "lnn/tensor.hpp"

namespace lnn {

using json = nlohmann::json;

namespace detail {

template <typename U>
void write_le(std::ostream& os, const U* data, std::size_t n) {
  static_assert(sizeof(U) == 1 || sizeof(U) == 4 || sizeof(U) == 8);
  if constexpr (sizeof(U) == 1) {
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
    return;
  }
  if (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(U)));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      unsigned char bytes[sizeof(U)];
      std::memcpy(bytes, &data[i], sizeof(U));
      for (std::size_t b = sizeof(U); b-- > 0;) os.put(static_cast<char>(bytes[b]));
    }
  }
}

template <typename U>
void read_le(std::istream& is, U* data, std::size_t n) {
  static_assert(sizeof(U) == 1 || sizeof(U) == 4 || sizeof(U) == 8);
  is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(U)));
  if (static_cast<std::size_t>(is.gcount()) != n * sizeof(U))
    throw format_error("truncated array file");
  if (sizeof(U) > 1 && std::endian::native != std::endian::little) {
    for (std::size_t i = 0; i < n; ++i) {
      unsigned char bytes[sizeof(U)];
      std::memcpy(bytes, &data[i], sizeof(U));
      for (std::size_t b = 0; b < sizeof(U) / 2; ++b) std::swap(bytes[b], bytes[sizeof(U) - 1 - b]);
      std::memcpy(&data[i], bytes, sizeof(U));
    }
  }
}

}  // namespace detail

inline void ensure_dir(const std::filesystem::path& p) {
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw io_error("cannot create directory " + p.string());
}

template <typename U>
void write_array_file(const std::filesystem::path& path, const U* data, std::size_t n) {
  ensure_dir(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw io_error("cannot open " + path.string() + " for writing");
  detail::write_le(os, data, n);
  if (!os) throw io_error("write failed for " + path.string());
}

template <typename U>
std::vector<U> read_array_file(const std::filesystem::path& path, std::size_t expected) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw format_error("missing array file " + path.string());
  is.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(is.tellg());
  is.seekg(0, std::ios::beg);
  if (bytes != expected * sizeof(U))
    throw format_error("array file " + path.string() + " holds " + std::to_string(bytes) +
                       " bytes, manifest expects " + std::to_string(expected * sizeof(U)));
  std::vector<U> out(expected);
  detail::read_le(is, out.data(), expected);
  return out;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  ensure_dir(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw io_error("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw io_error("write failed for " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw format_error("missing file " + path.string());
  std::string s((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return s;
}

inline json parse_json_file(const std::filesystem::path& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw format_error("invalid JSON in " + path.string() + ": " + e.what());
  }
}

inline Shape shape_from_json(const json& j) {
  Shape s;
  for (const auto& v : j) s.push_back(v.get<std::size_t>());
  return s;
}

inline json shape_to_json(const Shape& s) {
  json j = json::array();
  for (std::size_t v : s) j.push_back(v);
  return j;
}

}  // namespace lnn
