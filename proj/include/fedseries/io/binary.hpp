#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace fedseries::io {

static_assert(std::endian::native == std::endian::little,
              "flat tensor files are little-endian; big-endian hosts are not supported");

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
void write_array(const std::filesystem::path& path, std::span<const T> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size_bytes()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

template <typename T>
std::vector<T> read_array(const std::filesystem::path& path, std::size_t expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("missing file " + path.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != expected * sizeof(T)) {
    throw FormatError(path.string() + ": expected " + std::to_string(expected * sizeof(T)) +
                      " bytes, found " + std::to_string(bytes));
  }
  in.seekg(0);
  std::vector<T> values(expected);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
  return values;
}

/// Writes JSON with sorted keys and a trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& value, int indent = 2);
nlohmann::json read_json(const std::filesystem::path& path);

/// Hex FNV-1a digest of the compact, key-sorted serialisation.
std::string canonical_hash(const nlohmann::json& value);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace fedseries::io
