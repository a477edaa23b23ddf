#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace qmrf::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 64-bit FNV-1a, stable across platforms. Used for content hashes in manifests.
class Hasher {
 public:
  Hasher& bytes(const void* data, std::size_t n);
  Hasher& doubles(std::span<const double> v) { return bytes(v.data(), v.size_bytes()); }
  Hasher& str(std::string_view s) { return bytes(s.data(), s.size()); }
  template <class T>
  Hasher& pod(const T& v) {
    return bytes(&v, sizeof(T));
  }
  std::uint64_t value() const { return h_; }
  std::string hex() const;

 private:
  std::uint64_t h_ = 1469598103934665603ULL;
};

// Little-endian float64 arrays. The host is checked to be little-endian at startup.
void write_f64(const fs::path& p, std::span<const double> v);
std::vector<double> read_f64(const fs::path& p);
void write_c128(const fs::path& p, std::span<const std::complex<double>> v);
std::vector<std::complex<double>> read_c128(const fs::path& p);
void write_u32(const fs::path& p, std::span<const std::uint32_t> v);
std::vector<std::uint32_t> read_u32(const fs::path& p);

void write_u8(const fs::path& p, std::span<const std::uint8_t> v);
std::vector<std::uint8_t> read_u8(const fs::path& p);

void write_json(const fs::path& p, const json& j);
json read_json(const fs::path& p);

}  // namespace qmrf::io
