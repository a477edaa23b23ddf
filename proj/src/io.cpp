#include "qmrf/io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace qmrf::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

Hasher& Hasher::bytes(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h_ ^= p[i];
    h_ *= 1099511628211ULL;
  }
  return *this;
}

std::string Hasher::hex() const {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h_;
  return os.str();
}

namespace {

void write_raw(const fs::path& p, const void* data, std::size_t n) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open for writing: " + p.string());
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!f) throw FormatError("write failed: " + p.string());
}

std::vector<char> read_raw(const fs::path& p) {
  std::ifstream f(p, std::ios::binary | std::ios::ate);
  if (!f) throw FormatError("cannot open for reading: " + p.string());
  const auto n = static_cast<std::size_t>(f.tellg());
  f.seekg(0);
  std::vector<char> buf(n);
  f.read(buf.data(), static_cast<std::streamsize>(n));
  if (!f) throw FormatError("read failed: " + p.string());
  return buf;
}

template <class T>
std::vector<T> read_typed(const fs::path& p) {
  auto raw = read_raw(p);
  if (raw.size() % sizeof(T) != 0)
    throw FormatError(p.string() + ": size " + std::to_string(raw.size()) +
                      " is not a multiple of " + std::to_string(sizeof(T)));
  std::vector<T> out(raw.size() / sizeof(T));
  std::memcpy(out.data(), raw.data(), raw.size());
  return out;
}

}  // namespace

void write_f64(const fs::path& p, std::span<const double> v) { write_raw(p, v.data(), v.size_bytes()); }
std::vector<double> read_f64(const fs::path& p) { return read_typed<double>(p); }

void write_c128(const fs::path& p, std::span<const std::complex<double>> v) {
  write_raw(p, v.data(), v.size_bytes());
}
std::vector<std::complex<double>> read_c128(const fs::path& p) {
  return read_typed<std::complex<double>>(p);
}

void write_u32(const fs::path& p, std::span<const std::uint32_t> v) {
  write_raw(p, v.data(), v.size_bytes());
}
std::vector<std::uint32_t> read_u32(const fs::path& p) { return read_typed<std::uint32_t>(p); }

void write_u8(const fs::path& p, std::span<const std::uint8_t> v) { write_raw(p, v.data(), v.size()); }
std::vector<std::uint8_t> read_u8(const fs::path& p) { return read_typed<std::uint8_t>(p); }

void write_json(const fs::path& p, const json& j) {
  std::ofstream f(p, std::ios::trunc);
  if (!f) throw FormatError("cannot open for writing: " + p.string());
  f << j.dump(2) << '\n';
}

json read_json(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw FormatError("cannot open for reading: " + p.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

}  // namespace qmrf::io
