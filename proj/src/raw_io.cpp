#include "beamplan/raw_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace beamplan::rawio {
namespace {

std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_bytes(const std::filesystem::path& path, const char* data, std::size_t n) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(data, static_cast<std::streamsize>(n));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

}  // namespace

void write_f32(const std::filesystem::path& path, std::span<const float> values) {
  std::string bytes(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(values[i]);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    std::memcpy(bytes.data() + 4 * i, &bits, 4);
  }
  write_bytes(path, bytes.data(), bytes.size());
}

std::vector<float> read_f32(const std::filesystem::path& path) {
  const std::string bytes = read_bytes(path);
  if (bytes.size() % 4 != 0)
    throw std::length_error(path.string() + ": size is not a multiple of 4 bytes");
  std::vector<float> values(bytes.size() / 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, bytes.data() + 4 * i, 4);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    values[i] = std::bit_cast<float>(bits);
  }
  return values;
}

void write_f64(const std::filesystem::path& path, std::span<const double> values) {
  std::string bytes(values.size() * 8, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint64_t>(values[i]);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    std::memcpy(bytes.data() + 8 * i, &bits, 8);
  }
  write_bytes(path, bytes.data(), bytes.size());
}

std::vector<double> read_f64(const std::filesystem::path& path) {
  const std::string bytes = read_bytes(path);
  if (bytes.size() % 8 != 0)
    throw std::length_error(path.string() + ": size is not a multiple of 8 bytes");
  std::vector<double> values(bytes.size() / 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, bytes.data() + 8 * i, 8);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    values[i] = std::bit_cast<double>(bits);
  }
  return values;
}

void write_u8(const std::filesystem::path& path, std::span<const std::uint8_t> values) {
  write_bytes(path, reinterpret_cast<const char*>(values.data()), values.size());
}

std::vector<std::uint8_t> read_u8(const std::filesystem::path& path) {
  const std::string bytes = read_bytes(path);
  return {bytes.begin(), bytes.end()};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_bytes(path, text.data(), text.size());
}

std::string read_text(const std::filesystem::path& path) { return read_bytes(path); }

void write_json(const std::filesystem::path& path, const nlohmann::json& value) {
  write_text(path, value.dump(2) + "\n");
}

}  // namespace beamplan::rawio
