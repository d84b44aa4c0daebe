#pragma once
// Little-endian raw sidecar files used by the phantom, dose and weight formats.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace beamplan::rawio {

void write_f32(const std::filesystem::path& path, std::span<const float> values);
std::vector<float> read_f32(const std::filesystem::path& path);

void write_f64(const std::filesystem::path& path, std::span<const double> values);
std::vector<double> read_f64(const std::filesystem::path& path);

void write_u8(const std::filesystem::path& path, std::span<const std::uint8_t> values);
std::vector<std::uint8_t> read_u8(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

// Pretty-printed with a trailing newline so artifacts diff cleanly.
void write_json(const std::filesystem::path& path, const nlohmann::json& value);

}  // namespace beamplan::rawio
