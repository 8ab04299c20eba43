#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace zsalign {

// Raw little-endian f32 blobs, row-major, no header. This is the on-disk
// feature/parameter format; dimensions live in the JSON manifests.
std::vector<float> read_f32_blob(const std::filesystem::path& path,
                                 std::size_t expected_count);
void write_f32_blob(const std::filesystem::path& path,
                    std::span<const float> values);

std::uint64_t fnv1a(std::span<const unsigned char> bytes);
std::uint64_t fnv1a_file(const std::filesystem::path& path);
std::string fnv1a_hex(std::uint64_t h);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace zsalign
