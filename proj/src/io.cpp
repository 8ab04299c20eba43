#include "zsalign/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "zsalign/numeric.hpp"

static_assert(std::endian::native == std::endian::little,
              "f32le blob I/O assumes a little-endian host");
static_assert(sizeof(float) == 4);

namespace zsalign {

std::vector<float> read_f32_blob(const std::filesystem::path& path,
                                 std::size_t expected_count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open blob: " + path.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  if (bytes != expected_count * sizeof(float)) {
    throw ValidationError("blob " + path.string() + ": expected " +
                          std::to_string(expected_count * sizeof(float)) +
                          " bytes, found " + std::to_string(bytes));
  }
  std::vector<float> out(expected_count);
  in.read(reinterpret_cast<char*>(out.data()),
          static_cast<std::streamsize>(bytes));
  if (!in) throw ValidationError("short read on blob: " + path.string());
  return out;
}

void write_f32_blob(const std::filesystem::path& path,
                    std::span<const float> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write blob: " + path.string());
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!out) throw std::runtime_error("short write on blob: " + path.string());
}

std::uint64_t fnv1a(std::span<const unsigned char> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file for checksum: " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    const auto n = in.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::string fnv1a_hex(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return s;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write file: " + path.string());
  out << text;
  if (!out) throw std::runtime_error("short write on file: " + path.string());
}

}  // namespace zsalign
