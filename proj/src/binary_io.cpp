// SPDX-License-Identifier: Apache-2.0
#include "log3d/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace log3d {
namespace {

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>(v & 0xffu));
    v = static_cast<U>(v >> 8);
  }
}

template <typename U>
U get_le(const char* p) {
  U v = 0;
  for (std::size_t i = sizeof(U); i-- > 0;)
    v = static_cast<U>((v << 8) | static_cast<unsigned char>(p[i]));
  return v;
}

}  // namespace

void BinaryWriter::bytes(std::string_view data) { buf_.append(data); }
void BinaryWriter::u32(std::uint32_t v) { put_le(buf_, v); }
void BinaryWriter::u64(std::uint64_t v) { put_le(buf_, v); }
void BinaryWriter::f32(float v) { put_le(buf_, std::bit_cast<std::uint32_t>(v)); }
void BinaryWriter::f64(double v) { put_le(buf_, std::bit_cast<std::uint64_t>(v)); }
void BinaryWriter::save(const std::filesystem::path& path) const { write_file(path, buf_); }

BinaryReader BinaryReader::open(const std::filesystem::path& path) {
  return BinaryReader(read_file(path));
}

void BinaryReader::need(std::size_t n) const {
  if (buf_.size() - pos_ < n) throw IoError("unexpected end of binary data");
}

std::string BinaryReader::bytes(std::size_t n) {
  need(n);
  std::string out = buf_.substr(pos_, n);
  pos_ += n;
  return out;
}

void BinaryReader::expect_magic(std::string_view tag) {
  const std::string got = bytes(tag.size());
  if (got != tag) throw IoError("bad magic: expected '" + std::string(tag) + "'");
}

std::uint32_t BinaryReader::u32() {
  need(4);
  const auto v = get_le<std::uint32_t>(buf_.data() + pos_);
  pos_ += 4;
  return v;
}

std::uint64_t BinaryReader::u64() {
  need(8);
  const auto v = get_le<std::uint64_t>(buf_.data() + pos_);
  pos_ += 8;
  return v;
}

float BinaryReader::f32() { return std::bit_cast<float>(u32()); }
double BinaryReader::f64() { return std::bit_cast<double>(u64()); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file(const std::filesystem::path& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace log3d
