#include "defletter/util.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "defletter/error.hpp"
#include "defletter/log.hpp"

namespace defletter {

log::Level& log::threshold() {
  static Level level = Level::Info;
  return level;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  auto tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoFailure, "short write to " + path.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot rename into " + path.string() + ": " + ec.message());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  return {bytes.begin(), bytes.end()};
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

std::uint64_t ByteReader::get(int n) {
  if (remaining() < static_cast<size_t>(n)) throw Error(ErrorCode::CorruptDataset, "unexpected end of data");
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= std::uint64_t{data_[pos_ + static_cast<size_t>(i)]} << (8 * i);
  pos_ += static_cast<size_t>(n);
  return v;
}

std::span<const std::uint8_t> ByteReader::bytes(size_t n) {
  if (remaining() < n) throw Error(ErrorCode::CorruptDataset, "unexpected end of data");
  auto s = data_.subspan(pos_, n);
  pos_ += n;
  return s;
}

std::string ByteReader::str(size_t n) {
  auto s = bytes(n);
  return {s.begin(), s.end()};
}

}  // namespace defletter
