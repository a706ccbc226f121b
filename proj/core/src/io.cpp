#include "cforge/io.hpp"

#include <array>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "cforge/error.hpp"

namespace cforge {

std::string format_double(double value) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc()) throw IoError("cannot format floating-point value");
  return std::string(buf.data(), end);
}

double parse_double(std::string_view token) {
  double value = 0.0;
  const char* first = token.data();
  const char* last = token.data() + token.size();
  if (!token.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw IoError("malformed number '" + std::string(token) + "'");
  }
  return value;
}

long long parse_int(std::string_view token) {
  long long value = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw IoError("malformed integer '" + std::string(token) + "'");
  }
  return value;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw IoError("short write to " + path.string());
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kHex[h & 0xf];
    h >>= 4;
  }
  return out;
}

std::string hash_file(const std::filesystem::path& path) { return fnv1a_hex(read_text_file(path)); }

void Tokenizer::skip_space() {
  while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
}

bool Tokenizer::done() {
  skip_space();
  return pos_ >= text_.size();
}

std::string_view Tokenizer::next() {
  skip_space();
  if (pos_ >= text_.size()) throw IoError("unexpected end of document");
  const std::size_t start = pos_;
  while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  return text_.substr(start, pos_ - start);
}

void Tokenizer::expect(std::string_view keyword) {
  auto tok = next();
  if (tok != keyword) {
    throw IoError("expected '" + std::string(keyword) + "' but found '" + std::string(tok) + "'");
  }
}

}  // namespace cforge
