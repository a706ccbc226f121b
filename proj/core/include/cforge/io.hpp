#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace cforge {

// Shortest decimal representation that round-trips to the same double.
std::string format_double(double value);

// Parses a complete token as a double; throws IoError otherwise.
double parse_double(std::string_view token);
long long parse_int(std::string_view token);

std::string read_text_file(const std::filesystem::path& path);

// Writes atomically enough for our purposes: parent directories are created.
void write_text_file(const std::filesystem::path& path, std::string_view contents);

// 64-bit FNV-1a, rendered as 16 lowercase hex digits. Used to tie artifacts
// to the upstream artifacts they were produced from.
std::string fnv1a_hex(std::string_view bytes);
std::string hash_file(const std::filesystem::path& path);

// Whitespace tokenizer over an in-memory document.
class Tokenizer {
 public:
  explicit Tokenizer(std::string_view text) : text_(text) {}

  bool done();
  std::string_view next();
  double next_double() { return parse_double(next()); }
  long long next_int() { return parse_int(next()); }
  // Consumes the next token and throws IoError unless it equals `keyword`.
  void expect(std::string_view keyword);

 private:
  void skip_space();

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace cforge
