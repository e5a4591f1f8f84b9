#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

// Minimal "key = value" text format shared by config files and checkpoint
// headers. '#' starts a comment; blank lines are ignored.
namespace waterformer::kv {

struct Entry {
  std::string key;
  std::string value;
  int line = 0;
};

// Throws ConfigError naming `source` on a line without '='.
std::vector<Entry> parse(std::string_view text, std::string_view source);

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

// Value parsers; each throws ConfigError naming `key` on bad input.
int to_int(std::string_view key, std::string_view value);
std::int64_t to_int64(std::string_view key, std::string_view value);
std::uint64_t to_uint64(std::string_view key, std::string_view value);
double to_double(std::string_view key, std::string_view value);
bool to_bool(std::string_view key, std::string_view value);
// Whitespace- or comma-separated integers, exactly `count` of them.
std::vector<int> to_ints(std::string_view key, std::string_view value, std::size_t count);

template <std::size_t N>
std::array<int, N> to_int_array(std::string_view key, std::string_view value) {
  const auto v = to_ints(key, value, N);
  std::array<int, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = v[i];
  return out;
}

// Shortest representation that parses back to the same double.
std::string format_double(double v);

}  // namespace waterformer::kv
