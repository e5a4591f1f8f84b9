#include "waterformer/keyvalue.hpp"

#include <charconv>
#include <sstream>

#include "waterformer/errors.hpp"

namespace waterformer::kv {
namespace {

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
  throw ConfigError("invalid value '" + std::string(value) + "' for " + std::string(key) + ": expected " + expected);
}

template <typename N>
N parse_number(std::string_view key, std::string_view value, const char* expected) {
  const std::string t = trim(value);
  N out{};
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) bad_value(key, value, expected);
  return out;
}

}  // namespace

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<Entry> parse(std::string_view text, std::string_view source) {
  std::vector<Entry> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(std::string(source) + " line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    Entry e{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), line_no};
    if (e.key.empty()) throw ConfigError(std::string(source) + " line " + std::to_string(line_no) + ": empty key");
    out.push_back(std::move(e));
  }
  return out;
}

int to_int(std::string_view key, std::string_view value) { return parse_number<int>(key, value, "an integer"); }

std::int64_t to_int64(std::string_view key, std::string_view value) {
  return parse_number<std::int64_t>(key, value, "an integer");
}

std::uint64_t to_uint64(std::string_view key, std::string_view value) {
  return parse_number<std::uint64_t>(key, value, "a non-negative integer");
}

double to_double(std::string_view key, std::string_view value) {
  return parse_number<double>(key, value, "a number");
}

bool to_bool(std::string_view key, std::string_view value) {
  const std::string t = trim(value);
  if (t == "true" || t == "1" || t == "on" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "off" || t == "no") return false;
  bad_value(key, value, "true or false");
}

std::vector<int> to_ints(std::string_view key, std::string_view value, std::size_t count) {
  std::string t(value);
  for (char& ch : t)
    if (ch == ',') ch = ' ';
  std::istringstream in(t);
  std::vector<int> out;
  std::string tok;
  while (in >> tok) out.push_back(to_int(key, tok));
  if (out.size() != count) {
    throw ConfigError("invalid value '" + std::string(value) + "' for " + std::string(key) + ": expected " +
                      std::to_string(count) + " integers");
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace waterformer::kv
