#include "fcis/kv.hpp"

#include <charconv>
#include <sstream>

#include "fcis/errors.hpp"

namespace fcis {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::pair<std::string, std::string>> parse_kv_lines(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected `key = value`, got `" +
                        line + "`");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    }
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

namespace {

template <typename T>
T parse_number(const std::string& value, const std::string& key) {
  const std::string v = trim(value);
  T out{};
  const char* first = v.data();
  const char* last = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last) {
    throw ConfigError("key `" + key + "`: cannot parse number from `" + value + "`");
  }
  return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& value, const std::string& key) {
  std::vector<T> out;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) out.push_back(parse_number<T>(item, key));
  if (out.empty()) throw ConfigError("key `" + key + "`: empty list");
  return out;
}

}  // namespace

std::vector<int> parse_int_list(const std::string& value, const std::string& key) {
  return parse_list<int>(value, key);
}

std::vector<double> parse_double_list(const std::string& value, const std::string& key) {
  return parse_list<double>(value, key);
}

int parse_int(const std::string& value, const std::string& key) {
  return parse_number<int>(value, key);
}

double parse_double(const std::string& value, const std::string& key) {
  return parse_number<double>(value, key);
}

bool parse_bool(const std::string& value, const std::string& key) {
  const std::string v = trim(value);
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("key `" + key + "`: expected a boolean, got `" + value + "`");
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

std::string format_int_list(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::string format_double_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += format_double(v[i]);
  }
  return out;
}

}  // namespace fcis
