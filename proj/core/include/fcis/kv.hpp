#pragma once

#include <string>
#include <utility>
#include <vector>

namespace fcis {

std::string trim(const std::string& s);

// Plain `key = value` lines; '#' starts a comment, blank lines are skipped.
// Used both for config files and the checkpoint config block. Throws
// ConfigError on a non-comment line without '='.
std::vector<std::pair<std::string, std::string>> parse_kv_lines(const std::string& text);

// Comma-separated numeric lists ("16,32,64"); ConfigError names the key on
// a parse failure.
std::vector<int> parse_int_list(const std::string& value, const std::string& key);
std::vector<double> parse_double_list(const std::string& value, const std::string& key);
int parse_int(const std::string& value, const std::string& key);
double parse_double(const std::string& value, const std::string& key);
bool parse_bool(const std::string& value, const std::string& key);

std::string format_double(double v);  // shortest round-trip form
std::string format_int_list(const std::vector<int>& v);
std::string format_double_list(const std::vector<double>& v);

}  // namespace fcis
