#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fcis/errors.hpp"

namespace regtest {

namespace fs = std::filesystem;

// Fresh directory under the system temp root, removed on scope exit.
struct TempDir {
  fs::path path;

  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("fcis_reg_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string str(const std::string& rel = "") const {
    return rel.empty() ? path.string() : (path / rel).string();
  }
};

struct CliRun {
  int exit_code = -1;
  std::string out;  // stdout and stderr interleaved
};

// Runs the installed command line binary; FCIS_CLI_PATH is baked in by the
// build so the test suite exercises the same artifact a user would.
inline CliRun run_cli(const std::string& args, const TempDir& dir) {
  const std::string capture = dir.str("cli_capture.txt");
  const std::string cmd = std::string(FCIS_CLI_PATH) + " " + args + " > " + capture + " 2>&1";
  const int raw = std::system(cmd.c_str());
  CliRun r;
  r.exit_code = (raw == -1) ? -1 : WEXITSTATUS(raw);
  std::ifstream in(capture);
  std::ostringstream text;
  text << in.rdbuf();
  r.out = text.str();
  std::remove(capture.c_str());
  return r;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw fcis::DataError("regression helper cannot read " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return text.str();
}

inline int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

}  // namespace regtest
