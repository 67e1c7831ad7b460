#include "pointseg/common.hpp"

#include <iostream>

namespace pointseg {

namespace {
bool g_quiet = false;
}

void set_log_quiet(bool quiet) { g_quiet = quiet; }

void log_warn(const std::string& msg) {
  if (!g_quiet) std::cerr << "[warn] " << msg << "\n";
}

void log_info(const std::string& msg) {
  if (!g_quiet) std::cerr << "[info] " << msg << "\n";
}

}  // namespace pointseg
