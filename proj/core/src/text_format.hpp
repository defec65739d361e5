#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "longctx/error.hpp"

namespace longctx::detail {

// Shortest "%.17g" form; round-trips through strtod.
inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

}  // namespace longctx::detail
