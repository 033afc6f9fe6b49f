#pragma once

#include <cstdio>
#include <string>

namespace mbch {

/// Shortest round-trippable decimal form of a double. Every file the toolkit
/// writes goes through this, which is what makes reruns byte-identical.
inline std::string format_g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace mbch
