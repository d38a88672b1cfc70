#pragma once

#include <string>

#include "metamix/net.hpp"

namespace metamix {

// ParamSet on disk: one line of JSON (layer names, shapes, endianness tag),
// a newline, then the raw 64-bit little-endian tensor payload in layer
// order, weights before bias. Round trips are bit-exact.
void save_checkpoint(const ParamSet& p, const std::string& path);

ParamSet load_checkpoint(const std::string& path);

}  // namespace metamix
