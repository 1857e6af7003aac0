#pragma once

namespace oodd {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace oodd
