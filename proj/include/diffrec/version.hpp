#pragma once

namespace diffrec {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace diffrec
