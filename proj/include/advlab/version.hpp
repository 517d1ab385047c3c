#pragma once

namespace advlab {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace advlab
