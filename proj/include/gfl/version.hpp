#pragma once

namespace gfl {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace gfl
