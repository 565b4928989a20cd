#pragma once

namespace abrnet {

inline constexpr const char* kVersion = "v0.1.0";

}  // namespace abrnet
