#pragma once

namespace proprio {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace proprio
