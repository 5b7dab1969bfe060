#pragma once

namespace hesspcl {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace hesspcl
