#pragma once

namespace zsalign {

inline constexpr const char* kEngineVersion = "0.1.0";

}  // namespace zsalign
