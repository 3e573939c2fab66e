#pragma once

namespace bitsift {

inline constexpr const char* kCodeVersion = "0.1.0";

}  // namespace bitsift
