#pragma once

namespace bialign {
inline constexpr const char* kToolVersion = "0.1.0";
}
