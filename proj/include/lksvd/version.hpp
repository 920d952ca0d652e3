#pragma once

namespace lksvd {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace lksvd
