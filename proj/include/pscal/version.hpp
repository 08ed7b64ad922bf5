#pragma once

namespace pscal {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace pscal
