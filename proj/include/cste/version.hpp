#pragma once

namespace cste {

inline constexpr const char* kVersion = "1.0.0";

}  // namespace cste
