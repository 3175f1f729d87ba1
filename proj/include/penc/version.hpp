#pragma once

namespace penc {

inline constexpr const char* kLibraryVersion = "1.0.0";

} // namespace penc
