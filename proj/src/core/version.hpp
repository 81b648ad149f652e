#pragma once

namespace vton {

inline constexpr const char* kLibraryVersion = "0.1.0";
// Version tag written into every persisted artifact (datasets, checkpoints,
// run configs, metadata); loaders reject other versions.
inline constexpr const char* kFormatVersion = "1.0";

}  // namespace vton
