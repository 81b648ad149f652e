#pragma once

#include <string>

#include "core/tensor.hpp"

namespace vton::npy {

// Minimal NPY (format version 1.0) I/O for little-endian float64 arrays.
// Good enough for dataset scenes, checkpoints, and emitted videos.
void save(const std::string& path, const Tensor& t);
Tensor load(const std::string& path);

// Byte-level helpers used for content hashing of artifacts.
uint64_t fnv1a_file(const std::string& path);
uint64_t fnv1a_bytes(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull);

}  // namespace vton::npy
