#pragma once

#include <cstdint>
#include <string>

namespace stva {

// 64-bit FNV-1a. Stable across platforms; used for input digests in run
// manifests and for pattern hashes in parameter snapshots.
std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ull);

std::uint64_t digest_file(const std::string& path);

std::string digest_hex(std::uint64_t h);

} // namespace stva
