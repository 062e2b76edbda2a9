#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace fairsinkhorn {

// FNV-1a, 64-bit. Used for config provenance hashes and checkpoint
// payload checksums; not a cryptographic hash.
std::uint64_t fnv1a64(const void* data, std::size_t size);

// Fixed-width lowercase hex rendering of a hash.
std::string hex_hash(std::uint64_t hash);

} // namespace fairsinkhorn
