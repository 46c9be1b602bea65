#pragma once

#include <cstdint>
#include <string>

#include "drivesim/policy.hpp"

// Binary parameter checkpoints. Layout (little-endian):
//   8 bytes   magic "DSIMCKPT"
//   u32       version (currently 1)
//   u32       entry count
//   per entry u32 name length, name bytes, u32 rank, rank * i32 dims,
//             then the elements as raw doubles (row-major)
//   u64       FNV-1a hash of every byte between the header and the hash
// Loading verifies the magic, the version and the hash and throws
// std::runtime_error on any mismatch or truncation.
namespace drivesim::ckpt {

inline constexpr std::uint32_t kVersion = 1;

// Incremental FNV-1a; pass the previous result to continue a running hash.
std::uint64_t fnv1a(const void* data, std::size_t len,
                    std::uint64_t h = 14695981039346656037ULL);

// Hash of the serialized body (names, shapes and values); equal stores hash
// equally regardless of where they were saved.
std::uint64_t param_hash(const policy::ParamStore& store);

void save_params(const policy::ParamStore& store, const std::string& path);

// Reads a checkpoint into a fresh store (entries in file order).
policy::ParamStore read_params(const std::string& path);

// Reads a checkpoint into an existing store; entry names and shapes must
// match the store exactly, in order.
void load_params(policy::ParamStore& store, const std::string& path);

}  // namespace drivesim::ckpt
