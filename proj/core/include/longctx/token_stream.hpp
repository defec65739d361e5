#pragma once

// Pre-tokenized id streams: "TOKS", u32 version (1), u64 count, then count
// u32 ids, all little-endian.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace longctx {

inline constexpr std::uint32_t kTokenStreamVersion = 1;

std::vector<std::uint32_t> read_token_stream(const std::filesystem::path& path);
void write_token_stream(const std::filesystem::path& path,
                        std::span<const std::uint32_t> tokens);

// FNV-1a over the little-endian id bytes; used to identify calibration data.
std::uint64_t token_hash(std::span<const std::uint32_t> tokens);

}  // namespace longctx
