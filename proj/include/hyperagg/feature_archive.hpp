#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hyperagg/feature_stack.hpp"

// DHFA: flat little-endian container for one FeatureStack.
//
//   "DHFA" | u32 version=1 | u8 direction | u8 conditional | u16 reserved=0
//   | u32 L | u32 S | u32 slot_timesteps[S]
//   | L·S records, l-major: u16 l, u16 s, u32 C, u32 H, u32 W, f32 payload[C·H·W]
//   | u32 meta_len | meta bytes ("key=value\n" lines, UTF-8)
//
// Payloads are stored as f32 and widened to f64 on load.
namespace hyperagg::archive {

inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::size_t kFixedHeaderBytes = 20;
inline constexpr std::size_t kRecordHeaderBytes = 16;

std::vector<std::uint8_t> encode(const FeatureStack& stack);
FeatureStack decode(const std::vector<std::uint8_t>& bytes);

void write_archive(const FeatureStack& stack, const std::filesystem::path& path);
FeatureStack read_archive(const std::filesystem::path& path);

std::string encode_meta(const std::map<std::string, std::string>& meta);

// Rounds every map value to f32 precision, i.e. what a write/read cycle keeps.
void quantize_to_storage(FeatureStack& stack);

}  // namespace hyperagg::archive
