#pragma once

#include <map>
#include <string>

#include "affseq/params.hpp"

namespace affseq {

// Checkpoint container: little-endian, magic "SQAF", version u32, entry
// count u32, then per entry: name length u32 + name bytes, dtype code u8
// (0 = f32), rank u8, dims u32 each, raw 32-bit real payload.
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const ad::ParamStore& store);
std::map<std::string, ad::Array> read_checkpoint(const std::string& path);

// Loads entries into an existing store; every entry must exist with a
// matching shape, and every store parameter must be present in the file.
void load_checkpoint(const std::string& path, ad::ParamStore& store);

}  // namespace affseq
