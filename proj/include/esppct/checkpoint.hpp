#pragma once

// Binary checkpoint: the 8 magic bytes "ESPPCT01", a little-endian u32 header
// length, a UTF-8 JSON header and then little-endian f64 payloads in header
// order. The header lists {name, shape: [rows, cols], offset} per parameter
// (offset counted in scalars) plus any caller-supplied metadata under "meta".

#include <filesystem>
#include <string>

#include "esppct/numerics.hpp"
#include "json.hpp"

namespace esppct {

inline constexpr char kCheckpointMagic[8] = {'E', 'S', 'P', 'P', 'C', 'T', '0', '1'};

struct Checkpoint {
  ParamStore params;
  nlohmann::json meta;
};

std::string encode_checkpoint(const ParamStore& params, const nlohmann::json& meta = {});
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source = "<memory>");

void write_checkpoint(const std::filesystem::path& path, const ParamStore& params,
                      const nlohmann::json& meta = {});
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Number of f64 scalars in an encoded checkpoint's payload.
std::size_t checkpoint_scalar_count(const std::string& bytes);

}  // namespace esppct
