#pragma once

#include <string>

#include "mrtlab/param_store.hpp"

namespace mrtlab {

// Versioned binary container for parameter snapshots.
//
// Layout (all integers little-endian):
//   magic "MRTL" | u32 version | u64 block count
//   per block: u64 name length | name bytes | u64 rank | u64 dim[rank]
//              | f64 payload (column-major)
//   trailer: u32 CRC32 over everything after the version field
//
// Rank-1 blocks carry one dim (length), rank-2 blocks rows then cols.
void save_params(const ParamStore& params, const std::string& path);

// Throws MissingArtifact if the file does not exist, ParseError on a
// malformed container, NumericFault on checksum mismatch or non-finite
// payload.
ParamStore load_params(const std::string& path);

}  // namespace mrtlab
