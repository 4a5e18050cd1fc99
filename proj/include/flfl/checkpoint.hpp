#pragma once

#include <string>

#include "flfl/nn.hpp"

namespace flfl {

// Checkpoint file: header line `flfl-params v1 <param_count>` followed by
// little-endian 64-bit floats, then a `flfl-bnstats v1` block with per-layer
// sizes and mean/var payloads.
void save_checkpoint(const std::string& path, const ParamVector& params,
                     const BnStats& bn);

struct Checkpoint {
    ParamVector params;
    BnStats bn;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace flfl
