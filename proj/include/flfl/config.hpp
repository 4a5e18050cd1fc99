#pragma once

#include <string>

#include "flfl/orchestrator.hpp"

namespace flfl {

// Flat JSON object mirroring ExperimentConfig. Unknown keys are rejected;
// required keys (the synthetic-task shape) must be present:
//   num_classes, input_dim, samples_per_class, spread, num_labeled
// Everything else falls back to the defaults in ExperimentConfig.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config(const std::string& json_text, const std::string& origin);

// FLFL_SEED / FLFL_OUT, applied between the file and any CLI flags.
void apply_env_overrides(ExperimentConfig& cfg);

}  // namespace flfl
