// Copyright (c) 2026 gifnet-cpp authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "gifnet/network.hpp"
#include "gifnet/trainer.hpp"

namespace gifnet {

/// Run settings assembled from an optional key=value file overlaid by
/// command-line flags (flags win).
struct RunConfig {
  ArchConfig arch;
  TrainConfig train;
};

/// Applies one schema assignment (e.g. "train.steps", "42"). Unknown keys
/// and unparsable values raise std::invalid_argument.
void apply_config_entry(RunConfig& rc, const std::string& key,
                        const std::string& value);

/// Parses a config file: one `key = value` per line, `#` comments, blank
/// lines ignored. Every key must belong to the documented schema.
RunConfig parse_config_file(const std::string& path);

/// The accepted keys with their value forms, for --help output.
std::string config_schema_text();

}  // namespace gifnet
