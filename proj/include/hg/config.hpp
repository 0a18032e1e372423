#pragma once

#include <string>

#include "hg/model.hpp"

namespace hg {

/// TrainConfig <-> JSON with flat dotted keys, e.g. "backbone.layers".
/// The same schema backs CLI --config files, resolved-config dumps, and
/// checkpoint snapshots.
std::string config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const std::string& text);

/// Merges `overlay` keys into `base` (overlay wins), both flat JSON objects.
std::string merge_config_json(const std::string& base,
                              const std::string& overlay);

/// FNV-1a hex digest of a string; identifies resolved configs in CSV rows.
std::string config_hash(const std::string& text);

}  // namespace hg
