#pragma once

#include <json.hpp>
#include <string>

#include "dexfit/biomech.hpp"
#include "dexfit/body_model.hpp"
#include "dexfit/priors.hpp"

namespace dexfit {

using json = nlohmann::json;

// All file schemas carry a schema_version field and are validated on load;
// malformed payloads raise ParseError.

json template_to_json(const SkeletonTemplate& tpl);
SkeletonTemplate template_from_json(const json& j);

json pose_to_json(const PoseParams& pose);
PoseParams pose_from_json(const json& j, const SkeletonTemplate& tpl);

json camera_to_json(const Camera& cam);
Camera camera_from_json(const json& j);

// ROM files store unsigned clinical degrees once per left/right pair; the
// loader derives both signed tables through the mirror rule, so the mirror
// invariant holds by construction.
json rom_to_json(const RomTable& rom);
RomTable rom_from_json(const json& j);

// Prior model container: config, named weight tensors, training metadata
// (seed, dataset hash, activation, loss curves). Doubles round-trip exactly.
json prior_to_json(const PriorModel& model);
PriorModel prior_from_json(const json& j);

json load_json_file(const std::string& path);
void save_json_file(const std::string& path, const json& j);

}  // namespace dexfit
