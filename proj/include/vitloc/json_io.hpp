#pragma once

#include <string>

#include "json.hpp"

#include "vitloc/dam.hpp"
#include "vitloc/experiments.hpp"
#include "vitloc/synthgen.hpp"
#include "vitloc/train.hpp"
#include "vitloc/vit.hpp"

namespace vitloc {

// Strict JSON bindings for run configs and manifests: absent keys take the
// documented defaults, unknown keys are ConfigErrors, and emitted documents
// are deterministic.

std::string to_string(Pooling p);
std::string to_string(Merge m);
std::string to_string(DropoutGranularity g);
std::string to_string(OptimizerKind k);

nlohmann::json vit_config_to_json(const VitConfig& cfg);     // full, checkpoint form
nlohmann::json dam_config_to_json(const DamConfig& cfg);
nlohmann::json train_config_to_json(const TrainConfig& cfg);

/// Checkpoint-form config: full head_dims and num_classes are explicit.
VitConfig parse_vit_config_full(const nlohmann::json& j);

/// User-config form: `head_hidden_dims` (default [128]) instead of
/// head_dims/num_classes, which are resolved from the data at training time.
/// `image_size: 0` means "smallest multiple of patch_size that fits the AP
/// count".
VitConfig parse_vit_config_user(const nlohmann::json& j);

DamConfig parse_dam_config(const nlohmann::json& j);
TrainConfig parse_train_config(const nlohmann::json& j);
GenConfig parse_gen_config(const nlohmann::json& j);
SweepGrid parse_sweep_grid(const nlohmann::json& j);

/// Fill image_size = 0 ("auto") with the smallest patch-size multiple that
/// holds `ap_count` pixels.
VitConfig resolve_image_size(VitConfig cfg, std::size_t ap_count);

}  // namespace vitloc
