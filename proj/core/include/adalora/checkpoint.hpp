#pragma once

#include <string>

#include "adalora/adapters.hpp"

namespace adalora {

/// Adapter checkpoint: a single self-describing JSON document holding, per
/// adapter, matrix_id, kind, shapes, and the factor/mask arrays flat. The
/// layout is stable across versions (see README for the schema).
std::string checkpoint_to_json(const ToyModel& model);
void save_checkpoint(const ToyModel& model, const std::string& path);

/// Restores adapter state onto a model with matching architecture; frozen
/// weights are not stored and stay as constructed.
void load_checkpoint(ToyModel& model, const std::string& path);
void load_checkpoint_from_json(ToyModel& model, const std::string& json_text);

} // namespace adalora
