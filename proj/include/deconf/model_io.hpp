#pragma once

#include <filesystem>
#include <string>

#include "deconf/trainers.hpp"

namespace deconf::io {

// JSON model file: method, network spec, flattened row-major weights, optional
// covariate head and adversary, config hash. Doubles are written in shortest
// round-trip form, so save -> load reproduces every parameter bit-for-bit.
std::string model_to_json(const train::TrainedModel& model);
train::TrainedModel model_from_json(const std::string& text);

void save_model(const train::TrainedModel& model, const std::filesystem::path& path);
train::TrainedModel load_model(const std::filesystem::path& path);

}  // namespace deconf::io
