#pragma once

#include <string>

#include "regdrop/model.hpp"

namespace regdrop {

// A checkpoint is a directory with manifest.json (format, version, model
// config, one entry per named tensor with shape and extent) and params.bin
// (all tensors as little-endian float64, in manifest order).
void save_checkpoint(const VlmModel& model, const std::string& directory);
VlmModel load_checkpoint(const std::string& directory);

// Exact manifest bytes save_checkpoint writes for `model`.
std::string manifest_text(const VlmModel& model);

}  // namespace regdrop
