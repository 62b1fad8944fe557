#pragma once

#include "fasp/model.hpp"

#include <filesystem>

namespace fasp {

// On-disk layout: <dir>/manifest.json describes the architecture and a
// tensor table (name -> dtype/shape/offset/length); <dir>/tensors.bin holds
// raw little-endian f32 row-major data, each tensor 64-byte aligned.
// Round-tripping a model through save/load is bit-exact.
void save_checkpoint(const decoder_model& model, const std::filesystem::path& dir);
decoder_model load_checkpoint(const std::filesystem::path& dir);

}  // namespace fasp
