#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>

#include "json.hpp"

namespace polyloop::nn {

inline constexpr const char* kCheckpointFormat = "polyloop-ckpt-v1";

// Layout: the format tag and a newline, an 8-byte little-endian header
// length, a JSON header {format, kind, config, meta, tensors: [{name, dtype,
// shape, offset, bytes}]}, then the raw tensor bytes.
struct CheckpointHeader {
  std::string kind;         // "polygon_model", "evaluator", "ggnn"
  nlohmann::json config;
  nlohmann::json meta;      // free-form: training step, source checkpoint, ...
};

void save_checkpoint(const std::filesystem::path& path, const torch::nn::Module& module,
                     const CheckpointHeader& header);

// Reads only the header. Throws PrerequisiteMissing when the file does not
// exist and CheckpointError on a malformed file.
CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

// Copies every named parameter and buffer of `module` from the file. Names
// and shapes must match exactly. Returns the header.
CheckpointHeader load_checkpoint(const std::filesystem::path& path, torch::nn::Module& module,
                                 const std::string& expected_kind);

// Deep copy of parameters and buffers from `src` into `dst` (same architecture).
void copy_state(const torch::nn::Module& src, torch::nn::Module& dst);

}  // namespace polyloop::nn
