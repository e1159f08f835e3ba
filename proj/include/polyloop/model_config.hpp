#pragma once

#include <string>
#include <vector>

#include "json.hpp"

namespace polyloop::nn {

struct ModelConfig {
  std::string preset = "desk";
  int grid = 28;          // D
  int crop_size = 112;
  int fine_grid = 112;    // D', resolution of the GGNN feature grid
  int stem_channels = 16;
  std::vector<int> stage_channels{32, 64, 64, 64};
  std::vector<int> stage_strides{2, 2, 1, 1};
  std::vector<int> stage_dilations{1, 1, 1, 2};
  int blocks_per_stage = 1;
  int tap_channels = 16;      // each skip tap is projected to this width
  int skip_channels = 32;     // C_s
  int lstm1_channels = 32;
  int lstm2_channels = 16;
  int lstm_kernel = 3;
  // Adds (x - x_v, y - y_v) / D planes for the previous, second previous and
  // first vertex to the decoder input.
  bool vertex_offsets = true;
  int attention_channels = 32;
  int first_vertex_hidden = 16;
  int t_max = 70;

  // Channels of EncoderFeatures::ggnn_grid (high-resolution tap + upsampled fused skip).
  int ggnn_channels() const;
  // Index into [stem, stage0, stage1, ...] of the feature map at fine_grid resolution.
  int fine_tap() const;
  // Spatial size of the stem output and each stage output.
  std::vector<int> resolutions() const;

  void validate() const;
};

// "full": 224 crop, strides (2,2,2,1), ConvLSTM (64,16), 112x112x256 GGNN grid.
// "desk": 112 crop scaled down for a single CPU core.
// "tiny": D=8, minimal widths; used for gradient checks and smoke tests.
ModelConfig model_preset(const std::string& name);

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace polyloop::nn
