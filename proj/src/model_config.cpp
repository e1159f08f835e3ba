#include "polyloop/model_config.hpp"

#include "polyloop/errors.hpp"

namespace polyloop::nn {

std::vector<int> ModelConfig::resolutions() const {
  std::vector<int> r{crop_size};
  int s = crop_size;
  for (int stride : stage_strides) {
    s = (s + stride - 1) / stride;
    r.push_back(s);
  }
  return r;
}

int ModelConfig::fine_tap() const {
  const auto r = resolutions();
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (r[i] == fine_grid) return static_cast<int>(i);
  }
  throw Error("no encoder feature map at fine_grid resolution " + std::to_string(fine_grid));
}

int ModelConfig::ggnn_channels() const {
  const int tap = fine_tap();
  const int c = tap == 0 ? stem_channels : stage_channels[static_cast<std::size_t>(tap - 1)];
  return c + skip_channels;
}

void ModelConfig::validate() const {
  if (stage_channels.empty() || stage_channels.size() != stage_strides.size() ||
      stage_channels.size() != stage_dilations.size()) {
    throw Error("model config: stage channel/stride/dilation lists must have equal, nonzero length");
  }
  if (t_max < 3) throw Error("model config: t_max must be >= 3");
  if (resolutions().back() != grid) {
    throw Error("model config: deepest stage resolution " + std::to_string(resolutions().back()) +
                " != grid " + std::to_string(grid));
  }
  fine_tap();
}

ModelConfig model_preset(const std::string& name) {
  ModelConfig c;
  c.preset = name;
  if (name == "desk") return c;
  if (name == "full") {
    c.crop_size = 224;
    c.stem_channels = 64;
    c.stage_channels = {128, 256, 512, 512};
    c.stage_strides = {2, 2, 2, 1};
    c.stage_dilations = {1, 1, 1, 2};
    c.blocks_per_stage = 2;
    c.tap_channels = 64;
    c.skip_channels = 128;
    c.lstm1_channels = 64;
    c.lstm2_channels = 16;
    c.attention_channels = 128;
    c.first_vertex_hidden = 32;
    c.vertex_offsets = false;
    return c;
  }
  if (name == "tiny") {
    c.grid = 8;
    c.crop_size = 16;
    c.fine_grid = 16;
    c.stem_channels = 3;
    c.stage_channels = {4, 4};
    c.stage_strides = {2, 1};
    c.stage_dilations = {1, 2};
    c.tap_channels = 2;
    c.skip_channels = 3;
    c.lstm1_channels = 2;
    c.lstm2_channels = 2;
    c.attention_channels = 2;
    c.first_vertex_hidden = 2;
    c.t_max = 12;
    return c;
  }
  throw Error("unknown model preset '" + name + "'");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"preset", c.preset},
          {"grid", c.grid},
          {"crop_size", c.crop_size},
          {"fine_grid", c.fine_grid},
          {"stem_channels", c.stem_channels},
          {"stage_channels", c.stage_channels},
          {"stage_strides", c.stage_strides},
          {"stage_dilations", c.stage_dilations},
          {"blocks_per_stage", c.blocks_per_stage},
          {"tap_channels", c.tap_channels},
          {"skip_channels", c.skip_channels},
          {"lstm1_channels", c.lstm1_channels},
          {"lstm2_channels", c.lstm2_channels},
          {"lstm_kernel", c.lstm_kernel},
          {"vertex_offsets", c.vertex_offsets},
          {"attention_channels", c.attention_channels},
          {"first_vertex_hidden", c.first_vertex_hidden},
          {"t_max", c.t_max}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.preset = j.at("preset").get<std::string>();
  c.grid = j.at("grid");
  c.crop_size = j.at("crop_size");
  c.fine_grid = j.at("fine_grid");
  c.stem_channels = j.at("stem_channels");
  c.stage_channels = j.at("stage_channels").get<std::vector<int>>();
  c.stage_strides = j.at("stage_strides").get<std::vector<int>>();
  c.stage_dilations = j.at("stage_dilations").get<std::vector<int>>();
  c.blocks_per_stage = j.at("blocks_per_stage");
  c.tap_channels = j.at("tap_channels");
  c.skip_channels = j.at("skip_channels");
  c.lstm1_channels = j.at("lstm1_channels");
  c.lstm2_channels = j.at("lstm2_channels");
  c.lstm_kernel = j.at("lstm_kernel");
  c.vertex_offsets = j.value("vertex_offsets", false);
  c.attention_channels = j.at("attention_channels");
  c.first_vertex_hidden = j.at("first_vertex_hidden");
  c.t_max = j.at("t_max");
  c.validate();
  return c;
}

}  // namespace polyloop::nn
