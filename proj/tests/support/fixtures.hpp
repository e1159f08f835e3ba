#pragma once

#include <torch/torch.h>

#include <vector>

#include "polyloop/dataset.hpp"
#include "polyloop/model.hpp"
#include "polyloop/synth.hpp"

namespace fixture {

inline polyloop::data::CropSpec spec_for(const polyloop::nn::ModelConfig& c) {
  return {c.crop_size, c.grid, c.fine_grid, 0.15};
}

inline std::vector<polyloop::data::InstanceSample> samples(const polyloop::nn::ModelConfig& c, int n,
                                                           std::uint64_t seed,
                                                           const std::string& preset = "source") {
  const auto recs = polyloop::data::synth_generate(polyloop::data::synth_preset(preset, seed), n);
  return polyloop::data::extract_all(recs, spec_for(c));
}

inline polyloop::nn::PolygonModel tiny_model(std::uint64_t seed = 7) {
  torch::manual_seed(seed);
  polyloop::nn::PolygonModel m(polyloop::nn::model_preset("tiny"));
  m->eval();
  return m;
}

}  // namespace fixture
