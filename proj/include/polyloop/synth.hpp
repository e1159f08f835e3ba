#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "polyloop/dataset.hpp"

namespace polyloop::data {

enum class ShapeFamily { kPolygon, kRectangle, kStar, kEllipse, kBlob };

std::string to_string(ShapeFamily f);
ShapeFamily family_from_string(const std::string& s);

struct SynthConfig {
  std::vector<ShapeFamily> families{ShapeFamily::kPolygon};
  int min_vertices = 4;        // polygon family
  int max_vertices = 7;
  double min_radius = 0.7;     // polygon family, relative to the outer radius 1
  double occluder_prob = 0.0;
  double distractor_prob = 0.5;
  double noise_sigma = 6.0;    // per-pixel gaussian noise, 8-bit units
  double object_contrast = 150.0;  // min L1 RGB distance between object and background
  bool grayscale = false;
  int image_size = 128;
  double min_object = 40.0;    // object extent range, pixels
  double max_object = 84.0;
  std::string preset = "custom";
  std::uint64_t seed = 1;
  Split split = Split::kTrain;
};

// Named configurations used by the training and adaptation pipelines:
//   "source"  - concave 5-12 gons and rectangles, 40% occluded (the training domain)
//   "shift"   - low-contrast grayscale ellipses (the new domain for online fine-tuning)
//   "detail"  - stars and blobs with sub-cell structure (GGNN upscaling)
//   "mixed"   - all families, with occluders
SynthConfig synth_preset(const std::string& name, std::uint64_t seed);

// A generated instance plus the rendered visibility alpha of the object
// (image_size x image_size, row-major, 1 = visible object pixel).
struct SynthInstance {
  InstanceRecord record;
  std::vector<std::uint8_t> alpha;
};

// Deterministic for a given config (including its seed).
std::vector<SynthInstance> synth_generate_full(const SynthConfig& cfg, int n);
std::vector<InstanceRecord> synth_generate(const SynthConfig& cfg, int n);

// Writes images as PPM under `dir/images` and a manifest `dir/<name>.jsonl`.
std::filesystem::path write_dataset(const std::vector<InstanceRecord>& records,
                                    const std::filesystem::path& dir,
                                    const std::string& name);

}  // namespace polyloop::data
