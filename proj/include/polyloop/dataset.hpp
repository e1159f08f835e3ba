#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "polyloop/geometry.hpp"
#include "polyloop/image.hpp"

namespace polyloop::data {

enum class Split { kTrain, kVal, kTest };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

// One annotated object: its image, the annotator box and the visible-region
// ground-truth polygon in image pixel coordinates.
struct InstanceRecord {
  std::string id;
  std::string image_path;                    // relative to the manifest directory
  std::shared_ptr<const Image> image;        // inline pixels, loaded lazily otherwise
  geometry::BBox bbox;
  std::vector<geometry::Point2> gt_polygon;
  std::string category;
  Split split = Split::kTrain;
};

// Geometry of the model input and output grids.
struct CropSpec {
  int crop_size = 112;
  int grid_size = 28;    // D
  int fine_grid = 112;   // D'
  double enlarge = 0.15;
};

// Optional annotator-box noise: each side pushed out by U[lo, hi] of the
// side length before the standard enlargement.
struct BoxNoise {
  double lo = 0.0;
  double hi = 0.0;
  std::uint64_t seed = 0;

  bool enabled() const { return hi > 0.0; }
};

// A record prepared for the networks.
struct InstanceSample {
  std::string id;
  std::string category;
  Image crop;                          // crop_size x crop_size
  geometry::BBox crop_box;             // image region the crop covers
  geometry::PolygonSeq gt;             // D grid, simplified, clockwise
  geometry::PolygonSeq gt_fine;        // D' grid, simplified, clockwise
  geometry::BinaryMask gt_mask;        // rasterised gt
  geometry::BinaryMask gt_mask_fine;   // rasterised gt_fine
  std::vector<geometry::Point2> gt_crop;  // continuous GT in crop pixels
};

// Line-delimited JSON manifest. Throws ParseError naming the bad line.
std::vector<InstanceRecord> load_manifest(const std::filesystem::path& path);
void save_manifest(const std::vector<InstanceRecord>& records,
                   const std::filesystem::path& path);

// Reads the pixels of `record` (inline or from disk relative to `root`).
std::shared_ptr<const Image> resolve_image(const InstanceRecord& record,
                                           const std::filesystem::path& root = {});

// The crop region for a box: optional noise, then the fixed enlargement.
geometry::BBox crop_region(const geometry::BBox& bbox, int image_w, int image_h,
                           const CropSpec& spec, const BoxNoise& noise = {});

// Image pixel -> crop pixel and back for a given crop region.
geometry::Point2 image_to_crop(geometry::Point2 p, const geometry::BBox& region, int crop_size);
geometry::Point2 crop_to_image(geometry::Point2 p, const geometry::BBox& region, int crop_size);

// Continuous crop-space polygon to a simplified clockwise grid polygon.
// Returns nullopt when the result has fewer than 3 distinct vertices.
std::optional<geometry::PolygonSeq> quantize_polygon(std::span<const geometry::Point2> crop_poly,
                                                     int crop_size, int grid_size);

// Throws SkippedInstance when the GT degenerates after clipping.
InstanceSample extract_crop(const InstanceRecord& record, const CropSpec& spec,
                            const BoxNoise& noise = {},
                            const std::filesystem::path& root = {});

// Convenience: extract every record, dropping skipped ones.
std::vector<InstanceSample> extract_all(const std::vector<InstanceRecord>& records,
                                        const CropSpec& spec, const BoxNoise& noise = {},
                                        const std::filesystem::path& root = {});

}  // namespace polyloop::data
