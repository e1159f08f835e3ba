#include "polyloop/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include "json.hpp"

#include "polyloop/errors.hpp"

namespace polyloop::data {

using geometry::BBox;
using geometry::GridVertex;
using geometry::Point2;
using geometry::PolygonSeq;
using json = nlohmann::json;

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw Error("unknown split '" + s + "'");
}

namespace {

InstanceRecord parse_record(const std::string& line, std::size_t lineno) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError(lineno, std::string("invalid JSON: ") + e.what());
  }
  try {
    InstanceRecord r;
    r.id = j.at("id").get<std::string>();
    r.image_path = j.at("image").get<std::string>();
    const auto& b = j.at("bbox");
    if (!b.is_array() || b.size() != 4) throw ParseError(lineno, "bbox must have 4 numbers");
    r.bbox = BBox{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
    if (!r.bbox.valid()) throw ParseError(lineno, "bbox has non-positive extent");
    for (const auto& p : j.at("polygon")) {
      if (!p.is_array() || p.size() != 2) throw ParseError(lineno, "polygon points are [x, y]");
      r.gt_polygon.push_back({p[0].get<double>(), p[1].get<double>()});
    }
    if (r.gt_polygon.size() < 3) {
      throw ParseError(lineno, "polygon has " + std::to_string(r.gt_polygon.size()) +
                                   " points, need at least 3");
    }
    r.category = j.value("category", std::string("object"));
    r.split = split_from_string(j.value("split", std::string("train")));
    return r;
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw ParseError(lineno, e.what());
  }
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

std::vector<InstanceRecord> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest " + path.string());
  std::vector<InstanceRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_record(line, lineno));
  }
  return out;
}

void save_manifest(const std::vector<InstanceRecord>& records,
                   const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write manifest " + path.string());
  for (const auto& r : records) {
    json poly = json::array();
    for (const auto& p : r.gt_polygon) poly.push_back({p.x, p.y});
    json j = {{"id", r.id},
              {"image", r.image_path},
              {"bbox", {r.bbox.x0, r.bbox.y0, r.bbox.x1, r.bbox.y1}},
              {"polygon", poly},
              {"category", r.category},
              {"split", to_string(r.split)}};
    out << j.dump() << "\n";
  }
}

std::shared_ptr<const Image> resolve_image(const InstanceRecord& record,
                                           const std::filesystem::path& root) {
  if (record.image) return record.image;
  std::filesystem::path p = record.image_path;
  if (p.is_relative() && !root.empty()) p = root / p;
  return std::make_shared<const Image>(read_ppm(p));
}

BBox crop_region(const BBox& bbox, int image_w, int image_h, const CropSpec& spec,
                 const BoxNoise& noise) {
  BBox b = bbox;
  if (noise.enabled()) {
    std::mt19937_64 rng(noise.seed);
    b = geometry::perturb_box(b, noise.lo, noise.hi, image_w, image_h, rng);
  }
  return geometry::enlarge_box(b, spec.enlarge, image_w, image_h);
}

Point2 image_to_crop(Point2 p, const BBox& region, int crop_size) {
  return {(p.x - region.x0) * crop_size / region.width(),
          (p.y - region.y0) * crop_size / region.height()};
}

Point2 crop_to_image(Point2 p, const BBox& region, int crop_size) {
  return {region.x0 + p.x * region.width() / crop_size,
          region.y0 + p.y * region.height() / crop_size};
}

std::optional<PolygonSeq> quantize_polygon(std::span<const Point2> crop_poly, int crop_size,
                                           int grid_size) {
  PolygonSeq poly{{}, grid_size, true};
  const double s = static_cast<double>(grid_size) / crop_size;
  for (const auto& p : crop_poly) {
    const int x = std::clamp(static_cast<int>(std::floor(p.x * s)), 0, grid_size - 1);
    const int y = std::clamp(static_cast<int>(std::floor(p.y * s)), 0, grid_size - 1);
    poly.vertices.push_back({x, y});
  }
  poly = geometry::simplify_collinear(poly);
  if (geometry::distinct_vertex_count(poly) < 3) return std::nullopt;
  poly = geometry::canonical_orientation(poly);
  // Deterministic start: top-most, then left-most vertex.
  const auto it = std::min_element(poly.vertices.begin(), poly.vertices.end(),
                                   [](const GridVertex& a, const GridVertex& b) {
                                     return a.y != b.y ? a.y < b.y : a.x < b.x;
                                   });
  return geometry::rotate_start(
      poly, static_cast<std::size_t>(std::distance(poly.vertices.begin(), it)));
}

InstanceSample extract_crop(const InstanceRecord& record, const CropSpec& spec,
                            const BoxNoise& noise, const std::filesystem::path& root) {
  const auto image = resolve_image(record, root);
  BoxNoise seeded = noise;
  seeded.seed = noise.seed ^ fnv1a(record.id);
  const BBox region = crop_region(record.bbox, image->width, image->height, spec, seeded);

  std::vector<Point2> crop_poly;
  crop_poly.reserve(record.gt_polygon.size());
  for (const auto& p : record.gt_polygon) {
    crop_poly.push_back(image_to_crop(p, region, spec.crop_size));
  }
  const double cs = spec.crop_size;
  crop_poly = geometry::clip_to_rect(crop_poly, BBox{0.0, 0.0, cs, cs});
  if (crop_poly.size() < 3) throw SkippedInstance(record.id + ": polygon clipped away");

  auto gt = quantize_polygon(crop_poly, spec.crop_size, spec.grid_size);
  auto gt_fine = quantize_polygon(crop_poly, spec.crop_size, spec.fine_grid);
  if (!gt || !gt_fine) throw SkippedInstance(record.id + ": degenerate polygon at grid resolution");

  InstanceSample s;
  s.id = record.id;
  s.category = record.category;
  s.crop = crop_resize(*image, region, spec.crop_size);
  s.crop_box = region;
  s.gt = std::move(*gt);
  s.gt_fine = std::move(*gt_fine);
  s.gt_mask = geometry::rasterize_polygon(s.gt, spec.grid_size);
  s.gt_mask_fine = geometry::rasterize_polygon(s.gt_fine, spec.fine_grid);
  s.gt_crop = std::move(crop_poly);
  return s;
}

std::vector<InstanceSample> extract_all(const std::vector<InstanceRecord>& records,
                                        const CropSpec& spec, const BoxNoise& noise,
                                        const std::filesystem::path& root) {
  std::vector<InstanceSample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    try {
      out.push_back(extract_crop(r, spec, noise, root));
    } catch (const SkippedInstance&) {
    }
  }
  return out;
}

}  // namespace polyloop::data
