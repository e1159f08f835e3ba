#include "polyloop/synth.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include "polyloop/errors.hpp"

namespace polyloop::data {

using geometry::BBox;
using geometry::Point2;

std::string to_string(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::kPolygon: return "polygon";
    case ShapeFamily::kRectangle: return "rectangle";
    case ShapeFamily::kStar: return "star";
    case ShapeFamily::kEllipse: return "ellipse";
    case ShapeFamily::kBlob: return "blob";
  }
  return "polygon";
}

ShapeFamily family_from_string(const std::string& s) {
  for (auto f : {ShapeFamily::kPolygon, ShapeFamily::kRectangle, ShapeFamily::kStar,
                 ShapeFamily::kEllipse, ShapeFamily::kBlob}) {
    if (to_string(f) == s) return f;
  }
  throw Error("unknown shape family '" + s + "'");
}

SynthConfig synth_preset(const std::string& name, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.preset = name;
  cfg.seed = seed;
  if (name == "source") {
    cfg.families = {ShapeFamily::kPolygon, ShapeFamily::kPolygon, ShapeFamily::kRectangle};
    cfg.occluder_prob = 0.4;
    cfg.min_vertices = 5;
    cfg.max_vertices = 12;
    cfg.min_radius = 0.45;
    cfg.object_contrast = 100.0;
  } else if (name == "shift") {
    cfg.families = {ShapeFamily::kEllipse};
    cfg.grayscale = true;
    cfg.object_contrast = 50.0;
    cfg.noise_sigma = 18.0;
  } else if (name == "detail") {
    cfg.families = {ShapeFamily::kStar, ShapeFamily::kBlob};
  } else if (name == "mixed") {
    cfg.families = {ShapeFamily::kPolygon, ShapeFamily::kRectangle, ShapeFamily::kStar,
                    ShapeFamily::kEllipse, ShapeFamily::kBlob};
    cfg.occluder_prob = 0.3;
  } else {
    throw Error("unknown synth preset '" + name + "'");
  }
  return cfg;
}

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

std::vector<Point2> rotate(std::vector<Point2> pts, double theta) {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  for (auto& p : pts) p = {c * p.x - s * p.y, s * p.x + c * p.y};
  return pts;
}

// Unit-scale outline centred at the origin.
std::vector<Point2> unit_shape(ShapeFamily family, const SynthConfig& cfg, Rng& rng) {
  constexpr double kTau = 2.0 * std::numbers::pi;
  std::vector<Point2> pts;
  switch (family) {
    case ShapeFamily::kPolygon: {
      const int k = uniform_int(rng, cfg.min_vertices, cfg.max_vertices);
      const double base = uniform(rng, 0.0, kTau);
      for (int j = 0; j < k; ++j) {
        const double a = base + kTau * (j + uniform(rng, -0.25, 0.25)) / k;
        const double r = uniform(rng, cfg.min_radius, 1.0);
        pts.push_back({r * std::cos(a), r * std::sin(a)});
      }
      break;
    }
    case ShapeFamily::kRectangle: {
      const double aspect = uniform(rng, 0.45, 1.0);
      pts = {{-1.0, -aspect}, {1.0, -aspect}, {1.0, aspect}, {-1.0, aspect}};
      pts = rotate(pts, uniform(rng, 0.0, std::numbers::pi));
      break;
    }
    case ShapeFamily::kStar: {
      const int spikes = uniform_int(rng, 5, 7);
      const double inner = uniform(rng, 0.45, 0.65);
      const double base = uniform(rng, 0.0, kTau);
      for (int j = 0; j < 2 * spikes; ++j) {
        const double a = base + kTau * j / (2 * spikes);
        const double r = (j % 2 == 0) ? 1.0 : inner;
        pts.push_back({r * std::cos(a), r * std::sin(a)});
      }
      break;
    }
    case ShapeFamily::kEllipse: {
      const double minor = uniform(rng, 0.55, 1.0);
      const int k = 16;
      for (int j = 0; j < k; ++j) {
        const double a = kTau * j / k;
        pts.push_back({std::cos(a), minor * std::sin(a)});
      }
      pts = rotate(pts, uniform(rng, 0.0, std::numbers::pi));
      break;
    }
    case ShapeFamily::kBlob: {
      const int k = 36;
      double amp[10] = {};
      double phase[10] = {};
      for (int h = 2; h < 10; ++h) {
        amp[h] = h < 6 ? uniform(rng, 0.0, 0.12) : uniform(rng, 0.0, 0.05);
        phase[h] = uniform(rng, 0.0, kTau);
      }
      double rmax = 0.0;
      std::vector<double> radii(k);
      for (int j = 0; j < k; ++j) {
        const double a = kTau * j / k;
        double r = 1.0;
        for (int h = 2; h < 10; ++h) r += amp[h] * std::cos(h * a + phase[h]);
        radii[j] = r;
        rmax = std::max(rmax, r);
      }
      for (int j = 0; j < k; ++j) {
        const double a = kTau * j / k;
        pts.push_back({radii[j] / rmax * std::cos(a), radii[j] / rmax * std::sin(a)});
      }
      break;
    }
  }
  // Clockwise on screen (x right, y down) is positive shoelace area.
  if (geometry::signed_area(pts) < 0) std::reverse(pts.begin(), pts.end());
  return pts;
}

struct Colour {
  double r, g, b;
};

Colour random_colour(Rng& rng, bool gray) {
  if (gray) {
    const double v = uniform(rng, 30, 225);
    return {v, v, v};
  }
  return {uniform(rng, 30, 225), uniform(rng, 30, 225), uniform(rng, 30, 225)};
}

double colour_distance(const Colour& a, const Colour& b) {
  return std::abs(a.r - b.r) + std::abs(a.g - b.g) + std::abs(a.b - b.b);
}

Colour contrasting_colour(Rng& rng, const Colour& against, double min_distance, bool gray) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    Colour c = random_colour(rng, gray);
    if (colour_distance(c, against) >= min_distance) return c;
  }
  return {255.0 - against.r, 255.0 - against.g, 255.0 - against.b};
}

// Places a unit shape with extent `size` at a random location fully inside
// the image with a margin.
std::vector<Point2> place(const std::vector<Point2>& unit, double size, int image_size,
                          Rng& rng) {
  const double sy = uniform(rng, 0.75, 1.25);
  std::vector<Point2> pts;
  for (const auto& p : unit) pts.push_back({p.x * size / 2.0, p.y * size / 2.0 * sy});
  const BBox b = geometry::bounding_box(pts);
  const double margin = 3.0;
  const double lo_x = margin - b.x0;
  const double hi_x = image_size - margin - b.x1;
  const double lo_y = margin - b.y0;
  const double hi_y = image_size - margin - b.y1;
  const double ox = hi_x > lo_x ? uniform(rng, lo_x, hi_x) : 0.5 * (lo_x + hi_x);
  const double oy = hi_y > lo_y ? uniform(rng, lo_y, hi_y) : 0.5 * (lo_y + hi_y);
  for (auto& p : pts) p = {p.x + ox, p.y + oy};
  return pts;
}

void paint(Image& img, std::vector<std::uint8_t>* coverage, const std::vector<Point2>& poly,
           const Colour& c, double sigma, Rng& rng) {
  const BBox b = geometry::bounding_box(poly);
  const int x0 = std::max(0, static_cast<int>(std::floor(b.x0)));
  const int y0 = std::max(0, static_cast<int>(std::floor(b.y0)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(b.x1)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(b.y1)));
  std::normal_distribution<double> noise(0.0, sigma);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      if (!geometry::point_in_polygon({x + 0.5, y + 0.5}, poly)) continue;
      const double n = noise(rng);
      img.at(x, y, 0) = static_cast<std::uint8_t>(std::clamp(c.r + n, 0.0, 255.0));
      img.at(x, y, 1) = static_cast<std::uint8_t>(std::clamp(c.g + n, 0.0, 255.0));
      img.at(x, y, 2) = static_cast<std::uint8_t>(std::clamp(c.b + n, 0.0, 255.0));
      if (coverage) (*coverage)[static_cast<std::size_t>(y) * img.width + x] = 1;
    }
  }
}

SynthInstance generate_one(const SynthConfig& cfg, int index) {
  Rng rng(cfg.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(index) * 0x85EBCA6BULL +
          0x1234567ULL);
  const int w = cfg.image_size;
  Image img(w, w);

  // Background: a linear gradient plus noise.
  const Colour bg = random_colour(rng, cfg.grayscale);
  const double gx = uniform(rng, -0.3, 0.3);
  const double gy = uniform(rng, -0.3, 0.3);
  std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
  for (int y = 0; y < w; ++y) {
    for (int x = 0; x < w; ++x) {
      const double shade = gx * (x - w / 2.0) + gy * (y - w / 2.0);
      const double n = noise(rng);
      img.at(x, y, 0) = static_cast<std::uint8_t>(std::clamp(bg.r + shade + n, 0.0, 255.0));
      img.at(x, y, 1) = static_cast<std::uint8_t>(std::clamp(bg.g + shade + n, 0.0, 255.0));
      img.at(x, y, 2) = static_cast<std::uint8_t>(std::clamp(bg.b + shade + n, 0.0, 255.0));
    }
  }

  // Distractors go underneath the object so they never change its GT.
  if (uniform(rng, 0.0, 1.0) < cfg.distractor_prob) {
    const int count = uniform_int(rng, 1, 2);
    for (int d = 0; d < count; ++d) {
      const auto fam = static_cast<ShapeFamily>(uniform_int(rng, 0, 4));
      auto shape = place(unit_shape(fam, synth_preset("mixed", 0), rng), uniform(rng, 15, 40), w,
                         rng);
      paint(img, nullptr, shape, contrasting_colour(rng, bg, 60.0, cfg.grayscale), cfg.noise_sigma, rng);
    }
  }

  const ShapeFamily family =
      cfg.families[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(cfg.families.size()) - 1))];
  const auto object = place(unit_shape(family, cfg, rng),
                            uniform(rng, cfg.min_object, cfg.max_object), w, rng);
  std::vector<std::uint8_t> alpha(static_cast<std::size_t>(w) * w, 0);
  paint(img, &alpha, object, contrasting_colour(rng, bg, cfg.object_contrast, cfg.grayscale), cfg.noise_sigma, rng);

  std::vector<Point2> visible = object;
  if (uniform(rng, 0.0, 1.0) < cfg.occluder_prob) {
    // A band entering from one side and covering 20-40% of the object.
    const BBox ob = geometry::bounding_box(object);
    const int side = uniform_int(rng, 0, 3);
    const double frac = uniform(rng, 0.2, 0.4);
    BBox occ{};
    double a = 0, b = 0, c = 0;  // visible half-plane a*x + b*y <= c
    switch (side) {
      case 0: {  // left
        const double cut = ob.x0 + frac * ob.width();
        occ = {0.0, ob.y0 - 4, cut, ob.y1 + 4};
        a = -1; c = -cut;
        break;
      }
      case 1: {  // right
        const double cut = ob.x1 - frac * ob.width();
        occ = {cut, ob.y0 - 4, static_cast<double>(w), ob.y1 + 4};
        a = 1; c = cut;
        break;
      }
      case 2: {  // top
        const double cut = ob.y0 + frac * ob.height();
        occ = {ob.x0 - 4, 0.0, ob.x1 + 4, cut};
        b = -1; c = -cut;
        break;
      }
      default: {  // bottom
        const double cut = ob.y1 - frac * ob.height();
        occ = {ob.x0 - 4, cut, ob.x1 + 4, static_cast<double>(w)};
        b = 1; c = cut;
        break;
      }
    }
    std::vector<Point2> occ_poly{{occ.x0, occ.y0}, {occ.x1, occ.y0}, {occ.x1, occ.y1},
                                 {occ.x0, occ.y1}};
    std::vector<std::uint8_t> covered(alpha.size(), 0);
    paint(img, &covered, occ_poly, contrasting_colour(rng, bg, 100.0, cfg.grayscale), cfg.noise_sigma, rng);
    for (std::size_t i = 0; i < alpha.size(); ++i) alpha[i] &= static_cast<std::uint8_t>(!covered[i]);
    visible = geometry::clip_to_halfplane(object, a, b, c);
  }

  SynthInstance out;
  std::ostringstream id;
  id << cfg.preset << "-" << cfg.seed << "-" << std::setw(6) << std::setfill('0') << index;
  out.record.id = id.str();
  out.record.image_path = "images/" + out.record.id + ".ppm";
  out.record.image = std::make_shared<const Image>(std::move(img));
  out.record.bbox = geometry::bounding_box(visible);
  out.record.gt_polygon = std::move(visible);
  out.record.category = to_string(family);
  out.record.split = cfg.split;
  out.alpha = std::move(alpha);
  return out;
}

}  // namespace

std::vector<SynthInstance> synth_generate_full(const SynthConfig& cfg, int n) {
  if (cfg.families.empty()) throw Error("synth config has no shape families");
  std::vector<SynthInstance> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(generate_one(cfg, i));
  return out;
}

std::vector<InstanceRecord> synth_generate(const SynthConfig& cfg, int n) {
  std::vector<InstanceRecord> out;
  for (auto& s : synth_generate_full(cfg, n)) out.push_back(std::move(s.record));
  return out;
}

std::filesystem::path write_dataset(const std::vector<InstanceRecord>& records,
                                    const std::filesystem::path& dir, const std::string& name) {
  std::filesystem::create_directories(dir / "images");
  for (const auto& r : records) {
    if (r.image) write_ppm(*r.image, dir / r.image_path);
  }
  const auto manifest = dir / (name + ".jsonl");
  save_manifest(records, manifest);
  return manifest;
}

}  // namespace polyloop::data
