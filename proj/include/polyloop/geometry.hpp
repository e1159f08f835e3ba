#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace polyloop::geometry {

// A cell on a G x G output grid. x is the column, y the row.
struct GridVertex {
  int x = 0;
  int y = 0;

  friend auto operator<=>(const GridVertex&, const GridVertex&) = default;
};

// Ordered, implicitly closed vertex sequence on a G x G grid.
struct PolygonSeq {
  std::vector<GridVertex> vertices;
  int grid_size = 0;
  bool closed = true;

  std::size_t size() const { return vertices.size(); }
  bool empty() const { return vertices.empty(); }
  const GridVertex& operator[](std::size_t i) const { return vertices[i]; }

  friend bool operator==(const PolygonSeq&, const PolygonSeq&) = default;
};

class BinaryMask {
 public:
  BinaryMask() = default;
  explicit BinaryMask(int grid_size);

  int grid_size() const { return grid_size_; }
  bool at(int x, int y) const { return cells_[index(x, y)] != 0; }
  void set(int x, int y, bool value = true) { cells_[index(x, y)] = value ? 1 : 0; }
  std::size_t count() const;
  std::span<const std::uint8_t> cells() const { return cells_; }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(grid_size_) +
           static_cast<std::size_t>(x);
  }

  int grid_size_ = 0;
  std::vector<std::uint8_t> cells_;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

// Axis-aligned box in image pixel coordinates.
struct BBox {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  bool valid() const { return x0 < x1 && y0 < y1; }
  bool contains(const BBox& other) const {
    return x0 <= other.x0 && y0 <= other.y0 && x1 >= other.x1 && y1 >= other.y1;
  }

  friend bool operator==(const BBox&, const BBox&) = default;
};

// Probability distribution over grid cells, row-major.
struct SmoothedTarget {
  int grid_size = 0;
  std::vector<double> weights;

  double at(int x, int y) const {
    return weights[static_cast<std::size_t>(y) * static_cast<std::size_t>(grid_size) +
                   static_cast<std::size_t>(x)];
  }
};

// ---------------------------------------------------------------------------
// Exact integer geometry on grid polygons.

int manhattan(GridVertex a, GridVertex b);

// Twice the signed area (shoelace). Positive for clockwise order on screen
// (x right, y down).
std::int64_t signed_area2(const PolygonSeq& poly);

std::size_t distinct_vertex_count(const PolygonSeq& poly);

// Even-odd fill of lattice points, boundary points included.
// Throws DegeneratePolygon for < 3 distinct vertices, OutOfBounds when a
// vertex lies outside the grid.
BinaryMask rasterize_polygon(const PolygonSeq& poly, int grid_size);

// |a & b| / |a | b|. Two empty masks agree perfectly (1.0).
double mask_iou(const BinaryMask& a, const BinaryMask& b);

// Drops consecutive duplicates, including the closing pair.
PolygonSeq remove_consecutive_duplicates(const PolygonSeq& poly);

// Removes vertices lying on the segment between their neighbours. Never
// reduces below 3 vertices. Idempotent, mask-preserving.
PolygonSeq simplify_collinear(const PolygonSeq& poly);

// Pairs of non-adjacent edges that cross properly.
int count_self_intersections(const PolygonSeq& poly);

// Manhattan distance transform truncated at 2, weights max(0, 1 - d/3),
// clipped to the grid and renormalised.
SmoothedTarget smooth_target(GridVertex v, int grid_size);

// Lattice cells visited by the closed outline (vertices and edges).
BinaryMask rasterize_outline(const PolygonSeq& poly, int grid_size);

// Orders the polygon so that signed_area2 >= 0.
PolygonSeq canonical_orientation(const PolygonSeq& poly);

// Rotates so that vertex `start` comes first.
PolygonSeq rotate_start(const PolygonSeq& poly, std::size_t start);

// Nearest-neighbour map of grid vertices to a finer grid, cell centre to
// cell centre: v -> v * s + s / 2 with s = fine / coarse.
PolygonSeq upscale_nearest(const PolygonSeq& poly, int fine_grid);

// ---------------------------------------------------------------------------
// Boxes and coordinate maps.

BBox enlarge_box(const BBox& b, double factor, int image_w, int image_h);

// Pushes every side outward by U[lo, hi] times the matching side length,
// then clips to the image. Throws InvalidRange when lo > hi or lo < 0.
BBox perturb_box(const BBox& b, double lo, double hi, int image_w, int image_h,
                 std::mt19937_64& rng);

// Cell centre of v in crop pixels. Throws OutOfBounds for off-grid input.
Point2 grid_to_crop(GridVertex v, int grid_size, int crop_size);

// Cell containing the crop pixel coordinate. Throws OutOfBounds.
GridVertex crop_to_grid(Point2 p, int grid_size, int crop_size);

// ---------------------------------------------------------------------------
// Real-valued polygon helpers.

double signed_area(std::span<const Point2> poly);
bool point_in_polygon(Point2 p, std::span<const Point2> poly);

// Sutherland-Hodgman clip of `poly` against the axis-aligned rectangle.
std::vector<Point2> clip_to_rect(std::span<const Point2> poly, const BBox& rect);

// Clip against the half-plane a*x + b*y <= c.
std::vector<Point2> clip_to_halfplane(std::span<const Point2> poly, double a, double b,
                                      double c);

BBox bounding_box(std::span<const Point2> poly);

// Closest point on the closed polygon outline to p.
Point2 nearest_boundary_point(Point2 p, std::span<const Point2> poly);

}  // namespace polyloop::geometry
