#include "polyloop/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "polyloop/errors.hpp"

namespace polyloop::geometry {

BinaryMask::BinaryMask(int grid_size)
    : grid_size_(grid_size),
      cells_(static_cast<std::size_t>(grid_size) * static_cast<std::size_t>(grid_size), 0) {}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), std::uint8_t{1}));
}

int manhattan(GridVertex a, GridVertex b) { return std::abs(a.x - b.x) + std::abs(a.y - b.y); }

std::int64_t signed_area2(const PolygonSeq& poly) {
  std::int64_t acc = 0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = poly[i];
    const auto& b = poly[(i + 1) % n];
    acc += static_cast<std::int64_t>(a.x) * b.y - static_cast<std::int64_t>(b.x) * a.y;
  }
  return acc;
}

std::size_t distinct_vertex_count(const PolygonSeq& poly) {
  std::set<GridVertex> seen(poly.vertices.begin(), poly.vertices.end());
  return seen.size();
}

namespace {

// x-coordinate of an edge crossing as an exact fraction num / den, den > 0.
struct Crossing {
  std::int64_t num;
  std::int64_t den;
};

bool less_than(const Crossing& a, const Crossing& b) { return a.num * b.den < b.num * a.den; }

std::int64_t floor_div(std::int64_t num, std::int64_t den) {
  std::int64_t q = num / den;
  if ((num % den != 0) && ((num < 0) != (den < 0))) --q;
  return q;
}

std::int64_t ceil_div(std::int64_t num, std::int64_t den) { return -floor_div(-num, den); }

void mark_segment(BinaryMask& mask, GridVertex a, GridVertex b) {
  const int dx = b.x - a.x;
  const int dy = b.y - a.y;
  const int g = std::gcd(std::abs(dx), std::abs(dy));
  if (g == 0) {
    mask.set(a.x, a.y);
    return;
  }
  const int sx = dx / g;
  const int sy = dy / g;
  for (int k = 0; k <= g; ++k) mask.set(a.x + k * sx, a.y + k * sy);
}

std::int64_t cross(GridVertex o, GridVertex a, GridVertex b) {
  return static_cast<std::int64_t>(a.x - o.x) * (b.y - o.y) -
         static_cast<std::int64_t>(a.y - o.y) * (b.x - o.x);
}

int sign(std::int64_t v) { return (v > 0) - (v < 0); }

void check_in_grid(const PolygonSeq& poly, int grid_size) {
  for (const auto& v : poly.vertices) {
    if (v.x < 0 || v.y < 0 || v.x >= grid_size || v.y >= grid_size) {
      throw OutOfBounds("vertex (" + std::to_string(v.x) + "," + std::to_string(v.y) +
                        ") outside grid of size " + std::to_string(grid_size));
    }
  }
}

}  // namespace

BinaryMask rasterize_polygon(const PolygonSeq& poly, int grid_size) {
  if (distinct_vertex_count(poly) < 3) {
    throw DegeneratePolygon("need at least 3 distinct vertices, got " +
                            std::to_string(distinct_vertex_count(poly)));
  }
  check_in_grid(poly, grid_size);

  BinaryMask mask(grid_size);
  const std::size_t n = poly.size();
  std::vector<Crossing> xs;
  for (int y = 0; y < grid_size; ++y) {
    xs.clear();
    for (std::size_t i = 0; i < n; ++i) {
      const auto& a = poly[i];
      const auto& b = poly[(i + 1) % n];
      if (a.y == b.y) continue;
      const bool spans = (a.y <= y && y < b.y) || (b.y <= y && y < a.y);
      if (!spans) continue;
      std::int64_t den = b.y - a.y;
      std::int64_t num = static_cast<std::int64_t>(a.x) * den +
                         static_cast<std::int64_t>(y - a.y) * (b.x - a.x);
      if (den < 0) {
        den = -den;
        num = -num;
      }
      xs.push_back({num, den});
    }
    std::sort(xs.begin(), xs.end(), less_than);
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      // Strictly between the two crossings; points on a crossing lie on an
      // edge and are picked up by the outline pass below.
      std::int64_t lo = floor_div(xs[k].num, xs[k].den) + 1;
      std::int64_t hi = ceil_div(xs[k + 1].num, xs[k + 1].den) - 1;
      lo = std::max<std::int64_t>(lo, 0);
      hi = std::min<std::int64_t>(hi, grid_size - 1);
      for (std::int64_t x = lo; x <= hi; ++x) mask.set(static_cast<int>(x), y);
    }
  }
  for (std::size_t i = 0; i < n; ++i) mark_segment(mask, poly[i], poly[(i + 1) % n]);
  return mask;
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.grid_size() != b.grid_size()) {
    throw ShapeMismatch("mask grid sizes differ: " + std::to_string(a.grid_size()) + " vs " +
                        std::to_string(b.grid_size()));
  }
  std::size_t inter = 0;
  std::size_t uni = 0;
  const auto ca = a.cells();
  const auto cb = b.cells();
  for (std::size_t i = 0; i < ca.size(); ++i) {
    inter += static_cast<std::size_t>(ca[i] & cb[i]);
    uni += static_cast<std::size_t>(ca[i] | cb[i]);
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

PolygonSeq remove_consecutive_duplicates(const PolygonSeq& poly) {
  PolygonSeq out{{}, poly.grid_size, poly.closed};
  for (const auto& v : poly.vertices) {
    if (out.vertices.empty() || out.vertices.back() != v) out.vertices.push_back(v);
  }
  while (out.vertices.size() > 1 && out.vertices.front() == out.vertices.back()) {
    out.vertices.pop_back();
  }
  return out;
}

PolygonSeq simplify_collinear(const PolygonSeq& poly) {
  PolygonSeq out = remove_consecutive_duplicates(poly);
  auto& v = out.vertices;
  bool changed = true;
  while (changed && v.size() > 3) {
    changed = false;
    for (std::size_t i = 0; i < v.size() && v.size() > 3; ++i) {
      const auto& prev = v[(i + v.size() - 1) % v.size()];
      const auto& cur = v[i];
      const auto& next = v[(i + 1) % v.size()];
      if (cross(prev, cur, next) != 0) continue;
      const std::int64_t along = static_cast<std::int64_t>(cur.x - prev.x) * (next.x - cur.x) +
                                 static_cast<std::int64_t>(cur.y - prev.y) * (next.y - cur.y);
      if (along < 0) continue;  // spike reversing direction
      v.erase(v.begin() + static_cast<std::ptrdiff_t>(i));
      changed = true;
      --i;
    }
  }
  return out;
}

int count_self_intersections(const PolygonSeq& poly) {
  const std::size_t n = poly.size();
  int count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = poly[i];
    const auto& b = poly[(i + 1) % n];
    for (std::size_t j = i + 2; j < n; ++j) {
      if (i == 0 && j == n - 1) continue;  // shares the closing vertex
      const auto& c = poly[j];
      const auto& d = poly[(j + 1) % n];
      const int o1 = sign(cross(a, b, c));
      const int o2 = sign(cross(a, b, d));
      const int o3 = sign(cross(c, d, a));
      const int o4 = sign(cross(c, d, b));
      if (o1 * o2 < 0 && o3 * o4 < 0) ++count;
    }
  }
  return count;
}

SmoothedTarget smooth_target(GridVertex v, int grid_size) {
  SmoothedTarget t{grid_size, std::vector<double>(
                                  static_cast<std::size_t>(grid_size) * grid_size, 0.0)};
  double total = 0.0;
  for (int dy = -2; dy <= 2; ++dy) {
    for (int dx = -2; dx <= 2; ++dx) {
      const int d = std::abs(dx) + std::abs(dy);
      if (d > 2) continue;
      const int x = v.x + dx;
      const int y = v.y + dy;
      if (x < 0 || y < 0 || x >= grid_size || y >= grid_size) continue;
      const double w = 1.0 - static_cast<double>(d) / 3.0;
      t.weights[static_cast<std::size_t>(y) * grid_size + x] = w;
      total += w;
    }
  }
  for (auto& w : t.weights) w /= total;
  return t;
}

BinaryMask rasterize_outline(const PolygonSeq& poly, int grid_size) {
  check_in_grid(poly, grid_size);
  BinaryMask mask(grid_size);
  const std::size_t n = poly.size();
  if (n == 1) mask.set(poly[0].x, poly[0].y);
  for (std::size_t i = 0; n > 1 && i < n; ++i) {
    const auto a = poly[i];
    const auto b = poly[(i + 1) % n];
    // Bresenham so that diagonal edges yield a connected trace.
    int x = a.x, y = a.y;
    const int dx = std::abs(b.x - a.x), sx = a.x < b.x ? 1 : -1;
    const int dy = -std::abs(b.y - a.y), sy = a.y < b.y ? 1 : -1;
    int err = dx + dy;
    while (true) {
      mask.set(x, y);
      if (x == b.x && y == b.y) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y += sy;
      }
    }
  }
  return mask;
}

PolygonSeq canonical_orientation(const PolygonSeq& poly) {
  if (signed_area2(poly) >= 0) return poly;
  PolygonSeq out = poly;
  std::reverse(out.vertices.begin() + 1, out.vertices.end());
  return out;
}

PolygonSeq rotate_start(const PolygonSeq& poly, std::size_t start) {
  PolygonSeq out = poly;
  if (!out.vertices.empty()) {
    std::rotate(out.vertices.begin(),
                out.vertices.begin() + static_cast<std::ptrdiff_t>(start % out.size()),
                out.vertices.end());
  }
  return out;
}

PolygonSeq upscale_nearest(const PolygonSeq& poly, int fine_grid) {
  const int s = fine_grid / poly.grid_size;
  PolygonSeq out{{}, fine_grid, poly.closed};
  out.vertices.reserve(poly.size());
  for (const auto& v : poly.vertices) out.vertices.push_back({v.x * s + s / 2, v.y * s + s / 2});
  return out;
}

BBox enlarge_box(const BBox& b, double factor, int image_w, int image_h) {
  const double gx = 0.5 * factor * b.width();
  const double gy = 0.5 * factor * b.height();
  return BBox{std::max(0.0, b.x0 - gx), std::max(0.0, b.y0 - gy),
              std::min(static_cast<double>(image_w), b.x1 + gx),
              std::min(static_cast<double>(image_h), b.y1 + gy)};
}

BBox perturb_box(const BBox& b, double lo, double hi, int image_w, int image_h,
                 std::mt19937_64& rng) {
  if (lo < 0.0 || lo > hi) {
    throw InvalidRange("need 0 <= lo <= hi, got lo=" + std::to_string(lo) +
                       " hi=" + std::to_string(hi));
  }
  std::uniform_real_distribution<double> u(lo, hi);
  const double w = b.width();
  const double h = b.height();
  // Draw order is fixed (left, top, right, bottom) for reproducibility.
  const double left = u(rng) * w;
  const double top = u(rng) * h;
  const double right = u(rng) * w;
  const double bottom = u(rng) * h;
  return BBox{std::max(0.0, b.x0 - left), std::max(0.0, b.y0 - top),
              std::min(static_cast<double>(image_w), b.x1 + right),
              std::min(static_cast<double>(image_h), b.y1 + bottom)};
}

Point2 grid_to_crop(GridVertex v, int grid_size, int crop_size) {
  if (v.x < 0 || v.y < 0 || v.x >= grid_size || v.y >= grid_size) {
    throw OutOfBounds("grid vertex outside grid");
  }
  const double s = static_cast<double>(crop_size) / grid_size;
  return {(v.x + 0.5) * s, (v.y + 0.5) * s};
}

GridVertex crop_to_grid(Point2 p, int grid_size, int crop_size) {
  const double s = static_cast<double>(grid_size) / crop_size;
  const double gx = std::floor(p.x * s);
  const double gy = std::floor(p.y * s);
  if (!(gx >= 0 && gy >= 0 && gx < grid_size && gy < grid_size)) {
    throw OutOfBounds("crop point (" + std::to_string(p.x) + "," + std::to_string(p.y) +
                      ") outside crop of size " + std::to_string(crop_size));
  }
  return {static_cast<int>(gx), static_cast<int>(gy)};
}

double signed_area(std::span<const Point2> poly) {
  double acc = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& a = poly[i];
    const auto& b = poly[(i + 1) % poly.size()];
    acc += a.x * b.y - b.x * a.y;
  }
  return 0.5 * acc;
}

bool point_in_polygon(Point2 p, std::span<const Point2> poly) {
  bool inside = false;
  const std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x) inside = !inside;
    }
  }
  return inside;
}

std::vector<Point2> clip_to_halfplane(std::span<const Point2> poly, double a, double b,
                                      double c) {
  std::vector<Point2> out;
  const std::size_t n = poly.size();
  if (n == 0) return out;
  auto inside = [&](const Point2& p) { return a * p.x + b * p.y <= c; };
  auto intersect = [&](const Point2& p, const Point2& q) {
    const double fp = a * p.x + b * p.y - c;
    const double fq = a * q.x + b * q.y - c;
    const double t = fp / (fp - fq);
    return Point2{p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)};
  };
  for (std::size_t i = 0; i < n; ++i) {
    const Point2& cur = poly[i];
    const Point2& prev = poly[(i + n - 1) % n];
    const bool in_cur = inside(cur);
    const bool in_prev = inside(prev);
    if (in_cur) {
      if (!in_prev) out.push_back(intersect(prev, cur));
      out.push_back(cur);
    } else if (in_prev) {
      out.push_back(intersect(prev, cur));
    }
  }
  return out;
}

std::vector<Point2> clip_to_rect(std::span<const Point2> poly, const BBox& rect) {
  std::vector<Point2> out(poly.begin(), poly.end());
  out = clip_to_halfplane(out, -1.0, 0.0, -rect.x0);
  out = clip_to_halfplane(out, 1.0, 0.0, rect.x1);
  out = clip_to_halfplane(out, 0.0, -1.0, -rect.y0);
  out = clip_to_halfplane(out, 0.0, 1.0, rect.y1);
  return out;
}

BBox bounding_box(std::span<const Point2> poly) {
  BBox b{1e300, 1e300, -1e300, -1e300};
  for (const auto& p : poly) {
    b.x0 = std::min(b.x0, p.x);
    b.y0 = std::min(b.y0, p.y);
    b.x1 = std::max(b.x1, p.x);
    b.y1 = std::max(b.y1, p.y);
  }
  return b;
}

Point2 nearest_boundary_point(Point2 p, std::span<const Point2> poly) {
  Point2 best = poly.front();
  double best_d2 = 1e300;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point2& a = poly[i];
    const Point2& b = poly[(i + 1) % n];
    const double ex = b.x - a.x;
    const double ey = b.y - a.y;
    const double len2 = ex * ex + ey * ey;
    double t = 0.0;
    if (len2 > 0.0) t = std::clamp(((p.x - a.x) * ex + (p.y - a.y) * ey) / len2, 0.0, 1.0);
    const Point2 q{a.x + t * ex, a.y + t * ey};
    const double d2 = (q.x - p.x) * (q.x - p.x) + (q.y - p.y) * (q.y - p.y);
    if (d2 < best_d2) {
      best_d2 = d2;
      best = q;
    }
  }
  return best;
}

}  // namespace polyloop::geometry
