#include "cforge/shapes.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cforge/error.hpp"
#include "cforge/io.hpp"

namespace cforge {

namespace {

constexpr double kPi = std::numbers::pi;

double deg2rad(double d) { return d * kPi / 180.0; }

double norm3(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }

// Picks a bin by cumulative weight and rescales u into [0, 1) within it.
std::size_t pick_bin(std::span<const double> weights, double& u) {
  double total = 0.0;
  for (double w : weights) total += w;
  double target = u * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (target < weights[i] || i + 1 == weights.size()) {
      u = weights[i] > 0.0 ? std::clamp(target / weights[i], 0.0, 1.0 - 1e-16) : 0.0;
      return i;
    }
    target -= weights[i];
  }
  return weights.size() - 1;
}

struct Bounds3 {
  Vec3 lo{};
  Vec3 hi{};
};

Bounds3 bounds(const PointCloud& cloud) {
  Bounds3 b;
  b.lo = {INFINITY, INFINITY, INFINITY};
  b.hi = {-INFINITY, -INFINITY, -INFINITY};
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto p = cloud.point(i);
    for (int k = 0; k < 3; ++k) {
      b.lo[k] = std::min(b.lo[k], p[k]);
      b.hi[k] = std::max(b.hi[k], p[k]);
    }
  }
  return b;
}

void require_nonempty(const PointCloud& cloud, const char* what) {
  if (cloud.empty()) throw InvalidInput(std::string(what) + ": empty point cloud");
}

void require_not_collinear(const PointCloud& cloud, const char* what) {
  const Vec3 p0 = cloud.point(0);
  std::size_t far = 0;
  double far_d = 0.0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const double d = norm3(sub(cloud.point(i), p0));
    if (d > far_d) {
      far_d = d;
      far = i;
    }
  }
  if (far_d <= 1e-12) throw DegenerateError(std::string(what) + ": all points coincide");
  const Vec3 axis = sub(cloud.point(far), p0);
  double spread = 0.0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3 d = sub(cloud.point(i), p0);
    const Vec3 c{d[1] * axis[2] - d[2] * axis[1], d[2] * axis[0] - d[0] * axis[2],
                 d[0] * axis[1] - d[1] * axis[0]};
    spread = std::max(spread, norm3(c));
  }
  if (spread <= 1e-9 * far_d * far_d) {
    throw DegenerateError(std::string(what) + ": points are collinear");
  }
}

// Solves the n x n system in place (Gaussian elimination, partial pivoting).
std::vector<double> solve_dense(std::vector<double> a, std::vector<double> b, std::size_t n) {
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::fabs(a[r * n + col]) > std::fabs(a[piv * n + col])) piv = r;
    }
    if (std::fabs(a[piv * n + col]) < 1e-300) throw DegenerateError("singular ellipsoid fit");
    if (piv != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a[piv * n + c], a[col * n + c]);
      std::swap(b[piv], b[col]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r * n + col] / a[col * n + col];
      for (std::size_t c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t r = n; r-- > 0;) {
    double s = b[r];
    for (std::size_t c = r + 1; c < n; ++c) s -= a[r * n + c] * x[c];
    x[r] = s / a[r * n + r];
  }
  return x;
}

double polar_angle(const Vec3& d) {
  const double n = norm3(d);
  if (n == 0.0) return 0.0;
  return std::acos(std::clamp(d[2] / n, -1.0, 1.0));
}

}  // namespace

// --- PointCloud / layout -----------------------------------------------------------

PointCloud PointCloud::from_flat(std::vector<double> coords) {
  if (coords.size() % 3 != 0) {
    throw InvalidInput("point cloud coordinate count " + std::to_string(coords.size()) +
                       " is not a multiple of 3");
  }
  PointCloud pc;
  pc.coords_ = std::move(coords);
  return pc;
}

bool PointCloud::all_finite() const {
  return std::all_of(coords_.begin(), coords_.end(), [](double v) { return std::isfinite(v); });
}

SurfaceLayout SurfaceLayout::make(std::size_t points, std::uint64_t seed) {
  SurfaceLayout layout;
  layout.samples.resize(points);
  Rng rng(mix_seed(seed, 0x1a7047));
  for (std::size_t i = 0; i < points; ++i) {
    for (auto& u : layout.samples[i]) u = rng.uniform();
  }
  if (points > 0) layout.samples[0] = {0.0, 0.0, 0.0};
  return layout;
}

double aspect_ratio(const Vec3& axes) {
  const auto [lo, hi] = std::minmax_element(axes.begin(), axes.end());
  return *hi / *lo;
}

Vec3 sample_semi_axes(Rng& rng, const SizeBounds& bounds) {
  for (int k = 0; k < 3; ++k) {
    if (!(bounds.min[k] > 0.0) || bounds.max[k] < bounds.min[k]) {
      throw InvalidInput("size bounds must be positive and ordered");
    }
  }
  for (int attempt = 0; attempt < 100000; ++attempt) {
    Vec3 axes;
    for (int k = 0; k < 3; ++k) axes[k] = rng.uniform(bounds.min[k], bounds.max[k]);
    const double ar = aspect_ratio(axes);
    if (ar >= bounds.min_aspect && ar <= bounds.max_aspect) return axes;
  }
  throw InvalidInput("size bounds admit no shape within the aspect-ratio limits");
}

std::string_view shape_kind_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::kCuboid: return "cuboid";
    case ShapeKind::kEllipsoid: return "ellipsoid";
    case ShapeKind::kCarLike: return "car";
    case ShapeKind::kBumpedEllipsoid: return "bump";
  }
  return "cuboid";
}

ShapeKind parse_shape_kind(std::string_view name) {
  if (name == "cuboid") return ShapeKind::kCuboid;
  if (name == "ellipsoid") return ShapeKind::kEllipsoid;
  if (name == "car") return ShapeKind::kCarLike;
  if (name == "bump") return ShapeKind::kBumpedEllipsoid;
  throw InvalidInput("unknown shape kind '" + std::string(name) + "'");
}

std::string_view car_style_name(CarStyle style) {
  return style == CarStyle::kSport ? "sport" : "sedan";
}

// --- primitives --------------------------------------------------------------------

PointCloud cuboid_surface(const SurfaceLayout& layout, const Vec3& h) {
  const std::array<double, 6> areas{h[1] * h[2], h[1] * h[2], h[0] * h[2],
                                    h[0] * h[2], h[0] * h[1], h[0] * h[1]};
  PointCloud pc(layout.size());
  for (std::size_t i = 0; i < layout.size(); ++i) {
    auto [u0, u1, u2] = layout.samples[i];
    const std::size_t face = pick_bin(areas, u0);
    const int axis = static_cast<int>(face / 2);
    const double sign = face % 2 == 0 ? 1.0 : -1.0;
    const int a = (axis + 1) % 3;
    const int b = (axis + 2) % 3;
    Vec3 p{};
    p[axis] = sign * h[axis];
    p[a] = (2.0 * u1 - 1.0) * h[a];
    p[b] = (2.0 * u2 - 1.0) * h[b];
    pc.set_point(i, p);
  }
  return pc;
}

PointCloud ellipsoid_surface(const SurfaceLayout& layout, const Vec3& axes) {
  PointCloud pc(layout.size());
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& u = layout.samples[i];
    const double z = 1.0 - 2.0 * u[0];
    const double phi = 2.0 * kPi * u[1];
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    pc.set_point(i, {axes[0] * r * std::cos(phi), axes[1] * r * std::sin(phi), axes[2] * z});
  }
  return pc;
}

PointCloud gen_cuboid(Rng& rng, const SizeBounds& bounds, const SurfaceLayout& layout) {
  return cuboid_surface(layout, sample_semi_axes(rng, bounds));
}

PointCloud gen_ellipsoid(Rng& rng, const SizeBounds& bounds, const SurfaceLayout& layout) {
  return ellipsoid_surface(layout, sample_semi_axes(rng, bounds));
}

// --- cars ------------------------------------------------------------------------------

double CarParams::roof_length() const {
  const double rise = height - belt_height;
  return length - hood_length - trunk_length - rise * std::tan(deg2rad(windshield_rake_deg)) -
         rise * std::tan(deg2rad(rear_rake_deg));
}

CarParams sample_car_params(Rng& rng, CarStyle style) {
  const bool sport = style == CarStyle::kSport;
  for (;;) {
    CarParams p;
    p.style = style;
    p.length = rng.uniform(4.2, 4.9);
    p.width = p.length * rng.uniform(0.38, 0.44);
    p.height = p.length * (sport ? rng.uniform(0.22, 0.27) : rng.uniform(0.30, 0.36));
    p.windshield_rake_deg = sport ? rng.uniform(55.0, 65.0) : rng.uniform(30.0, 42.0);
    p.rear_rake_deg = sport ? rng.uniform(40.0, 55.0) : rng.uniform(20.0, 35.0);
    p.belt_height = p.height * rng.uniform(0.45, 0.55);
    p.hood_length = p.length * rng.uniform(0.24, 0.30);
    p.trunk_length = p.length * rng.uniform(0.16, 0.22);
    if (p.roof_length() >= 0.05 * p.length) return p;
  }
}

PointCloud car_surface(const SurfaceLayout& layout, const CarParams& p) {
  using P2 = std::array<double, 2>;  // (x, z)
  const double half = 0.5 * p.length;
  const double rise = p.height - p.belt_height;
  const double xw = half - p.hood_length;
  const double xr = -half + p.trunk_length;
  const double dw = rise * std::tan(deg2rad(p.windshield_rake_deg));
  const double dr = rise * std::tan(deg2rad(p.rear_rake_deg));
  if (p.roof_length() <= 0.0) throw InvalidInput("car parameters leave no roof");

  const std::array<P2, 8> outline{P2{-half, 0.0}, P2{half, 0.0},
                                  P2{half, p.belt_height}, P2{xw, p.belt_height},
                                  P2{xw - dw, p.height}, P2{xr + dr, p.height},
                                  P2{xr, p.belt_height}, P2{-half, p.belt_height}};
  std::array<double, 8> edge_len{};
  double perimeter = 0.0;
  for (std::size_t e = 0; e < 8; ++e) {
    const auto& a = outline[e];
    const auto& b = outline[(e + 1) % 8];
    edge_len[e] = std::hypot(b[0] - a[0], b[1] - a[1]);
    perimeter += edge_len[e];
  }

  // Side profile = lower box plus the cabin quad (split into two triangles).
  const std::array<std::array<P2, 3>, 2> cabin{std::array<P2, 3>{outline[6], outline[3], outline[4]},
                                               std::array<P2, 3>{outline[6], outline[4], outline[5]}};
  auto tri_area = [](const std::array<P2, 3>& t) {
    return 0.5 * std::fabs((t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) -
                           (t[2][0] - t[0][0]) * (t[1][1] - t[0][1]));
  };
  const std::array<double, 3> side_parts{p.length * p.belt_height, tri_area(cabin[0]),
                                         tri_area(cabin[1])};
  const double side_area = side_parts[0] + side_parts[1] + side_parts[2];
  const std::array<double, 3> surfaces{side_area, side_area, perimeter * p.width};

  PointCloud pc(layout.size());
  for (std::size_t i = 0; i < layout.size(); ++i) {
    auto [u0, u1, u2] = layout.samples[i];
    const std::size_t surface = pick_bin(surfaces, u0);
    Vec3 q{};
    if (surface < 2) {
      q[1] = (surface == 0 ? 0.5 : -0.5) * p.width;
      const std::size_t part = pick_bin(side_parts, u0);
      if (part == 0) {
        q[0] = -half + u1 * p.length;
        q[2] = u2 * p.belt_height;
      } else {
        const auto& t = cabin[part - 1];
        const double s = std::sqrt(u1);
        const double w0 = 1.0 - s, w1 = s * (1.0 - u2), w2 = s * u2;
        q[0] = w0 * t[0][0] + w1 * t[1][0] + w2 * t[2][0];
        q[2] = w0 * t[0][1] + w1 * t[1][1] + w2 * t[2][1];
      }
    } else {
      double u = u1;
      const std::size_t e = pick_bin(edge_len, u);
      const auto& a = outline[e];
      const auto& b = outline[(e + 1) % 8];
      q[0] = a[0] + u * (b[0] - a[0]);
      q[2] = a[1] + u * (b[1] - a[1]);
      q[1] = (u2 - 0.5) * p.width;
    }
    pc.set_point(i, q);
  }
  return pc;
}

CarShape gen_car_like(Rng& rng, CarStyle style, const SurfaceLayout& layout) {
  CarShape shape;
  shape.params = sample_car_params(rng, style);
  shape.cloud = car_surface(layout, shape.params);
  return shape;
}

// --- bumps -------------------------------------------------------------------------------

double bump_profile(double angle, double width) {
  if (angle >= width) return 0.0;
  const double sigma = 0.5 * width;
  const double floor = std::exp(-2.0);
  const double g = std::exp(-0.5 * (angle / sigma) * (angle / sigma));
  return (g - floor) / (1.0 - floor);
}

PointCloud bumped_ellipsoid_surface(const SurfaceLayout& layout, const Vec3& semi_axes,
                                    double height, double width_deg) {
  PointCloud pc = ellipsoid_surface(layout, semi_axes);
  if (height == 0.0) return pc;
  const double width = deg2rad(width_deg);
  for (std::size_t i = 0; i < pc.size(); ++i) {
    const Vec3 p = pc.point(i);
    const double r = norm3(p);
    const double d = height * bump_profile(polar_angle(p), width);
    if (d == 0.0 || r == 0.0) continue;
    const double s = (r + d) / r;
    pc.set_point(i, {p[0] * s, p[1] * s, p[2] * s});
  }
  return pc;
}

BumpedShape gen_bumped_ellipsoid(Rng& rng, const BumpRecipe& recipe, const SurfaceLayout& layout) {
  BumpedShape shape;
  shape.semi_axes = recipe.proportions == BumpRecipe::Proportions::kFixed
                        ? recipe.fixed_axes
                        : sample_semi_axes(rng, recipe.bounds);
  shape.bump_height =
      recipe.height ? *recipe.height : rng.uniform(recipe.height_min, recipe.height_max);
  if (shape.bump_height < 0.0 || shape.bump_height > 1.0) {
    throw InvalidInput("bump height must lie in [0, 1]");
  }
  shape.cloud = bumped_ellipsoid_surface(layout, shape.semi_axes, shape.bump_height, recipe.width_deg);
  return shape;
}

EllipsoidFit fit_axis_aligned_ellipsoid(std::span<const Vec3> points) {
  if (points.size() < 6) throw DegenerateError("ellipsoid fit needs at least 6 points");
  // The quadric is normalised to a unit right-hand side, which needs the
  // origin inside the ellipsoid; the centroid of surface points is.
  Vec3 shift{0.0, 0.0, 0.0};
  for (const auto& p : points) {
    for (int k = 0; k < 3; ++k) shift[k] += p[k] / static_cast<double>(points.size());
  }
  constexpr std::size_t n = 6;
  std::vector<double> ata(n * n, 0.0);
  std::vector<double> atb(n, 0.0);
  for (const auto& q : points) {
    const Vec3 p = sub(q, shift);
    const std::array<double, n> row{p[0] * p[0], p[1] * p[1], p[2] * p[2], p[0], p[1], p[2]};
    for (std::size_t r = 0; r < n; ++r) {
      atb[r] += row[r];
      for (std::size_t c = 0; c < n; ++c) ata[r * n + c] += row[r] * row[c];
    }
  }
  const auto coef = solve_dense(std::move(ata), std::move(atb), n);
  EllipsoidFit fit;
  double g = 1.0;
  for (int k = 0; k < 3; ++k) {
    if (!(coef[k] > 0.0)) throw DegenerateError("fitted quadric is not an ellipsoid");
    fit.center[k] = -coef[3 + k] / (2.0 * coef[k]);
    g += coef[3 + k] * coef[3 + k] / (4.0 * coef[k]);
  }
  if (!(g > 0.0)) throw DegenerateError("fitted quadric is not an ellipsoid");
  for (int k = 0; k < 3; ++k) {
    fit.semi_axes[k] = std::sqrt(g / coef[k]);
    fit.center[k] += shift[k];
  }
  return fit;
}

BumpMeasurement measure_bump_detailed(const PointCloud& cloud, const BumpRecipe& base_recipe) {
  require_nonempty(cloud, "measure_bump");
  if (bounding_box_diagonal(cloud) < 1e-9) throw DegenerateError("measure_bump: cloud has no extent");
  const double cone = deg2rad(base_recipe.width_deg);
  const double exclusion = cone + deg2rad(15.0);

  Vec3 center = centroid(cloud);
  EllipsoidFit fit;
  for (int pass = 0; pass < 2; ++pass) {
    std::vector<Vec3> base_points;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const Vec3 p = cloud.point(i);
      if (polar_angle(sub(p, center)) > exclusion) base_points.push_back(p);
    }
    fit = fit_axis_aligned_ellipsoid(base_points);
    center = fit.center;
  }

  BumpMeasurement m;
  m.base = fit;
  bool any = false;
  double best = -INFINITY;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3 d = sub(cloud.point(i), fit.center);
    if (polar_angle(d) > cone) continue;
    const double r = norm3(d);
    if (r == 0.0) continue;
    double q = 0.0;
    for (int k = 0; k < 3; ++k) q += (d[k] / r) * (d[k] / r) / (fit.semi_axes[k] * fit.semi_axes[k]);
    best = std::max(best, r - 1.0 / std::sqrt(q));
    any = true;
  }
  if (!any) throw DegenerateError("measure_bump: no points inside the bump cone");
  m.height = best;
  return m;
}

double measure_bump(const PointCloud& cloud, const BumpRecipe& base_recipe) {
  return measure_bump_detailed(cloud, base_recipe).height;
}

// --- normalisation and drag --------------------------------------------------------------

Vec3 centroid(const PointCloud& cloud) {
  require_nonempty(cloud, "centroid");
  Vec3 c{};
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto p = cloud.point(i);
    for (int k = 0; k < 3; ++k) c[k] += p[k];
  }
  for (double& v : c) v /= static_cast<double>(cloud.size());
  return c;
}

double bounding_box_diagonal(const PointCloud& cloud) {
  require_nonempty(cloud, "bounding_box_diagonal");
  const auto b = bounds(cloud);
  return norm3(sub(b.hi, b.lo));
}

PointCloud normalize(const PointCloud& cloud) {
  const Vec3 c = centroid(cloud);
  const double diag = bounding_box_diagonal(cloud);
  if (!(diag > 1e-12)) throw DegenerateError("normalize: cloud has zero extent");
  PointCloud out(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto p = cloud.point(i);
    out.set_point(i, {(p[0] - c[0]) / diag, (p[1] - c[1]) / diag, (p[2] - c[2]) / diag});
  }
  return out;
}

double occupancy(const PointCloud& cloud) {
  require_nonempty(cloud, "occupancy");
  const auto b = bounds(cloud);
  const double ey = b.hi[1] - b.lo[1];
  const double ez = b.hi[2] - b.lo[2];
  if (!(ey > 1e-12) || !(ez > 1e-12)) throw DegenerateError("occupancy: flat (y, z) projection");
  constexpr int n = kOccupancyGrid;
  std::array<std::array<bool, n>, n> hit{};  // [iz][iy]
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto p = cloud.point(i);
    const int iy = std::min(n - 1, static_cast<int>((p[1] - b.lo[1]) / ey * n));
    const int iz = std::min(n - 1, static_cast<int>((p[2] - b.lo[2]) / ez * n));
    hit[iz][iy] = true;
  }
  std::array<int, n> row_lo, row_hi, col_lo, col_hi;
  row_lo.fill(n);
  row_hi.fill(-1);
  col_lo.fill(n);
  col_hi.fill(-1);
  for (int iz = 0; iz < n; ++iz) {
    for (int iy = 0; iy < n; ++iy) {
      if (!hit[iz][iy]) continue;
      row_lo[iz] = std::min(row_lo[iz], iy);
      row_hi[iz] = std::max(row_hi[iz], iy);
      col_lo[iy] = std::min(col_lo[iy], iz);
      col_hi[iy] = std::max(col_hi[iy], iz);
    }
  }
  int occupied = 0;
  for (int iz = 0; iz < n; ++iz) {
    for (int iy = 0; iy < n; ++iy) {
      const bool inside = iy >= row_lo[iz] && iy <= row_hi[iz] && iz >= col_lo[iy] && iz <= col_hi[iy];
      if (hit[iz][iy] || inside) ++occupied;
    }
  }
  return static_cast<double>(occupied) / (n * n);
}

double boxiness(const PointCloud& cloud) {
  require_nonempty(cloud, "boxiness");
  const auto b = bounds(cloud);
  Vec3 center, half;
  for (int k = 0; k < 3; ++k) {
    center[k] = 0.5 * (b.lo[k] + b.hi[k]);
    half[k] = 0.5 * (b.hi[k] - b.lo[k]);
    if (!(half[k] > 1e-12)) throw DegenerateError("boxiness: cloud is flat along an axis");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto p = cloud.point(i);
    double m = 0.0;
    for (int k = 0; k < 3; ++k) m = std::max(m, std::fabs(p[k] - center[k]) / half[k]);
    sum += m;
  }
  return sum / static_cast<double>(cloud.size());
}

DragTerms drag_terms(const PointCloud& cloud) {
  require_nonempty(cloud, "drag_proxy");
  require_not_collinear(cloud, "drag_proxy");
  DragTerms t;
  t.occupancy = occupancy(cloud);
  t.boxiness = boxiness(cloud);
  t.drag = 0.6 * t.occupancy + 0.4 * t.boxiness;
  return t;
}

double drag_proxy(const PointCloud& cloud) { return drag_terms(cloud).drag; }

// --- files ----------------------------------------------------------------------------------

std::string to_xyz(const PointCloud& cloud) {
  std::string out;
  out.reserve(cloud.size() * 64);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto p = cloud.point(i);
    out += format_double(p[0]);
    out += ' ';
    out += format_double(p[1]);
    out += ' ';
    out += format_double(p[2]);
    out += '\n';
  }
  return out;
}

PointCloud parse_xyz(std::string_view text) {
  Tokenizer tok(text);
  std::vector<double> coords;
  while (!tok.done()) coords.push_back(tok.next_double());
  if (coords.size() % 3 != 0) throw IoError("xyz data does not contain whole points");
  return PointCloud::from_flat(std::move(coords));
}

void save_xyz(const std::filesystem::path& path, const PointCloud& cloud) {
  write_text_file(path, to_xyz(cloud));
}

PointCloud load_xyz(const std::filesystem::path& path) { return parse_xyz(read_text_file(path)); }

void save_ply(const std::filesystem::path& path, const PointCloud& cloud) {
  std::string out = "ply\nformat ascii 1.0\nelement vertex " + std::to_string(cloud.size()) +
                    "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
  out += to_xyz(cloud);
  write_text_file(path, out);
}

}  // namespace cforge
