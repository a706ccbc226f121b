#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cforge/rng.hpp"

namespace cforge {

using Vec3 = std::array<double, 3>;

// P x 3 matrix of surface samples, stored row-major as x0 y0 z0 x1 y1 z1 ...
class PointCloud {
 public:
  PointCloud() = default;
  explicit PointCloud(std::size_t points) : coords_(points * 3, 0.0) {}
  // Throws InvalidInput unless coords.size() is a multiple of 3.
  static PointCloud from_flat(std::vector<double> coords);

  std::size_t size() const { return coords_.size() / 3; }
  bool empty() const { return coords_.empty(); }

  Vec3 point(std::size_t i) const { return {coords_[3 * i], coords_[3 * i + 1], coords_[3 * i + 2]}; }
  void set_point(std::size_t i, const Vec3& p) {
    coords_[3 * i] = p[0];
    coords_[3 * i + 1] = p[1];
    coords_[3 * i + 2] = p[2];
  }

  std::span<double> flat() { return coords_; }
  std::span<const double> flat() const { return coords_; }
  const std::vector<double>& coords() const { return coords_; }

  bool all_finite() const;
  bool operator==(const PointCloud&) const = default;

 private:
  std::vector<double> coords_;
};

// Canonical surface parameterisation shared by every shape of a dataset:
// point i of every generated cloud is produced from the same three uniforms,
// so coordinates correspond across shapes and a per-coordinate
// reconstruction loss is meaningful. Sample 0 is pinned to (0, 0, 0), which
// maps to the +z pole of ellipsoids.
struct SurfaceLayout {
  std::vector<std::array<double, 3>> samples;

  static SurfaceLayout make(std::size_t points, std::uint64_t seed);
  std::size_t size() const { return samples.size(); }
};

// Semi-axis / half-extent sampling box plus the longest/shortest ratio bounds.
struct SizeBounds {
  Vec3 min{1.5, 0.6, 0.5};
  Vec3 max{2.5, 1.2, 1.0};
  double min_aspect = 1.5;
  double max_aspect = 3.5;
};

double aspect_ratio(const Vec3& axes);
// Rejection sampling inside `bounds` until the aspect ratio is admissible.
Vec3 sample_semi_axes(Rng& rng, const SizeBounds& bounds);

enum class ShapeKind { kCuboid, kEllipsoid, kCarLike, kBumpedEllipsoid };
enum class CarStyle { kSport, kSedan };

std::string_view shape_kind_name(ShapeKind kind);
ShapeKind parse_shape_kind(std::string_view name);
std::string_view car_style_name(CarStyle style);

// Cuboid surface, area-uniform, centred at the origin.
PointCloud cuboid_surface(const SurfaceLayout& layout, const Vec3& half_extents);
// Ellipsoid surface: uniform sphere directions scaled by the semi-axes.
PointCloud ellipsoid_surface(const SurfaceLayout& layout, const Vec3& semi_axes);

PointCloud gen_cuboid(Rng& rng, const SizeBounds& bounds, const SurfaceLayout& layout);
PointCloud gen_ellipsoid(Rng& rng, const SizeBounds& bounds, const SurfaceLayout& layout);

// Three-box side profile (hood, cabin, trunk) extruded across the width.
// +x is the front of the car, z is up and the floor sits at z = 0.
//
// Parameter ranges drawn by sample_car_params:
//   length                      [4.2, 4.9]
//   width / length              [0.38, 0.44]
//   height / length   Sport     [0.22, 0.27]    Sedan [0.30, 0.36]
//   windshield rake   Sport     [55, 65] deg    Sedan [30, 42] deg (from vertical)
//   rear window rake  Sport     [40, 55] deg    Sedan [20, 35] deg
//   belt height / height        [0.45, 0.55]
//   hood / length               [0.24, 0.30]
//   trunk / length              [0.16, 0.22]
// Draws whose roof would be shorter than 5% of the length are rejected.
struct CarParams {
  CarStyle style = CarStyle::kSedan;
  double length = 4.5;
  double width = 1.8;
  double height = 1.5;
  double belt_height = 0.75;
  double hood_length = 1.2;
  double trunk_length = 0.9;
  double windshield_rake_deg = 35.0;
  double rear_rake_deg = 30.0;

  double roof_length() const;
};

CarParams sample_car_params(Rng& rng, CarStyle style);
PointCloud car_surface(const SurfaceLayout& layout, const CarParams& params);

struct CarShape {
  PointCloud cloud;
  CarParams params;
};
CarShape gen_car_like(Rng& rng, CarStyle style, const SurfaceLayout& layout);

// Ellipsoid with a smooth radial bump around the +z pole. The displacement
// at polar angle t is height * bump_profile(t, width): a Gaussian with
// sigma = width / 2, shifted and rescaled so it is 1 at the pole and exactly
// 0 from `width` outward.
struct BumpRecipe {
  enum class Proportions { kFixed, kRandom };
  Proportions proportions = Proportions::kFixed;
  Vec3 fixed_axes{2.0, 1.2, 1.0};
  SizeBounds bounds{{1.5, 0.7, 1.0}, {3.0, 1.6, 1.0}, 1.5, 3.5};
  std::optional<double> height;  // sampled uniformly in [height_min, height_max] when unset
  double height_min = 0.0;
  double height_max = 0.5;
  double width_deg = 30.0;
};

inline BumpRecipe random_bump_recipe() {
  BumpRecipe r;
  r.proportions = BumpRecipe::Proportions::kRandom;
  return r;
}

double bump_profile(double polar_angle_rad, double width_rad);
PointCloud bumped_ellipsoid_surface(const SurfaceLayout& layout, const Vec3& semi_axes,
                                    double height, double width_deg);

struct BumpedShape {
  PointCloud cloud;
  double bump_height = 0.0;
  Vec3 semi_axes{};
};
BumpedShape gen_bumped_ellipsoid(Rng& rng, const BumpRecipe& recipe, const SurfaceLayout& layout);

struct EllipsoidFit {
  Vec3 center{};
  Vec3 semi_axes{};
};

// Least-squares axis-aligned ellipsoid A x^2 + B y^2 + C z^2 + D x + E y + F z = 1.
EllipsoidFit fit_axis_aligned_ellipsoid(std::span<const Vec3> points);

struct BumpMeasurement {
  double height = 0.0;  // max radial excess inside the bump cone
  EllipsoidFit base;
};

// Fits the base ellipsoid to the points well outside the bump cone, then
// reports the largest radial excess over it inside the cone. Throws
// DegenerateError for clouds with (near) zero extent.
BumpMeasurement measure_bump_detailed(const PointCloud& cloud, const BumpRecipe& base_recipe);
double measure_bump(const PointCloud& cloud, const BumpRecipe& base_recipe);

// Centroid moved to the origin and bounding-box diagonal scaled to 1.
PointCloud normalize(const PointCloud& cloud);
double bounding_box_diagonal(const PointCloud& cloud);
Vec3 centroid(const PointCloud& cloud);

// Geometric stand-in for a drag coefficient, travel direction +x:
//   Cd* = 0.6 * occupancy + 0.4 * boxiness
// occupancy: fraction of a 16x16 grid over the (y, z) bounding box covered
//   by the frontal silhouette. Cells hit by a projected point are occupied,
//   and so is every cell lying between hit cells both along its row and
//   along its column, so a sparse sample of a closed surface still yields
//   its filled silhouette.
// boxiness: mean over points of the Chebyshev norm after mapping the
//   bounding box onto [-1, 1]^3 (1 for any box surface, about 0.83 for an
//   ellipsoid of any proportions).
struct DragTerms {
  double occupancy = 0.0;
  double boxiness = 0.0;
  double drag = 0.0;
};

inline constexpr int kOccupancyGrid = 16;

DragTerms drag_terms(const PointCloud& cloud);
double drag_proxy(const PointCloud& cloud);
double boxiness(const PointCloud& cloud);
double occupancy(const PointCloud& cloud);

// Plain-text ".xyz": one "x y z" line per point.
std::string to_xyz(const PointCloud& cloud);
PointCloud parse_xyz(std::string_view text);
void save_xyz(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud load_xyz(const std::filesystem::path& path);
// ASCII PLY vertex list.
void save_ply(const std::filesystem::path& path, const PointCloud& cloud);

}  // namespace cforge
