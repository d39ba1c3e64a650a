#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace proprio::geometry {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const { return std::sqrt(dot(*this)); }
};

struct Vec2 {
  double x = 0, y = 0;
};

/// Unordered set of 3D points, mm.
struct PointCloud {
  std::vector<Vec3> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

enum class Boundary { clamped_all_sides, clamped_one_side };

/// Membrane height field z(x,y) on a regular g x g node grid over the
/// square [0,W]^2. Storage is row-major with row r at y = r*spacing and
/// column c at x = c*spacing. Fields with boundary clamped_one_side are
/// kinematic cylindrical bends: the grid holds material-frame heights and
/// wall_angle_deg carries the datum needed to recover in-plane
/// foreshortening (see lift()).
struct DeformationField {
  int g = 80;
  double extent = 140.0;  // W, mm
  Boundary boundary = Boundary::clamped_all_sides;
  double wall_angle_deg = 0.0;  // bend mode only
  std::vector<double> z;        // g*g heights, mm

  DeformationField() = default;
  DeformationField(int g_, double extent_)
      : g(g_), extent(extent_), z(static_cast<std::size_t>(g_) * g_, 0.0) {
    if (g_ < 2) throw std::invalid_argument("DeformationField: g must be >= 2");
    if (extent_ <= 0) throw std::invalid_argument("DeformationField: extent must be > 0");
  }

  double spacing() const { return extent / (g - 1); }
  double& at(int r, int c) { return z[static_cast<std::size_t>(r) * g + c]; }
  double at(int r, int c) const { return z[static_cast<std::size_t>(r) * g + c]; }
  double node_x(int c) const { return spacing() * c; }
  double node_y(int r) const { return spacing() * r; }

  /// Bilinear interpolation of the stored height at material point (x,y).
  double sample(double x, double y) const {
    const double h = spacing();
    double fx = std::clamp(x / h, 0.0, static_cast<double>(g - 1));
    double fy = std::clamp(y / h, 0.0, static_cast<double>(g - 1));
    int c0 = std::min(static_cast<int>(fx), g - 2);
    int r0 = std::min(static_cast<int>(fy), g - 2);
    double tx = fx - c0, ty = fy - r0;
    double z00 = at(r0, c0), z01 = at(r0, c0 + 1);
    double z10 = at(r0 + 1, c0), z11 = at(r0 + 1, c0 + 1);
    return (1 - ty) * ((1 - tx) * z00 + tx * z01) + ty * ((1 - tx) * z10 + tx * z11);
  }

  /// Maps a material point to its 3D surface position. Indentation fields
  /// deform vertically only; bend fields wrap the developable cylinder, so
  /// the in-plane x coordinate foreshortens while arc length is preserved.
  Vec3 lift(double x, double y) const {
    if (boundary == Boundary::clamped_one_side && wall_angle_deg > 0.0) {
      const double theta = wall_angle_deg * M_PI / 180.0;
      const double radius = extent / theta;
      return {radius * std::sin(x / radius), y, -radius * (1.0 - std::cos(x / radius))};
    }
    return {x, y, sample(x, y)};
  }

  /// Outward-facing surface normal at material point (x,y), estimated from
  /// central differences of lift(). Oriented with positive z component.
  Vec3 normal(double x, double y) const {
    const double d = 0.5 * spacing();
    auto clamped_lift = [&](double u, double v) {
      return lift(std::clamp(u, 0.0, extent), std::clamp(v, 0.0, extent));
    };
    Vec3 tu = clamped_lift(x + d, y) - clamped_lift(x - d, y);
    Vec3 tv = clamped_lift(x, y + d) - clamped_lift(x, y - d);
    Vec3 n = tu.cross(tv);
    double len = n.norm();
    if (len < 1e-15) return {0, 0, 1};
    n = n * (1.0 / len);
    return n.z < 0 ? n * -1.0 : n;
  }

  /// Invariant checks: finite heights, clamped boundaries at rest, sane
  /// magnitude. Bend fields legitimately exceed the indentation regime's
  /// 40 mm bound (a 150 deg wrap of a 140 mm sheet dips ~100 mm), so the
  /// magnitude cap scales with the extent in that mode.
  void validate() const {
    if (z.size() != static_cast<std::size_t>(g) * g)
      throw std::logic_error("DeformationField: grid size mismatch");
    double cap = boundary == Boundary::clamped_all_sides ? 40.0 : extent;
    for (double v : z) {
      if (!std::isfinite(v)) throw std::logic_error("DeformationField: non-finite height");
      if (std::abs(v) > cap) throw std::logic_error("DeformationField: height exceeds sanity bound");
    }
    if (boundary == Boundary::clamped_all_sides) {
      for (int i = 0; i < g; ++i) {
        if (std::abs(at(0, i)) > 1e-9 || std::abs(at(g - 1, i)) > 1e-9 ||
            std::abs(at(i, 0)) > 1e-9 || std::abs(at(i, g - 1)) > 1e-9)
          throw std::logic_error("DeformationField: clamped boundary not at rest");
      }
    }
  }
};

enum class IndenterShape { sphere, cylinder, cube, triangular_prism, u_shape };

inline const char* to_string(IndenterShape s) {
  switch (s) {
    case IndenterShape::sphere: return "sphere";
    case IndenterShape::cylinder: return "cylinder";
    case IndenterShape::cube: return "cube";
    case IndenterShape::triangular_prism: return "triangular_prism";
    case IndenterShape::u_shape: return "u_shape";
  }
  return "?";
}

inline IndenterShape indenter_shape_from_string(const std::string& s) {
  if (s == "sphere") return IndenterShape::sphere;
  if (s == "cylinder") return IndenterShape::cylinder;
  if (s == "cube") return IndenterShape::cube;
  if (s == "triangular_prism") return IndenterShape::triangular_prism;
  if (s == "u_shape") return IndenterShape::u_shape;
  throw std::invalid_argument("unknown indenter shape: " + s);
}

/// Rigid indenter pressed vertically into the membrane. Cylinders lie on
/// their side (axis along local x), prisms rest on an edge, cubes and
/// U-shapes press a flat footprint. Sizes default to the 30-60 mm range.
struct Indenter {
  IndenterShape shape = IndenterShape::sphere;
  double radius = 20.0;               // sphere, cylinder
  double length = 60.0;               // cylinder / prism axis
  double side = 30.0;                 // cube
  double apex_half_angle_deg = 45.0;  // prism
  double foot_width = 12.0;           // u_shape
  double foot_length = 45.0;          // u_shape
  double foot_gap = 24.0;             // u_shape, clear space between feet
  double x = 70.0, y = 70.0;          // planar pose, mm
  double yaw_deg = 0.0;
  double depth = 0.0;  // commanded indentation, mm

  static Indenter sphere(double r, double x, double y, double depth) {
    Indenter it;
    it.shape = IndenterShape::sphere;
    it.radius = r; it.x = x; it.y = y; it.depth = depth;
    return it;
  }
  static Indenter cylinder(double r, double len, double x, double y, double yaw, double depth) {
    Indenter it;
    it.shape = IndenterShape::cylinder;
    it.radius = r; it.length = len; it.x = x; it.y = y; it.yaw_deg = yaw; it.depth = depth;
    return it;
  }
  static Indenter cube(double side, double x, double y, double yaw, double depth) {
    Indenter it;
    it.shape = IndenterShape::cube;
    it.side = side; it.x = x; it.y = y; it.yaw_deg = yaw; it.depth = depth;
    return it;
  }
  static Indenter prism(double len, double apex_half_angle, double x, double y, double yaw,
                        double depth) {
    Indenter it;
    it.shape = IndenterShape::triangular_prism;
    it.length = len; it.apex_half_angle_deg = apex_half_angle;
    it.x = x; it.y = y; it.yaw_deg = yaw; it.depth = depth;
    return it;
  }
  static Indenter u_shape(double width, double len, double gap, double x, double y, double yaw,
                          double depth) {
    Indenter it;
    it.shape = IndenterShape::u_shape;
    it.foot_width = width; it.foot_length = len; it.foot_gap = gap;
    it.x = x; it.y = y; it.yaw_deg = yaw; it.depth = depth;
    return it;
  }

  /// Height of the lower surface above the tip plane at local offsets
  /// (u along yaw, v across), or +inf outside the contact footprint.
  double bottom_local(double u, double v) const {
    constexpr double inf = std::numeric_limits<double>::infinity();
    switch (shape) {
      case IndenterShape::sphere: {
        double rho2 = u * u + v * v;
        if (rho2 >= radius * radius) return inf;
        return radius - std::sqrt(radius * radius - rho2);
      }
      case IndenterShape::cylinder: {
        if (std::abs(u) > 0.5 * length || std::abs(v) >= radius) return inf;
        return radius - std::sqrt(radius * radius - v * v);
      }
      case IndenterShape::cube: {
        if (std::abs(u) > 0.5 * side || std::abs(v) > 0.5 * side) return inf;
        return 0.0;
      }
      case IndenterShape::triangular_prism: {
        if (std::abs(u) > 0.5 * length) return inf;
        double slope = 1.0 / std::tan(apex_half_angle_deg * M_PI / 180.0);
        return std::abs(v) * slope;
      }
      case IndenterShape::u_shape: {
        double half_u = 0.5 * foot_length;
        double inner = 0.5 * foot_gap;
        double outer = inner + foot_width;
        if (std::abs(u) > half_u || std::abs(v) > outer) return inf;
        bool on_foot = std::abs(v) >= inner;
        bool on_web = u >= half_u - foot_width;  // web closes one end of the U
        return (on_foot || on_web) ? 0.0 : inf;
      }
    }
    return inf;
  }

  /// Obstacle height at world (px, py): upper bound on the membrane height.
  /// Negative values force contact; +inf means unconstrained.
  double obstacle(double px, double py) const {
    const double a = yaw_deg * M_PI / 180.0;
    const double dx = px - x, dy = py - y;
    const double u = std::cos(a) * dx + std::sin(a) * dy;
    const double v = -std::sin(a) * dx + std::cos(a) * dy;
    double b = bottom_local(u, v);
    return std::isinf(b) ? b : b - depth;
  }

  /// Conservative radius of the contact footprint, for pose feasibility.
  double footprint_radius() const {
    switch (shape) {
      case IndenterShape::sphere: return radius;
      case IndenterShape::cylinder: return std::hypot(0.5 * length, radius);
      case IndenterShape::cube: return side * M_SQRT1_2;
      case IndenterShape::triangular_prism: {
        double half_width = depth * std::tan(apex_half_angle_deg * M_PI / 180.0);
        return std::hypot(0.5 * length, half_width);
      }
      case IndenterShape::u_shape:
        return std::hypot(0.5 * foot_length, 0.5 * foot_gap + foot_width);
    }
    return 0.0;
  }

  void validate(double extent) const {
    if (depth < 0.0 || depth > 25.0)
      throw std::invalid_argument("Indenter: depth must lie in [0, 25] mm");
    double r = footprint_radius();
    if (x - r < 0.0 || x + r > extent || y - r < 0.0 || y + r > extent)
      throw std::invalid_argument("Indenter: contact footprint leaves the membrane interior");
  }
};

struct FieldConfig {
  int g = 80;
  double extent = 140.0;
};

struct SolveOptions {
  int max_iters = 20000;
  double tol = 1e-6;    // fixed-point residual, mm
  double omega = 1.9;   // over-relaxation; 1.0 recovers plain Gauss-Seidel
};

class SolveFailure : public std::runtime_error {
 public:
  SolveFailure(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

/// Quasi-static indentation: minimizes the discrete membrane (Laplacian)
/// energy subject to z <= obstacle and z = 0 on the clamped boundary,
/// via projected Gauss-Seidel sweeps with over-relaxation. Deterministic
/// for fixed inputs (fixed sweep order, single-threaded).
inline DeformationField indent(const FieldConfig& config, const Indenter& indenter,
                               const SolveOptions& opt = {}) {
  indenter.validate(config.extent);
  DeformationField field(config.g, config.extent);
  const int g = config.g;

  // Obstacle per node; +inf where the indenter cannot touch.
  std::vector<double> obstacle(static_cast<std::size_t>(g) * g,
                               std::numeric_limits<double>::infinity());
  bool any_contact = false;
  for (int r = 1; r < g - 1; ++r)
    for (int c = 1; c < g - 1; ++c) {
      double h = indenter.obstacle(field.node_x(c), field.node_y(r));
      obstacle[static_cast<std::size_t>(r) * g + c] = h;
      if (h < 0.0) any_contact = true;
    }
  if (!any_contact) return field;  // no penetration anywhere; flat solution

  auto residual_of = [&]() {
    double res = 0.0;
    for (int r = 1; r < g - 1; ++r)
      for (int c = 1; c < g - 1; ++c) {
        std::size_t i = static_cast<std::size_t>(r) * g + c;
        double gs = 0.25 * (field.at(r - 1, c) + field.at(r + 1, c) + field.at(r, c - 1) +
                            field.at(r, c + 1));
        double target = std::min(gs, obstacle[i]);
        res = std::max(res, std::abs(target - field.z[i]));
      }
    return res;
  };

  double res = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < opt.max_iters; ++iter) {
    for (int r = 1; r < g - 1; ++r)
      for (int c = 1; c < g - 1; ++c) {
        std::size_t i = static_cast<std::size_t>(r) * g + c;
        double gs = 0.25 * (field.at(r - 1, c) + field.at(r + 1, c) + field.at(r, c - 1) +
                            field.at(r, c + 1));
        double znew = field.z[i] + opt.omega * (gs - field.z[i]);
        field.z[i] = std::min(znew, obstacle[i]);
      }
    if (iter % 8 == 7 || iter == opt.max_iters - 1) {
      res = residual_of();
      if (res < opt.tol) {
        field.validate();
        return field;
      }
    }
  }
  throw SolveFailure("indent: projected Gauss-Seidel did not converge", res);
}

/// Kinematic gravity-bend: the sheet, clamped along x = 0, wraps a circular
/// arc whose total turning equals the wall angle. Arc length along the bend
/// direction is preserved (inextensible sheet); the stored grid holds the
/// material-frame heights of the arc.
inline DeformationField bend(double wall_angle_deg, const FieldConfig& config = {}) {
  if (wall_angle_deg < 0.0 || wall_angle_deg > 150.0)
    throw std::invalid_argument("bend: wall angle must lie in [0, 150] deg");
  DeformationField field(config.g, config.extent);
  field.boundary = Boundary::clamped_one_side;
  field.wall_angle_deg = wall_angle_deg;
  if (wall_angle_deg == 0.0) return field;

  const double theta = wall_angle_deg * M_PI / 180.0;
  const double radius = config.extent / theta;
  for (int r = 0; r < config.g; ++r)
    for (int c = 0; c < config.g; ++c)
      field.at(r, c) = -radius * (1.0 - std::cos(field.node_x(c) / radius));
  return field;
}

/// Samples every s-th grid node, yielding ceil(g/s)^2 points.
inline PointCloud to_pointcloud(const DeformationField& field, int stride) {
  if (stride < 1) throw std::invalid_argument("to_pointcloud: stride must be >= 1");
  const int n = (field.g + stride - 1) / stride;
  if (n < 2) throw std::invalid_argument("to_pointcloud: stride leaves fewer than 2 samples per axis");
  PointCloud cloud;
  cloud.points.reserve(static_cast<std::size_t>(n) * n);
  for (int r = 0; r < field.g; r += stride)
    for (int c = 0; c < field.g; c += stride)
      cloud.points.push_back(field.lift(field.node_x(c), field.node_y(r)));
  return cloud;
}

/// Deformation magnitude z_max - z_min, mm.
inline double delta_z(const PointCloud& cloud) {
  if (cloud.empty()) throw std::invalid_argument("delta_z: empty cloud");
  double lo = cloud.points.front().z, hi = lo;
  for (const auto& p : cloud.points) {
    lo = std::min(lo, p.z);
    hi = std::max(hi, p.z);
  }
  return hi - lo;
}

struct PathProfile {
  double geodesic_length = 0.0;     // mm, along the lifted surface path
  double curvature_integral = 0.0;  // integral of |normal curvature| ds, rad
};

/// Lifts the straight material segment a->b onto the surface and measures
/// its 3D arc length and the integrated |normal curvature| along the path
/// tangent (second-difference estimate at grid resolution).
inline PathProfile path_profile(const DeformationField& field, Vec2 a, Vec2 b) {
  auto inside = [&](Vec2 p) {
    return p.x >= 0.0 && p.x <= field.extent && p.y >= 0.0 && p.y <= field.extent;
  };
  if (!inside(a) || !inside(b))
    throw std::invalid_argument("path_profile: endpoints must lie on the membrane");
  const double planar_len = std::hypot(b.x - a.x, b.y - a.y);
  if (planar_len < 1e-12) throw std::invalid_argument("path_profile: degenerate path");

  const int n = std::max(2, static_cast<int>(std::ceil(planar_len / field.spacing())));
  const double h = planar_len / n;  // material step
  std::vector<Vec3> pts(n + 1);
  for (int k = 0; k <= n; ++k) {
    double t = static_cast<double>(k) / n;
    pts[k] = field.lift(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t);
  }

  PathProfile out;
  for (int k = 0; k < n; ++k) out.geodesic_length += (pts[k + 1] - pts[k]).norm();
  for (int k = 1; k < n; ++k) {
    double t = static_cast<double>(k) / n;
    Vec3 d1 = (pts[k + 1] - pts[k - 1]) * (1.0 / (2.0 * h));
    Vec3 d2 = (pts[k + 1] - pts[k] * 2.0 + pts[k - 1]) * (1.0 / (h * h));
    Vec3 nrm = field.normal(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t);
    double speed2 = d1.dot(d1);
    if (speed2 < 1e-15) continue;
    double kappa_n = d2.dot(nrm) / speed2;  // normal curvature; tangential terms cancel
    out.curvature_integral += std::abs(kappa_n) * std::sqrt(speed2) * h;
  }
  return out;
}

}  // namespace proprio::geometry
