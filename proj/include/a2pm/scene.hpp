#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "a2pm/geometry.hpp"
#include "a2pm/semantic_map.hpp"

namespace a2pm {

/// World-to-camera pose: X_cam = r * X_world + t. OpenCV axes (x right,
/// y down, z forward).
struct Camera {
  CameraIntrinsics k;
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  Eigen::Vector3d center() const { return -r.transpose() * t; }

  static Camera look_at(const CameraIntrinsics& k, const Eigen::Vector3d& eye, const Eigen::Vector3d& target) {
    const Eigen::Vector3d up(0.0, -1.0, 0.0);
    const Eigen::Vector3d z = (target - eye).normalized();
    const Eigen::Vector3d x = z.cross(up).normalized();
    const Eigen::Vector3d y = z.cross(x);
    Camera c;
    c.k = k;
    c.r.row(0) = x.transpose();
    c.r.row(1) = y.transpose();
    c.r.row(2) = z.transpose();
    c.t = -c.r * eye;
    return c;
  }
};

/// Axis-aligned box [lo, hi] or infinite plane normal . X = offset. A plane
/// with tile_labels > 0 takes label + (tile pattern mod tile_labels) on a grid
/// of tile_size meters instead of a single label.
struct Primitive {
  enum class Type { kBox, kPlane };
  Type type = Type::kBox;
  Eigen::Vector3d lo = Eigen::Vector3d::Zero();
  Eigen::Vector3d hi = Eigen::Vector3d::Zero();
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
  double offset = 0.0;
  Label label = 0;
  std::uint32_t texture_seed = 0;
  int tile_labels = 0;
  double tile_size = 1.0;

  static Primitive box(const Eigen::Vector3d& lo, const Eigen::Vector3d& hi, Label label, std::uint32_t seed) {
    Primitive p;
    p.type = Type::kBox;
    p.lo = lo;
    p.hi = hi;
    p.label = label;
    p.texture_seed = seed;
    return p;
  }
  static Primitive plane(const Eigen::Vector3d& normal, double offset, Label label, std::uint32_t seed) {
    Primitive p;
    p.type = Type::kPlane;
    p.normal = normal.normalized();
    p.offset = offset / normal.norm();
    p.label = label;
    p.texture_seed = seed;
    return p;
  }
};

struct Scene {
  std::vector<Primitive> primitives;
  Camera cam0;
  Camera cam1;
  int width = 640;
  int height = 480;

  /// Relative pose X1 = r X0 + t.
  Eigen::Matrix3d relative_rotation() const { return cam1.r * cam0.r.transpose(); }
  Eigen::Vector3d relative_translation() const { return cam1.t - relative_rotation() * cam0.t; }
};

struct Hit {
  double depth = 0.0;  // camera z
  std::size_t primitive = 0;
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  int axis = 2;  // for boxes, the axis of the face that was hit
};

/// Nearest surface along the ray through continuous pixel `px`.
inline std::optional<Hit> cast_ray(const Scene& scene, const Camera& cam, const Point2& px) {
  const Eigen::Vector3d dc = cam.k.matrix().inverse() * px.homogeneous();  // z == 1
  const Eigen::Vector3d d = cam.r.transpose() * dc;
  const Eigen::Vector3d o = cam.center();
  std::optional<Hit> best;
  constexpr double kMinDepth = 1e-6;
  for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
    const Primitive& p = scene.primitives[i];
    double t = std::numeric_limits<double>::infinity();
    int axis = 2;
    if (p.type == Primitive::Type::kPlane) {
      const double den = p.normal.dot(d);
      if (std::abs(den) < 1e-12) continue;
      t = (p.offset - p.normal.dot(o)) / den;
    } else {
      double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
      int enter_axis = 0;
      bool miss = false;
      for (int a = 0; a < 3; ++a) {
        if (std::abs(d[a]) < 1e-15) {
          if (o[a] < p.lo[a] || o[a] > p.hi[a]) miss = true;
          continue;
        }
        double ta = (p.lo[a] - o[a]) / d[a], tb = (p.hi[a] - o[a]) / d[a];
        if (ta > tb) std::swap(ta, tb);
        if (ta > t0) t0 = ta, enter_axis = a;
        t1 = std::min(t1, tb);
      }
      if (miss || t0 > t1 || t0 < kMinDepth) continue;
      t = t0;
      axis = enter_axis;
    }
    if (!(t > kMinDepth) || !std::isfinite(t)) continue;
    if (!best || t < best->depth) best = Hit{t, i, o + t * d, axis};
  }
  return best;
}

inline Label label_at(const Primitive& p, const Eigen::Vector3d& x) {
  if (p.type != Primitive::Type::kPlane || p.tile_labels <= 0) return p.label;
  // Tile coordinates in the plane's own basis.
  Eigen::Vector3d u = p.normal.cross(std::abs(p.normal.x()) < 0.9 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY());
  u.normalize();
  const Eigen::Vector3d v = p.normal.cross(u);
  const long long iu = static_cast<long long>(std::floor(u.dot(x) / p.tile_size));
  const long long iv = static_cast<long long>(std::floor(v.dot(x) / p.tile_size));
  const long long k = ((iu * 2 + iv * 3) % p.tile_labels + p.tile_labels) % p.tile_labels;
  return static_cast<Label>(p.label + k);
}

/// Maps a pixel of `from` to `to` through the scene surface, if that surface
/// point is visible (unoccluded and in front) in `to`.
inline std::optional<Point2> transfer(const Scene& scene, const Camera& from, const Camera& to, const Point2& q,
                                      int to_width, int to_height) {
  const auto hit = cast_ray(scene, from, q);
  if (!hit) return std::nullopt;
  const Eigen::Vector3d xc = to.r * hit->point + to.t;
  if (xc.z() <= 1e-9) return std::nullopt;
  const Eigen::Vector3d ph = to.k.matrix() * xc;
  const Point2 p{ph.x() / ph.z(), ph.y() / ph.z()};
  if (!(p.x >= -0.5 && p.y >= -0.5 && p.x < to_width - 0.5 && p.y < to_height - 0.5)) return std::nullopt;
  const auto back = cast_ray(scene, to, p);
  if (!back || std::abs(back->depth - xc.z()) > 1e-6 * xc.z() + 1e-9) return std::nullopt;
  return p;
}

}  // namespace a2pm
