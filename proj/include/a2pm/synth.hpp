#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "a2pm/error.hpp"
#include "a2pm/ground_truth.hpp"
#include "a2pm/image.hpp"
#include "a2pm/scene.hpp"

namespace a2pm {

struct RenderedView {
  RgbImage rgb;
  SemanticMap sem;
  DepthMap depth;
};

struct RenderedPair {
  RgbImage rgb0, rgb1;
  SemanticMap sem0, sem1;
  DepthMap depth0, depth1;
  GroundTruth gt;
};

namespace detail {

inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline double lattice(std::uint32_t seed, long long i, long long j) {
  const std::uint64_t h = mix64(mix64(seed) ^ mix64(static_cast<std::uint64_t>(i) * 0x632be59bd9b4e019ULL) ^
                                static_cast<std::uint64_t>(j));
  return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
}

inline double value_noise(std::uint32_t seed, double u, double v) {
  const double fu = std::floor(u), fv = std::floor(v);
  const long long iu = static_cast<long long>(fu), iv = static_cast<long long>(fv);
  double a = u - fu, b = v - fv;
  a = a * a * (3 - 2 * a);
  b = b * b * (3 - 2 * b);
  const double n00 = lattice(seed, iu, iv), n10 = lattice(seed, iu + 1, iv);
  const double n01 = lattice(seed, iu, iv + 1), n11 = lattice(seed, iu + 1, iv + 1);
  return (n00 * (1 - a) + n10 * a) * (1 - b) + (n01 * (1 - a) + n11 * a) * b;
}

}  // namespace detail

/// Procedural surface color: per-primitive base hue modulated by three
/// octaves of lattice value noise in surface coordinates (meters).
inline std::array<std::uint8_t, 3> surface_color(const Primitive& p, const Hit& hit) {
  double u = 0.0, v = 0.0;
  if (p.type == Primitive::Type::kBox) {
    const int a = (hit.axis + 1) % 3, b = (hit.axis + 2) % 3;
    u = hit.point[a] + 17.0 * hit.axis;
    v = hit.point[b];
  } else {
    Eigen::Vector3d e = p.normal.cross(std::abs(p.normal.x()) < 0.9 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY());
    e.normalize();
    u = e.dot(hit.point);
    v = p.normal.cross(e).dot(hit.point);
  }
  const std::uint32_t seed = p.texture_seed;
  const double n = 0.5 * detail::value_noise(seed, u * 6.0, v * 6.0) +
                   0.3 * detail::value_noise(seed + 1, u * 17.0, v * 17.0) +
                   0.2 * detail::value_noise(seed + 2, u * 41.0, v * 41.0);
  std::array<std::uint8_t, 3> out{};
  for (int c = 0; c < 3; ++c) {
    const double base = 0.35 + 0.65 * detail::lattice(seed ^ 0xabcdu, c, label_at(p, hit.point));
    out[c] = static_cast<std::uint8_t>(std::lround(std::clamp(255.0 * base * (0.2 + 0.8 * n), 0.0, 255.0)));
  }
  return out;
}

inline RenderedView render_view(const Scene& scene, const Camera& cam) {
  RenderedView v{RgbImage(scene.width, scene.height), SemanticMap(scene.width, scene.height),
                 DepthMap(scene.width, scene.height)};
  for (int y = 0; y < scene.height; ++y) {
    for (int x = 0; x < scene.width; ++x) {
      const auto hit = cast_ray(scene, cam, {static_cast<double>(x), static_cast<double>(y)});
      if (!hit) continue;
      const Primitive& p = scene.primitives[hit->primitive];
      const auto c = surface_color(p, *hit);
      std::copy(c.begin(), c.end(), v.rgb.px(x, y));
      v.sem.at(x, y) = label_at(p, hit->point);
      v.depth.at(x, y) = static_cast<float>(hit->depth);
    }
  }
  return v;
}

/// Fraction of a stride grid of `from` pixels visible in `to`.
inline double covisible_fraction(const Scene& scene, const Camera& from, const Camera& to, int stride = 4) {
  long long total = 0, seen = 0;
  for (int y = stride / 2; y < scene.height; y += stride) {
    for (int x = stride / 2; x < scene.width; x += stride) {
      ++total;
      seen += transfer(scene, from, to, {static_cast<double>(x), static_cast<double>(y)}, scene.width, scene.height)
                  .has_value();
    }
  }
  return total ? static_cast<double>(seen) / static_cast<double>(total) : 0.0;
}

inline GroundTruth ground_truth_for(const Scene& scene) {
  GroundTruth gt;
  gt.k0 = scene.cam0.k;
  gt.k1 = scene.cam1.k;
  gt.r = scene.relative_rotation();
  gt.t = scene.relative_translation();
  gt.width0 = gt.width1 = scene.width;
  gt.height0 = gt.height1 = scene.height;
  gt.scene = std::make_shared<Scene>(scene);
  return gt;
}

/// Renders both views. Throws no-overlap when less than 5% of either image is
/// co-visible in the other.
inline RenderedPair generate(const Scene& scene) {
  if (scene.primitives.empty()) throw Error(ErrorCode::kInvalidArgument, "scene has no primitives");
  scene.cam0.k.validate();
  scene.cam1.k.validate();
  const double c01 = covisible_fraction(scene, scene.cam0, scene.cam1);
  const double c10 = covisible_fraction(scene, scene.cam1, scene.cam0);
  if (c01 < 0.05 || c10 < 0.05) throw Error(ErrorCode::kNoOverlap, "views share less than 5% co-visible area");
  RenderedView v0 = render_view(scene, scene.cam0);
  RenderedView v1 = render_view(scene, scene.cam1);
  RenderedPair out{std::move(v0.rgb), std::move(v1.rgb), std::move(v0.sem), std::move(v1.sem),
                   std::move(v0.depth), std::move(v1.depth), ground_truth_for(scene)};
  out.gt.depth0 = std::make_shared<DepthMap>(out.depth0);
  out.gt.depth1 = std::make_shared<DepthMap>(out.depth1);
  return out;
}

// ---------------------------------------------------------------------------
// Standard fixtures

inline CameraIntrinsics fixture_intrinsics() { return {500.0, 500.0, 320.0, 240.0, 0.0}; }

namespace detail {

inline std::uint32_t texture_seed(std::uint64_t scene_seed, Label label, int instance = 0) {
  return static_cast<std::uint32_t>(mix64(scene_seed * 1315423911ULL + label * 2654435761ULL + instance));
}

inline Eigen::Vector3d random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Vector3d v(n(rng), n(rng), n(rng));
  return v.normalized();
}

inline void add_room(Scene& s, std::uint64_t seed) {
  s.primitives.push_back(Primitive::plane({0, -1, 0}, -1.6, 1, texture_seed(seed, 1)));  // floor y = 1.6
  s.primitives.push_back(Primitive::plane({0, 0, 1}, 10.0, 2, texture_seed(seed, 2)));   // back wall z = 10
  s.primitives.push_back(Primitive::plane({-1, 0, 0}, 5.0, 3, texture_seed(seed, 3)));   // left wall x = -5
  s.primitives.push_back(Primitive::plane({1, 0, 0}, 5.0, 4, texture_seed(seed, 4)));    // right wall x = 5
  s.primitives.push_back(Primitive::plane({0, 1, 0}, -2.5, 5, texture_seed(seed, 5)));   // ceiling y = -2.5
}

inline Primitive floor_box(double cx, double cz, double w, double h, double d, Label label, std::uint32_t seed) {
  return Primitive::box({cx - w / 2, 1.6 - h, cz - d / 2}, {cx + w / 2, 1.6, cz + d / 2}, label, seed);
}

/// Second camera displaced sideways and rotated by at most `max_rot_deg`.
inline void moderate_baseline(Scene& s, std::mt19937_64& rng, double baseline, double max_rot_deg,
                              const Eigen::Vector3d& look) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Eigen::Vector3d eye0(0.0, 0.0, 0.0);
  s.cam0 = Camera::look_at(fixture_intrinsics(), eye0, look + Eigen::Vector3d(0.2 * u(rng), 0.1 * u(rng), 0.0));
  const double side = u(rng) < 0 ? -1.0 : 1.0;
  const Eigen::Vector3d eye1 = eye0 + Eigen::Vector3d(side * baseline, 0.05 * u(rng), 0.1 * u(rng));
  Camera c1 = Camera::look_at(fixture_intrinsics(), eye1, look + Eigen::Vector3d(0.2 * u(rng), 0.1 * u(rng), 0.0));
  const Eigen::Matrix3d jitter = rotation_about(random_unit(rng), max_rot_deg * 0.5 * (1.0 + u(rng)));
  c1.r = jitter * c1.r;
  c1.t = -c1.r * eye1;
  s.cam1 = c1;
}

}  // namespace detail

/// Six labeled boxes (10..15) in a room with floor 1, walls 2/3/4, ceiling 5.
inline Scene room6_scene(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> j(-0.2, 0.2);
  Scene s;
  detail::add_room(s, seed);
  using detail::floor_box;
  using detail::texture_seed;
  s.primitives.push_back(floor_box(-3.2 + j(rng), 7.0 + j(rng), 1.2, 1.0, 1.0, 10, texture_seed(seed, 10)));
  s.primitives.push_back(floor_box(0.0 + j(rng), 7.5 + j(rng), 1.4, 0.8, 0.8, 11, texture_seed(seed, 11)));
  s.primitives.push_back(floor_box(3.0 + j(rng), 6.5 + j(rng), 1.0, 1.4, 1.0, 12, texture_seed(seed, 12)));
  s.primitives.push_back(floor_box(-1.6 + j(rng), 4.5 + j(rng), 0.8, 0.7, 0.8, 13, texture_seed(seed, 13)));
  s.primitives.push_back(floor_box(1.8 + j(rng), 4.8 + j(rng), 0.9, 0.9, 0.9, 14, texture_seed(seed, 14)));
  const double px = j(rng);
  s.primitives.push_back(Primitive::box({px - 1.0, -1.4, 9.9}, {px + 1.0, -0.4, 10.0}, 15, texture_seed(seed, 15)));
  detail::moderate_baseline(s, rng, 0.5, 8.0, {0.0, 0.6, 6.0});
  return s;
}

/// Two identical label-20 boxes placed symmetrically, plus distinct objects.
inline Scene twins_scene(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> j(-0.1, 0.1);
  Scene s;
  detail::add_room(s, seed);
  using detail::floor_box;
  using detail::texture_seed;
  const double z = 5.5 + j(rng);
  s.primitives.push_back(floor_box(-1.5, z, 0.9, 0.9, 0.9, 20, texture_seed(seed, 20)));
  s.primitives.push_back(floor_box(1.5, z, 0.9, 0.9, 0.9, 20, texture_seed(seed, 20, 1)));
  s.primitives.push_back(floor_box(0.0 + j(rng), 8.5, 1.2, 1.0, 0.8, 10, texture_seed(seed, 10)));
  s.primitives.push_back(Primitive::box({-0.8, -1.4, 9.9}, {0.8, -0.4, 10.0}, 15, texture_seed(seed, 15)));
  s.primitives.push_back(floor_box(-3.8, 8.0 + j(rng), 0.8, 1.2, 0.8, 11, texture_seed(seed, 11)));
  s.primitives.push_back(floor_box(3.8, 8.0 + j(rng), 0.8, 1.2, 0.8, 12, texture_seed(seed, 12)));
  detail::moderate_baseline(s, rng, 0.3, 4.0, {0.0, 0.6, 6.0});
  return s;
}

/// One small box (label 30) on an unlabeled textured ground plane, seen from
/// above so that at least two faces are visible.
inline Scene sparse_scene(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> j(-0.1, 0.1);
  Scene s;
  s.primitives.push_back(Primitive::plane({0, -1, 0}, 0.0, 0, detail::texture_seed(seed, 0)));  // ground y = 0
  const double bx = 0.3 + j(rng), bz = 1.5 + j(rng);
  s.primitives.push_back(Primitive::box({bx, -0.5, bz - 0.3}, {bx + 0.6, 0.0, bz + 0.3}, 30, detail::texture_seed(seed, 30)));
  const Eigen::Vector3d eye0(j(rng), -3.0, -2.0);
  const Eigen::Vector3d target(0.0, 0.0, 1.5);
  s.cam0 = Camera::look_at(fixture_intrinsics(), eye0, target + Eigen::Vector3d(j(rng), 0, j(rng)));
  const Eigen::Vector3d eye1 = eye0 + Eigen::Vector3d(0.5 + j(rng), j(rng), 0.1 + j(rng));
  s.cam1 = Camera::look_at(fixture_intrinsics(), eye1, target + Eigen::Vector3d(j(rng), 0, j(rng)));
  return s;
}

/// Fronto-parallel tiled plane at z = 4 seen under a pure x translation.
inline Scene planar_scene(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> j(-0.05, 0.05);
  Scene s;
  Primitive p = Primitive::plane({0, 0, 1}, 4.0, 40, detail::texture_seed(seed, 40));
  p.tile_labels = 5;
  p.tile_size = 0.9;
  s.primitives.push_back(p);
  s.cam0 = Camera{fixture_intrinsics(), Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero()};
  s.cam1 = Camera{fixture_intrinsics(), Eigen::Matrix3d::Identity(), Eigen::Vector3d(-(0.3 + j(rng)), 0.0, 0.0)};
  return s;
}

/// Plane-induced homography of the planar fixture (plane n . X0 = d in
/// camera-0 coordinates).
inline Eigen::Matrix3d plane_homography(const CameraIntrinsics& k0, const CameraIntrinsics& k1,
                                        const Eigen::Matrix3d& r, const Eigen::Vector3d& t,
                                        const Eigen::Vector3d& n, double d) {
  return k1.matrix() * (r + t * n.transpose() / d) * k0.matrix().inverse();
}

inline const std::vector<std::string>& fixture_names() {
  static const std::vector<std::string> names = {"room6", "twins", "sparse", "planar"};
  return names;
}

inline Scene fixture_scene(const std::string& name, std::uint64_t seed) {
  if (name == "room6") return room6_scene(seed);
  if (name == "twins") return twins_scene(seed);
  if (name == "sparse") return sparse_scene(seed);
  if (name == "planar") return planar_scene(seed);
  throw Error(ErrorCode::kUnknownFixture, "unknown fixture: " + name);
}

inline RenderedPair standard_fixture(const std::string& name, std::uint64_t seed) {
  const Scene scene = fixture_scene(name, seed);
  RenderedPair pair = generate(scene);
  if (name == "planar") {
    const Eigen::Vector3d n = scene.cam0.r * Eigen::Vector3d::UnitZ();
    const double d = 4.0 + n.dot(scene.cam0.t);
    pair.gt.homography = plane_homography(pair.gt.k0, pair.gt.k1, pair.gt.r, pair.gt.t, n, d);
  }
  return pair;
}

}  // namespace a2pm
