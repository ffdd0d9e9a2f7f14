#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <optional>

#include "a2pm/geometry.hpp"
#include "a2pm/image.hpp"
#include "a2pm/scene.hpp"

namespace a2pm {

/// Two-view ground truth. The projector prefers, in order: an analytic scene,
/// a homography, depth maps.
struct GroundTruth {
  CameraIntrinsics k0;
  CameraIntrinsics k1;
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity();  // X1 = r X0 + t
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  int width0 = 0, height0 = 0, width1 = 0, height1 = 0;
  std::shared_ptr<const Scene> scene;
  std::optional<Eigen::Matrix3d> homography;
  std::shared_ptr<const DepthMap> depth0;
  std::shared_ptr<const DepthMap> depth1;
  // Relative depth tolerance for the depth-map occlusion test.
  double depth_tolerance = 0.02;

  PoseEstimate pose() const { return PoseEstimate::from(r, t.norm() > 0 ? t.normalized() : t, 0); }

  FundamentalMatrix fundamental() const { return fundamental_from_pose(k0, k1, r, t); }

  bool in_image1(const Point2& p) const {
    return p.x >= -0.5 && p.y >= -0.5 && p.x < width1 - 0.5 && p.y < height1 - 0.5;
  }

  /// Position of I0 pixel q in I1, or nothing where the ground truth is not
  /// valid (no depth, occluded, outside I1).
  std::optional<Point2> project(const Point2& q) const {
    if (scene) return transfer(*scene, scene->cam0, scene->cam1, q, width1, height1);
    if (homography) {
      const Eigen::Vector3d ph = *homography * q.homogeneous();
      if (std::abs(ph.z()) < 1e-15) return std::nullopt;
      const Point2 p{ph.x() / ph.z(), ph.y() / ph.z()};
      if (!in_image1(p)) return std::nullopt;
      return p;
    }
    if (!depth0) return std::nullopt;
    const int qx = static_cast<int>(std::lround(q.x)), qy = static_cast<int>(std::lround(q.y));
    if (!depth0->valid(qx, qy)) return std::nullopt;
    const double d = depth0->at(qx, qy);
    const Eigen::Vector3d x0 = d * (k0.matrix().inverse() * q.homogeneous());
    const Eigen::Vector3d x1 = r * x0 + t;
    if (x1.z() <= 1e-9) return std::nullopt;
    const Eigen::Vector3d ph = k1.matrix() * x1;
    const Point2 p{ph.x() / ph.z(), ph.y() / ph.z()};
    if (!in_image1(p)) return std::nullopt;
    if (depth1) {
      const int px = static_cast<int>(std::lround(p.x)), py = static_cast<int>(std::lround(p.y));
      if (!depth1->valid(px, py)) return std::nullopt;
      if (std::abs(depth1->at(px, py) - x1.z()) > depth_tolerance * x1.z()) return std::nullopt;
    }
    return p;
  }
};

}  // namespace a2pm
