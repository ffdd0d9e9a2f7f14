#pragma once

// Two-view epipolar numerics: Sampson distances, normalized 8-point
// fundamental matrix estimation, RANSAC, essential-matrix pose recovery and
// angular pose errors.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "a2pm/error.hpp"

namespace a2pm {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
  friend auto operator<=>(const Point2&, const Point2&) = default;

  Eigen::Vector3d homogeneous() const { return {x, y, 1.0}; }
  bool finite() const { return std::isfinite(x) && std::isfinite(y); }
};

inline double distance(const Point2& a, const Point2& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

/// A matched point pair: q in I0, p in I1.
struct Correspondence {
  Point2 q;
  Point2 p;

  friend bool operator==(const Correspondence&, const Correspondence&) = default;
  friend auto operator<=>(const Correspondence&, const Correspondence&) = default;
};

struct MatchSet {
  std::vector<Correspondence> matches;
  std::optional<std::string> source_area;

  std::size_t size() const { return matches.size(); }
  bool empty() const { return matches.empty(); }
  std::span<const Correspondence> view() const { return matches; }
};

/// Drops repeated (q, p) pairs, keeping the first occurrence in order.
inline MatchSet remove_duplicates(const MatchSet& s) {
  MatchSet out;
  out.source_area = s.source_area;
  out.matches.reserve(s.size());
  std::set<Correspondence> seen;
  for (const auto& c : s.matches) {
    if (seen.insert(c).second) out.matches.push_back(c);
  }
  return out;
}

/// Rank-2, unit-Frobenius fundamental matrix whose largest-magnitude entry is
/// positive (first in row-major order on exact ties).
class FundamentalMatrix {
 public:
  FundamentalMatrix() = default;

  /// Projects `m` to rank 2 and normalizes scale and sign.
  explicit FundamentalMatrix(const Eigen::Matrix3d& m) {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Vector3d s = svd.singularValues();
    s(2) = 0.0;
    m_ = normalized(svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose());
  }

  /// Skips the rank projection; for matrices that are rank 2 by construction.
  static FundamentalMatrix from_rank2(const Eigen::Matrix3d& m) {
    FundamentalMatrix f;
    f.m_ = normalized(m);
    return f;
  }

  const Eigen::Matrix3d& matrix() const { return m_; }

 private:
  static Eigen::Matrix3d normalized(const Eigen::Matrix3d& m) {
    const double n = m.norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw Error(ErrorCode::kInvalidArgument, "fundamental matrix has zero or non-finite norm");
    }
    Eigen::Matrix3d out = m / n;
    int best_r = 0, best_c = 0;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        if (std::abs(out(r, c)) > std::abs(out(best_r, best_c))) best_r = r, best_c = c;
    if (out(best_r, best_c) < 0.0) out = -out;
    return out;
  }

  Eigen::Matrix3d m_ = Eigen::Matrix3d::Zero();
};

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  double skew = 0.0;

  Eigen::Matrix3d matrix() const {
    Eigen::Matrix3d k;
    k << fx, skew, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
  }

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) {
      throw Error(ErrorCode::kInvalidArgument, "intrinsics require fx > 0 and fy > 0");
    }
  }
};

/// Relative pose of camera 1 w.r.t. camera 0: X1 = R * X0 + t.
struct PoseEstimate {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation_dir = Eigen::Vector3d::UnitX();
  std::size_t inlier_count = 0;

  static PoseEstimate from(const Eigen::Matrix3d& r, const Eigen::Vector3d& t,
                           std::size_t inliers = 0) {
    if (!(t.norm() > 0.0)) throw Error(ErrorCode::kInvalidArgument, "zero translation");
    return {r, t.normalized(), inliers};
  }
};

inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

inline Eigen::Matrix3d rotation_about(const Eigen::Vector3d& axis, double degrees) {
  return Eigen::AngleAxisd(degrees * std::numbers::pi / 180.0, axis.normalized()).toRotationMatrix();
}

/// F = K1^-T [t]x R K0^-1, so that p^T F q = 0.
inline FundamentalMatrix fundamental_from_pose(const CameraIntrinsics& k0, const CameraIntrinsics& k1,
                                               const Eigen::Matrix3d& r, const Eigen::Vector3d& t) {
  const Eigen::Matrix3d e = skew(t) * r;
  return FundamentalMatrix::from_rank2(k1.matrix().inverse().transpose() * e * k0.matrix().inverse());
}

// ---------------------------------------------------------------------------
// Sampson distance

/// Single-match Sampson distance in squared pixels. Invariant to the scale of
/// `f`. Throws when the point sits on an epipole (denominator < 1e-15).
inline double sampson_single(const Eigen::Matrix3d& f, const Correspondence& c) {
  const Eigen::Vector3d q = c.q.homogeneous();
  const Eigen::Vector3d p = c.p.homogeneous();
  const Eigen::Vector3d fq = f * q;
  const Eigen::Vector3d ftp = f.transpose() * p;
  const double num = p.dot(fq);
  const double den = fq(0) * fq(0) + fq(1) * fq(1) + ftp(0) * ftp(0) + ftp(1) * ftp(1);
  if (!(den >= 1e-15)) {
    throw Error(ErrorCode::kDegenerateDenominator, "match lies on an epipole");
  }
  return num * num / den;
}

inline double sampson_single(const FundamentalMatrix& f, const Correspondence& c) {
  return sampson_single(f.matrix(), c);
}

struct SampsonStats {
  double sum = 0.0;
  double mean = 0.0;
  std::size_t count = 0;
};

/// Sum of single-match distances over the set, plus the mean used for all
/// cross-area comparisons.
inline SampsonStats sampson_set(const FundamentalMatrix& f, std::span<const Correspondence> s) {
  if (s.empty()) throw Error(ErrorCode::kEmptySet, "sampson_set on an empty match set");
  SampsonStats st;
  for (const auto& c : s) st.sum += sampson_single(f, c);
  st.count = s.size();
  st.mean = st.sum / static_cast<double>(st.count);
  return st;
}

inline SampsonStats sampson_set(const FundamentalMatrix& f, const MatchSet& s) {
  return sampson_set(f, s.view());
}

// ---------------------------------------------------------------------------
// Estimation

namespace detail {

/// Similarity moving the centroid to the origin with mean distance sqrt(2).
template <typename Get>
Eigen::Matrix3d hartley_normalizer(std::span<const Correspondence> s, Get get) {
  double cx = 0.0, cy = 0.0;
  for (const auto& c : s) cx += get(c).x, cy += get(c).y;
  cx /= static_cast<double>(s.size());
  cy /= static_cast<double>(s.size());
  double mean_dist = 0.0;
  for (const auto& c : s) mean_dist += std::hypot(get(c).x - cx, get(c).y - cy);
  mean_dist /= static_cast<double>(s.size());
  const double k = mean_dist > 0.0 ? std::numbers::sqrt2 / mean_dist : 1.0;
  Eigen::Matrix3d t;
  t << k, 0.0, -k * cx, 0.0, k, -k * cy, 0.0, 0.0, 1.0;
  return t;
}

}  // namespace detail

/// Normalized 8-point algorithm over every correspondence in `s`.
inline FundamentalMatrix estimate_fundamental(std::span<const Correspondence> s) {
  if (s.size() < 8) {
    throw Error(ErrorCode::kInsufficientMatches,
                "need at least 8 correspondences, got " + std::to_string(s.size()));
  }
  for (const auto& c : s) {
    if (!c.q.finite() || !c.p.finite()) throw Error(ErrorCode::kInvalidArgument, "non-finite point");
  }
  const Eigen::Matrix3d t0 = detail::hartley_normalizer(s, [](const Correspondence& c) { return c.q; });
  const Eigen::Matrix3d t1 = detail::hartley_normalizer(s, [](const Correspondence& c) { return c.p; });

  // Pad to 9 rows so the full spectrum is available when exactly 8 matches.
  const Eigen::Index rows = std::max<Eigen::Index>(9, static_cast<Eigen::Index>(s.size()));
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(rows, 9);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const Eigen::Vector3d q = t0 * s[i].q.homogeneous();
    const Eigen::Vector3d p = t1 * s[i].p.homogeneous();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) a(static_cast<Eigen::Index>(i), 3 * r + c) = p(r) * q(c);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (!(sv(7) >= 1e-10 * sv(0))) {
    throw Error(ErrorCode::kDegenerateConfiguration,
                "design matrix null space is more than one-dimensional");
  }
  const Eigen::VectorXd f = svd.matrixV().col(8);
  Eigen::Matrix3d fn;
  fn << f(0), f(1), f(2), f(3), f(4), f(5), f(6), f(7), f(8);

  Eigen::JacobiSVD<Eigen::Matrix3d> fsvd(fn, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d d = fsvd.singularValues();
  d(2) = 0.0;
  const Eigen::Matrix3d rank2 = fsvd.matrixU() * d.asDiagonal() * fsvd.matrixV().transpose();
  return FundamentalMatrix::from_rank2(t1.transpose() * rank2 * t0);
}

inline FundamentalMatrix estimate_fundamental(const MatchSet& s) { return estimate_fundamental(s.view()); }

struct RansacOptions {
  double inlier_threshold = 1.0;  // squared pixels, on the Sampson distance
  std::size_t max_iters = 2000;
  std::uint64_t seed = 0;
  double confidence = 0.999;
};

struct RansacResult {
  FundamentalMatrix f;
  MatchSet inliers;
  std::vector<std::size_t> inlier_indices;
};

inline std::vector<std::size_t> sampson_inliers(const FundamentalMatrix& f,
                                                std::span<const Correspondence> s,
                                                double threshold) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < s.size(); ++i) {
    try {
      if (sampson_single(f, s[i]) < threshold) idx.push_back(i);
    } catch (const Error&) {
      // epipole-degenerate: never an inlier
    }
  }
  return idx;
}

/// 8-point RANSAC with adaptive termination. Deterministic for a given seed.
/// The returned model is estimated on exactly the returned inlier set.
inline RansacResult ransac_fundamental(std::span<const Correspondence> s, const RansacOptions& opt) {
  constexpr std::size_t kSample = 8;
  if (s.size() < kSample) {
    throw Error(ErrorCode::kInsufficientMatches,
                "need at least 8 correspondences, got " + std::to_string(s.size()));
  }
  std::mt19937_64 rng(opt.seed);
  std::vector<std::size_t> best;
  std::vector<std::size_t> pool(s.size());
  std::vector<Correspondence> sample(kSample);
  double needed = static_cast<double>(opt.max_iters);

  for (std::size_t iter = 0; static_cast<double>(iter) < std::min<double>(needed, opt.max_iters); ++iter) {
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    for (std::size_t k = 0; k < kSample; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
      std::swap(pool[k], pool[pick(rng)]);
      sample[k] = s[pool[k]];
    }
    FundamentalMatrix model;
    try {
      model = estimate_fundamental(sample);
    } catch (const Error&) {
      continue;
    }
    auto inl = sampson_inliers(model, s, opt.inlier_threshold);
    if (inl.size() > best.size()) {
      best = std::move(inl);
      const double w = static_cast<double>(best.size()) / static_cast<double>(s.size());
      const double all_good = std::pow(w, static_cast<double>(kSample));
      if (all_good >= 1.0) {
        needed = 0.0;
      } else if (all_good > 0.0) {
        needed = std::log(1.0 - opt.confidence) / std::log(1.0 - all_good);
      }
    }
  }
  if (best.size() < kSample) {
    throw Error(ErrorCode::kNoConsensus,
                "best consensus set has " + std::to_string(best.size()) + " matches");
  }
  // Re-estimate on the consensus set and re-verify until the set is stable.
  // A minimal sample can agree with itself without any real support; such
  // sets shrink below the sample size here.
  RansacResult out;
  for (int round = 0; round < 10; ++round) {
    out.inlier_indices = best;
    out.inliers.matches.clear();
    for (auto i : best) out.inliers.matches.push_back(s[i]);
    try {
      out.f = estimate_fundamental(out.inliers);
    } catch (const Error&) {
      throw Error(ErrorCode::kNoConsensus, "consensus set is degenerate");
    }
    auto next = sampson_inliers(out.f, s, opt.inlier_threshold);
    if (next == best) break;
    if (next.size() < kSample) {
      throw Error(ErrorCode::kNoConsensus, "consensus set does not survive re-estimation");
    }
    best = std::move(next);
  }
  return out;
}

inline RansacResult ransac_fundamental(const MatchSet& s, const RansacOptions& opt) {
  return ransac_fundamental(s.view(), opt);
}

// ---------------------------------------------------------------------------
// Pose

namespace detail {

/// Linear triangulation with P0 = [I|0], P1 = [R|t]; returns depths in both
/// cameras.
inline std::pair<double, double> triangulated_depths(const Eigen::Vector3d& x0, const Eigen::Vector3d& x1,
                                                     const Eigen::Matrix3d& r, const Eigen::Vector3d& t) {
  Eigen::Matrix<double, 3, 4> p0 = Eigen::Matrix<double, 3, 4>::Zero();
  p0.leftCols<3>().setIdentity();
  Eigen::Matrix<double, 3, 4> p1;
  p1.leftCols<3>() = r;
  p1.col(3) = t;
  Eigen::Matrix4d a;
  a.row(0) = x0.x() * p0.row(2) - p0.row(0);
  a.row(1) = x0.y() * p0.row(2) - p0.row(1);
  a.row(2) = x1.x() * p1.row(2) - p1.row(0);
  a.row(3) = x1.y() * p1.row(2) - p1.row(1);
  Eigen::JacobiSVD<Eigen::Matrix4d> svd(a, Eigen::ComputeFullV);
  Eigen::Vector4d xh = svd.matrixV().col(3);
  if (xh(3) < 0.0) xh = -xh;
  const Eigen::Vector3d p0x = p0 * xh;
  const Eigen::Vector3d p1x = p1 * xh;
  return {p0x.z() * xh(3), p1x.z() * xh(3)};
}

}  // namespace detail

/// Recovers (R, t/|t|) from F and intrinsics: E = K1^T F K0 projected to
/// singular values (1, 1, 0), four-way decomposition, cheirality voting.
inline PoseEstimate recover_pose(const FundamentalMatrix& f, const CameraIntrinsics& k0,
                                 const CameraIntrinsics& k1, std::span<const Correspondence> s) {
  if (s.empty()) throw Error(ErrorCode::kEmptySet, "recover_pose needs at least one match");
  k0.validate();
  k1.validate();
  const Eigen::Matrix3d e = k1.matrix().transpose() * f.matrix() * k0.matrix();
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU();
  Eigen::Matrix3d v = svd.matrixV();
  if (u.determinant() < 0.0) u.col(2) *= -1.0;
  if (v.determinant() < 0.0) v.col(2) *= -1.0;
  Eigen::Matrix3d w;
  w << 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0;
  const Eigen::Matrix3d r1 = u * w * v.transpose();
  const Eigen::Matrix3d r2 = u * w.transpose() * v.transpose();
  const Eigen::Vector3d t = u.col(2);
  const std::array<std::pair<Eigen::Matrix3d, Eigen::Vector3d>, 4> cands{
      {{r1, t}, {r1, -t}, {r2, t}, {r2, -t}}};

  const Eigen::Matrix3d k0i = k0.matrix().inverse();
  const Eigen::Matrix3d k1i = k1.matrix().inverse();
  std::array<std::size_t, 4> votes{};
  for (const auto& c : s) {
    const Eigen::Vector3d x0 = k0i * c.q.homogeneous();
    const Eigen::Vector3d x1 = k1i * c.p.homogeneous();
    for (std::size_t k = 0; k < 4; ++k) {
      const auto [z0, z1] = detail::triangulated_depths(x0, x1, cands[k].first, cands[k].second);
      if (z0 > 0.0 && z1 > 0.0) ++votes[k];
    }
  }
  const auto best = static_cast<std::size_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
  if (2 * votes[best] <= s.size()) {
    throw Error(ErrorCode::kCheiralityTie, "no pose candidate has a strict majority in front of both cameras");
  }
  return PoseEstimate::from(cands[best].first, cands[best].second, votes[best]);
}

inline PoseEstimate recover_pose(const FundamentalMatrix& f, const CameraIntrinsics& k0,
                                 const CameraIntrinsics& k1, const MatchSet& s) {
  return recover_pose(f, k0, k1, s.view());
}

struct PoseError {
  double rotation_deg = 0.0;
  double translation_deg = 0.0;

  double max() const { return std::max(rotation_deg, translation_deg); }
};

/// Angular errors in degrees. The translation angle is folded into [0, 90]
/// because the sign of t is not observable from E.
inline PoseError pose_error(const PoseEstimate& est, const PoseEstimate& gt) {
  constexpr double kDeg = 180.0 / std::numbers::pi;
  // arccos((tr(Rgt^T Rest) - 1) / 2) written in the chord form, which stays
  // accurate near zero.
  const double chord = (est.rotation - gt.rotation).norm() / (2.0 * std::numbers::sqrt2);
  PoseError out;
  out.rotation_deg = 2.0 * std::asin(std::clamp(chord, 0.0, 1.0)) * kDeg;
  const Eigen::Vector3d a = est.translation_dir.normalized();
  const Eigen::Vector3d b = gt.translation_dir.normalized();
  const double ang = std::atan2(a.cross(b).norm(), a.dot(b)) * kDeg;
  out.translation_deg = std::min(ang, 180.0 - ang);
  return out;
}

}  // namespace a2pm
