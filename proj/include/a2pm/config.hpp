#pragma once

#include <string>
#include <vector>

#include "a2pm/error.hpp"
#include "a2pm/geometry.hpp"

namespace a2pm {

struct SgamConfig {
  // Area matching.
  double t_h = 0.5;
  double t_l = 0.75;
  double t_da = 0.2;
  int pyramid_ratio = 8;
  std::vector<double> multiscale_ratios = {0.8, 1.2, 1.4};
  double merge_distance = 100.0;
  int min_boundary_run = 20;
  double sia_dedup_iou = 0.5;

  // Geometry area matching.
  double phi = 1.0;
  double t_sp = 0.3;
  std::size_t gp_enumeration_cap = 720;
  bool inside_f_ransac = false;
  bool gmc_ransac = true;
  // Added to the rejection threshold so that roundoff-level consistency
  // values on noiseless data do not decide verdicts.
  double gr_epsilon = 1e-12;

  // Point matching and output.
  int default_area_size = 256;
  int pm_max_matches = 300;
  std::size_t max_correspondences = 500;
  RansacOptions ransac{};

  static SgamConfig defaults() { return {}; }

  static SgamConfig scannet() {
    SgamConfig c;
    c.phi = 0.5;
    c.t_sp = 0.6;
    c.default_area_size = 256;
    return c;
  }

  void validate() const {
    auto require = [](bool ok, const std::string& what) {
      if (!ok) throw Error(ErrorCode::kInvalidArgument, "invalid config: " + what);
    };
    require(t_h >= 0.0 && t_h <= 1.0, "t_h must be in [0, 1]");
    require(t_l >= 0.0 && t_l <= 2.0, "t_l must be in [0, 2]");
    require(t_da >= 0.0 && t_da <= 1.0, "t_da must be in [0, 1]");
    require(phi > 0.0 && phi <= 100.0, "phi must be in (0, 100]");
    require(t_sp >= 0.0 && t_sp <= 1.0, "t_sp must be in [0, 1]");
    require(pyramid_ratio >= 1 && pyramid_ratio <= 64, "pyramid ratio must be in [1, 64]");
    for (double s : multiscale_ratios) require(s > 0.0 && s <= 4.0, "multiscale ratios must be in (0, 4]");
    require(merge_distance >= 0.0, "merge distance must be >= 0");
    require(min_boundary_run >= 1, "min boundary run must be >= 1");
    require(sia_dedup_iou >= 0.0 && sia_dedup_iou <= 1.0, "sia dedup IoU must be in [0, 1]");
    require(gp_enumeration_cap >= 1, "gp enumeration cap must be >= 1");
    require(gr_epsilon >= 0.0, "gr epsilon must be >= 0");
    require(default_area_size >= 16 && default_area_size <= 4096, "area size must be in [16, 4096]");
    require(pm_max_matches >= 8, "max matches must be >= 8");
    require(max_correspondences >= 1, "max correspondences must be >= 1");
    require(ransac.inlier_threshold > 0.0, "ransac threshold must be > 0");
    require(ransac.max_iters >= 1, "ransac iterations must be >= 1");
    require(ransac.confidence > 0.0 && ransac.confidence < 1.0, "ransac confidence must be in (0, 1)");
  }

  /// {1.0} followed by the configured ratios, without duplicates.
  std::vector<double> scales() const {
    std::vector<double> s = {1.0};
    for (double r : multiscale_ratios)
      if (r != 1.0) s.push_back(r);
    return s;
  }
};

}  // namespace a2pm
