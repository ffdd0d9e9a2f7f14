#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "a2pm/config.hpp"
#include "a2pm/error.hpp"
#include "a2pm/geometry.hpp"
#include "a2pm/ground_truth.hpp"
#include "a2pm/pipeline.hpp"
#include "a2pm/point_matcher.hpp"
#include "a2pm/sam.hpp"

namespace a2pm {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Fraction of pixels sampled in a0's box (where the ground truth is valid)
/// that land inside a1's box.
inline double aor(const AreaMatchCandidate& m, const GroundTruth& gt, std::size_t sample_n = 2000,
                  std::uint64_t seed = 0) {
  const BBox b = m.a0.bbox.intersect({0, 0, gt.width0, gt.height0});
  if (b.empty() || sample_n == 0) throw Error(ErrorCode::kNoValidPoints, "area has no pixels to sample");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> ux(b.min_x, b.max_x - 1), uy(b.min_y, b.max_y - 1);
  std::size_t valid = 0, inside = 0;
  const std::size_t max_draws = 20 * sample_n;
  for (std::size_t draw = 0; draw < max_draws && valid < sample_n; ++draw) {
    const Point2 q{static_cast<double>(ux(rng)), static_cast<double>(uy(rng))};
    const auto p = gt.project(q);
    if (!p) continue;
    ++valid;
    inside += m.a1.bbox.contains(*p);
  }
  if (valid == 0) throw Error(ErrorCode::kNoValidPoints, "no sampled pixel of the area has ground truth");
  return static_cast<double>(inside) / static_cast<double>(valid);
}

/// Share of area matches whose overlap ratio strictly exceeds t.
inline double amp(const std::vector<double>& aors, double t) {
  if (aors.empty()) throw Error(ErrorCode::kEmptySet, "amp of an empty match list");
  const auto n = std::count_if(aors.begin(), aors.end(), [t](double a) { return a > t; });
  return static_cast<double>(n) / static_cast<double>(aors.size());
}

struct MmaResult {
  std::map<double, double> accuracy;  // threshold (px) -> fraction
  std::size_t valid = 0;
  std::size_t invalid = 0;
};

inline MmaResult mma(const MatchSet& s, const GroundTruth& gt, const std::vector<double>& thresholds = {1, 2, 3}) {
  if (s.empty()) throw Error(ErrorCode::kEmptySet, "mma of an empty match set");
  MmaResult r;
  std::vector<double> err;
  for (const auto& c : s.matches) {
    const auto p = gt.project(c.q);
    if (!p) {
      ++r.invalid;
      continue;
    }
    err.push_back(distance(*p, c.p));
  }
  r.valid = err.size();
  if (err.empty()) throw Error(ErrorCode::kEmptyAfterValidity, "no match has a valid ground-truth projection");
  for (double t : thresholds) {
    const auto n = std::count_if(err.begin(), err.end(), [t](double e) { return e <= t; });
    r.accuracy[t] = static_cast<double>(n) / static_cast<double>(err.size());
  }
  return r;
}

/// Area under the cumulative pose-accuracy curve up to each threshold,
/// normalized by the threshold. Errors are max(rotation, translation) in
/// degrees; failures are infinite.
inline std::map<double, double> pose_auc(const std::vector<double>& errors,
                                         const std::vector<double>& thresholds = {5, 10, 20}) {
  if (errors.empty()) throw Error(ErrorCode::kEmptySet, "pose_auc of an empty error list");
  std::map<double, double> out;
  for (double t : thresholds) {
    double s = 0.0;
    for (double e : errors)
      if (e < t) s += (t - std::max(e, 0.0)) / t;
    out[t] = s / static_cast<double>(errors.size());
  }
  return out;
}

/// Relative pose from matches: RANSAC F, then the cheirality-checked
/// decomposition on its inliers.
inline std::optional<PoseEstimate> estimate_pose(const MatchSet& s, const CameraIntrinsics& k0,
                                                 const CameraIntrinsics& k1, const RansacOptions& opt) {
  if (s.size() < 8) return std::nullopt;
  try {
    const RansacResult r = ransac_fundamental(s, opt);
    return recover_pose(r.f, k0, k1, r.inliers);
  } catch (const Error&) {
    return std::nullopt;
  }
}

inline double pose_error_deg(const std::optional<PoseEstimate>& est, const GroundTruth& gt) {
  return est ? pose_error(*est, gt.pose()).max() : kInf;
}

// ---------------------------------------------------------------------------
// Benchmark driver

struct PairData {
  std::string name;
  RgbImage rgb0, rgb1;
  SemanticMap sem0, sem1;
  GroundTruth gt;
};

struct BenchmarkPair {
  std::string name;
  std::function<PairData()> load;
};

using MatcherFactory = std::function<std::unique_ptr<PointMatcher>(const PairData&)>;

struct MethodMetrics {
  std::map<double, double> mma;  // empty when no valid match
  double pose_error = kInf;
  std::size_t matches = 0;
};

struct PairReport {
  std::string name;
  bool ok = false;
  std::string error;
  MethodMetrics sgam;
  std::optional<MethodMetrics> bare;
  std::vector<double> aors;
  std::size_t area_matches = 0;
  bool degraded = false;
};

struct MetricReport {
  std::vector<PairReport> pairs;
  std::map<double, double> mma;       // mean over pairs
  std::map<double, double> pose_auc;  // over pairs
  std::map<double, double> amp;       // over all area matches
  std::vector<double> aor;
  std::optional<std::map<double, double>> bare_mma;
  std::optional<std::map<double, double>> bare_pose_auc;
  std::size_t failed = 0;
};

struct BenchmarkOptions {
  SgamConfig config;
  bool compare_bare = false;
  unsigned workers = 1;
  std::size_t aor_samples = 2000;
  std::uint64_t seed = 0;
  std::vector<double> mma_thresholds = {1, 2, 3};
  std::vector<double> auc_thresholds = {5, 10, 20};
  std::vector<double> amp_thresholds = {0.7};
};

namespace detail {

inline MethodMetrics method_metrics(const MatchSet& merged, const PairData& d, const BenchmarkOptions& opt,
                                    std::uint64_t seed) {
  MethodMetrics m;
  const MatchSet sampled = uniform_sample(merged, d.rgb0.width, d.rgb0.height,
                                          static_cast<std::size_t>(opt.config.max_correspondences), seed);
  m.matches = sampled.size();
  if (!sampled.empty()) {
    try {
      m.mma = mma(sampled, d.gt, opt.mma_thresholds).accuracy;
    } catch (const Error&) {
    }
  }
  m.pose_error = pose_error_deg(estimate_pose(sampled, d.gt.k0, d.gt.k1, opt.config.ransac), d.gt);
  return m;
}

inline PairReport run_pair(const BenchmarkPair& bp, const MatcherFactory& factory, const BenchmarkOptions& opt,
                           std::uint64_t seed) {
  PairReport r;
  r.name = bp.name;
  try {
    const PairData d = bp.load();
    auto pm = factory(d);
    const SgamResult res = sgam({d.rgb0, d.rgb1, d.sem0, d.sem1}, *pm, opt.config);
    r.sgam = method_metrics(res.merged, d, opt, seed);
    r.area_matches = res.area_matches.entries.size();
    r.degraded = res.degraded;
    for (const auto& e : res.area_matches.entries) {
      try {
        r.aors.push_back(aor(e.candidate, d.gt, opt.aor_samples, seed));
      } catch (const Error&) {
      }
    }
    if (opt.compare_bare) {
      const auto bare = bare_match(d.rgb0, d.rgb1, *pm, opt.config);
      r.bare = method_metrics(bare ? *bare : MatchSet{}, d, opt, seed);
    }
    r.ok = true;
  } catch (const std::exception& e) {
    r.error = e.what();
    r.sgam.pose_error = kInf;
    if (opt.compare_bare) r.bare = MethodMetrics{};
  }
  return r;
}

/// Per-pair seed keyed by name so results do not depend on list order.
inline std::uint64_t pair_seed(std::uint64_t base, const std::string& name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) h = (h ^ c) * 0x100000001b3ULL;
  return hash_combine(base, h);
}

inline std::map<double, double> mean_mma(const std::vector<const MethodMetrics*>& ms,
                                         const std::vector<double>& thresholds) {
  std::map<double, double> out;
  for (double t : thresholds) {
    double s = 0.0;
    for (const auto* m : ms) s += m->mma.count(t) ? m->mma.at(t) : 0.0;
    out[t] = ms.empty() ? 0.0 : s / static_cast<double>(ms.size());
  }
  return out;
}

}  // namespace detail

/// Runs SGAM (and optionally the bare matcher) on every pair. Failures are
/// recorded with infinite pose error and never stop the sweep; a failed pair
/// scores zero matching accuracy.
inline MetricReport run_benchmark(const std::vector<BenchmarkPair>& pairs, const MatcherFactory& factory,
                                  const BenchmarkOptions& opt) {
  MetricReport rep;
  rep.pairs.resize(pairs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < pairs.size(); i = next++)
      rep.pairs[i] = detail::run_pair(pairs[i], factory, opt, detail::pair_seed(opt.seed, pairs[i].name));
  };
  const unsigned n = std::max(1u, std::min<unsigned>(opt.workers, static_cast<unsigned>(pairs.size())));
  std::vector<std::thread> threads;
  for (unsigned k = 1; k < n; ++k) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();

  if (pairs.empty()) return rep;
  std::vector<const MethodMetrics*> sg, bare;
  std::vector<double> sg_err, bare_err;
  for (const auto& p : rep.pairs) {
    rep.failed += !p.ok;
    sg.push_back(&p.sgam);
    sg_err.push_back(p.sgam.pose_error);
    rep.aor.insert(rep.aor.end(), p.aors.begin(), p.aors.end());
    if (p.bare) {
      bare.push_back(&*p.bare);
      bare_err.push_back(p.bare->pose_error);
    }
  }
  rep.mma = detail::mean_mma(sg, opt.mma_thresholds);
  rep.pose_auc = pose_auc(sg_err, opt.auc_thresholds);
  if (!rep.aor.empty())
    for (double t : opt.amp_thresholds) rep.amp[t] = amp(rep.aor, t);
  if (opt.compare_bare) {
    rep.bare_mma = detail::mean_mma(bare, opt.mma_thresholds);
    rep.bare_pose_auc = pose_auc(bare_err, opt.auc_thresholds);
  }
  return rep;
}

}  // namespace a2pm
