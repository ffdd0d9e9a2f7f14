#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "a2pm/config.hpp"
#include "a2pm/error.hpp"
#include "a2pm/gam.hpp"
#include "a2pm/image.hpp"
#include "a2pm/point_matcher.hpp"
#include "a2pm/sam.hpp"
#include "a2pm/semantic_map.hpp"

namespace a2pm {

/// Grows `b` symmetrically to a square, shifting it back inside the image
/// when it crosses a border and clamping when the image is too small.
inline BBox expand_to_square(const BBox& b, int width, int height) {
  const int side = std::max(b.width(), b.height());
  auto fit = [](int lo, int len, int side, int limit) {
    int a = lo - (side - len) / 2;
    int z = a + side;
    if (a < 0) z -= a, a = 0;
    if (z > limit) a -= z - limit, z = limit;
    return std::make_pair(std::max(a, 0), z);
  };
  const auto [x0, x1] = fit(b.min_x, b.width(), side, width);
  const auto [y0, y1] = fit(b.min_y, b.height(), side, height);
  return {x0, y0, x1, y1};
}

inline MatcherRequest prepare_area_pair(const Area& a0, const Area& a1, const RgbImage& img0, const RgbImage& img1,
                                        const SgamConfig& config) {
  const BBox b0 = a0.bbox.intersect(img0.bounds()), b1 = a1.bbox.intersect(img1.bounds());
  if (b0.empty() || b1.empty()) throw Error(ErrorCode::kInvalidArgument, "area has a zero-size box inside the image");
  const int s = config.default_area_size;
  return {make_crop(img0, expand_to_square(b0, img0.width, img0.height), s, s),
          make_crop(img1, expand_to_square(b1, img1.width, img1.height), s, s),
          static_cast<std::size_t>(config.pm_max_matches)};
}

/// Request covering both full images, resized to the default area size.
inline MatcherRequest full_image_request(const RgbImage& img0, const RgbImage& img1, const SgamConfig& config) {
  return prepare_area_pair(Area::make(img0.bounds(), AreaKind::kSia), Area::make(img1.bounds(), AreaKind::kSia), img0,
                           img1, config);
}

/// Drops matches falling in the same 0.5 px cell (in both images) as an
/// earlier one.
inline MatchSet dedup_grid(const MatchSet& s) {
  MatchSet out;
  out.source_area = s.source_area;
  std::set<std::array<long long, 4>> seen;
  for (const auto& c : s.matches) {
    const std::array<long long, 4> key = {std::llround(2.0 * c.q.x), std::llround(2.0 * c.q.y),
                                          std::llround(2.0 * c.p.x), std::llround(2.0 * c.p.y)};
    if (seen.insert(key).second) out.matches.push_back(c);
  }
  return out;
}

/// Keeps at most `cap` matches spread over a ceil(sqrt(cap))^2 grid on image 0,
/// taking one match per non-empty cell per round.
inline MatchSet uniform_sample(const MatchSet& s, int width, int height, std::size_t cap, std::uint64_t seed) {
  if (cap < 1) throw Error(ErrorCode::kInvalidArgument, "uniform_sample cap must be >= 1");
  MatchSet uniq = dedup_grid(s);
  if (uniq.size() <= cap) return uniq;
  const int n = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(cap))));
  std::vector<std::vector<std::size_t>> cells(static_cast<std::size_t>(n) * n);
  for (std::size_t i = 0; i < uniq.size(); ++i) {
    const Point2& q = uniq.matches[i].q;
    const int cx = std::clamp(static_cast<int>(std::floor((q.x + 0.5) * n / width)), 0, n - 1);
    const int cy = std::clamp(static_cast<int>(std::floor((q.y + 0.5) * n / height)), 0, n - 1);
    cells[static_cast<std::size_t>(cy) * n + cx].push_back(i);
  }
  std::mt19937_64 rng(seed);
  for (auto& c : cells) std::shuffle(c.begin(), c.end(), rng);
  MatchSet out;
  out.source_area = s.source_area;
  for (std::size_t round = 0; out.size() < cap; ++round) {
    bool any = false;
    for (const auto& c : cells) {
      if (round >= c.size()) continue;
      any = true;
      out.matches.push_back(uniq.matches[c[round]]);
      if (out.size() == cap) break;
    }
    if (!any) break;
  }
  return out;
}

struct SgamInputs {
  const RgbImage& rgb0;
  const RgbImage& rgb1;
  const SemanticMap& sem0;
  const SemanticMap& sem1;
};

struct StageTimings {
  double sam_ms = 0.0;
  double match_ms = 0.0;
  double gp_ms = 0.0;
  double gr_ms = 0.0;
  double gmc_ms = 0.0;
  double assemble_ms = 0.0;
  double total_ms = 0.0;
};

struct SgamResult {
  SamOutput sam;
  std::vector<GpResult> gp;
  AreaMatchSet candidates;  // accepted plus GP-resolved, before GR
  GrResult gr;
  AreaMatchSet area_matches;  // kept after GR
  GmcResult gmc;
  MatchSet global_matches;
  MatchSet merged;
  bool degraded = false;
  std::vector<std::string> log;
  StageTimings timings;
};

/// Full-image matches of the bare point matcher, deduplicated like merged
/// SGAM output.
inline std::optional<MatchSet> bare_match(const RgbImage& img0, const RgbImage& img1, PointMatcher& pm,
                                          const SgamConfig& config, std::vector<std::string>* log = nullptr) {
  try {
    return dedup_grid(pm.match(full_image_request(img0, img1, config)).matches);
  } catch (const Error& e) {
    if (!e.is_matcher_error()) throw;
    if (log) log->push_back(std::string("full-image matching failed: ") + e.what());
    return std::nullopt;
  }
}

namespace detail {

inline MatchSet inside_boxes(const MatchSet& s, const BBox& b0, const BBox& b1) {
  MatchSet out;
  out.source_area = s.source_area;
  for (const auto& c : s.matches)
    if (b0.contains(c.q) && b1.contains(c.p)) out.matches.push_back(c);
  return out;
}

inline std::string describe(const Area& a) {
  return std::string(to_string(a.kind)) + "[" + std::to_string(a.bbox.min_x) + "," + std::to_string(a.bbox.min_y) + "," +
         std::to_string(a.bbox.max_x) + "," + std::to_string(a.bbox.max_y) + "]";
}

/// Doubtful areas grouped so GP only pairs like with like: SOAs by label,
/// SIAs together.
inline std::map<std::pair<int, int>, std::pair<std::vector<Area>, std::vector<Area>>> doubtful_groups(
    const SamOutput& sam) {
  std::map<std::pair<int, int>, std::pair<std::vector<Area>, std::vector<Area>>> groups;
  auto key = [](const Area& a) {
    return std::make_pair(static_cast<int>(a.kind), a.kind == AreaKind::kSoa ? static_cast<int>(a.anchor_label) : -1);
  };
  for (const auto& a : sam.doubtful_a0) groups[key(a)].first.push_back(a);
  for (const auto& a : sam.doubtful_a1) groups[key(a)].second.push_back(a);
  return groups;
}

}  // namespace detail

/// Point matching inside one area pairing: crop, match, keep matches inside
/// both boxes. Matcher failures are logged and give nothing.
inline PairMatcher area_pair_matcher(const SgamInputs& in, PointMatcher& pm, const SgamConfig& config,
                                     std::vector<std::string>* log) {
  return [in, &pm, config, log](const AreaMatchCandidate& c) -> std::optional<MatchSet> {
    try {
      MatchSet s = pm.match(prepare_area_pair(c.a0, c.a1, in.rgb0, in.rgb1, config)).matches;
      MatchSet kept = detail::inside_boxes(s, c.a0.bbox, c.a1.bbox);
      kept.source_area = detail::describe(c.a0) + "->" + detail::describe(c.a1);
      return kept;
    } catch (const Error& e) {
      if (!e.is_matcher_error()) throw;
      if (log) log->push_back("skipped " + detail::describe(c.a0) + "->" + detail::describe(c.a1) + ": " + e.what());
      return std::nullopt;
    }
  };
}

inline SgamResult sgam(const SgamInputs& in, PointMatcher& pm, const SgamConfig& config) {
  config.validate();
  if (in.rgb0.width != in.sem0.width() || in.rgb0.height != in.sem0.height() || in.rgb1.width != in.sem1.width() ||
      in.rgb1.height != in.sem1.height())
    throw Error(ErrorCode::kInvalidArgument, "image and semantic map sizes differ");
  using clock = std::chrono::steady_clock;
  auto ms = [](clock::time_point a, clock::time_point b) {
    return std::chrono::duration<double, std::milli>(b - a).count();
  };
  SgamResult r;
  const auto t0 = clock::now();
  r.sam = sam_pipeline(in.sem0, in.sem1, config);
  const auto t1 = clock::now();

  const PairMatcher pair_pm = area_pair_matcher(in, pm, config, &r.log);

  for (const auto& c : r.sam.accepted)
    if (auto s = pair_pm(c)) r.candidates.entries.push_back(make_entry(c, std::move(*s), config));
  const auto t2 = clock::now();
  for (auto& [key, group] : detail::doubtful_groups(r.sam)) {
    if (group.first.empty() || group.second.empty()) continue;
    GpResult gp = gp_predict(group.first, group.second, pair_pm, config);
    if (!gp.best) r.log.push_back("all assignments invalid for a doubtful group; its areas are dropped");
    for (const auto& e : gp.entries) r.candidates.entries.push_back(e);
    r.gp.push_back(std::move(gp));
  }
  const auto t3 = clock::now();

  if (!r.candidates.entries.empty()) {
    r.gr = gr_reject(r.candidates, config.phi, config.gr_epsilon);
    r.area_matches = r.gr.kept;
  } else {
    r.gr.all_rejected = true;
  }
  const auto t4 = clock::now();

  const int w0 = in.rgb0.width, h0 = in.rgb0.height, w1 = in.rgb1.width, h1 = in.rgb1.height;
  if (r.area_matches.entries.empty()) {
    r.degraded = true;
    r.log.push_back("no area match survived; using full-image matching");
    if (auto bare = bare_match(in.rgb0, in.rgb1, pm, config, &r.log)) r.merged = std::move(*bare);
    const auto t5 = clock::now();
    r.timings = {ms(t0, t1), ms(t1, t2), ms(t2, t3), ms(t3, t4), 0.0, ms(t4, t5), ms(t0, t5)};
    return r;
  }

  r.gmc = gmc_collect(
      r.area_matches, [&] { return bare_match(in.rgb0, in.rgb1, pm, config, &r.log); }, w0, h0, w1, h1, config);
  if (!r.gmc.warning.empty()) r.log.push_back(r.gmc.warning);
  r.global_matches = r.gmc.collected;
  const auto t5 = clock::now();

  MatchSet all;
  for (const auto& e : r.area_matches.entries)
    all.matches.insert(all.matches.end(), e.matches.matches.begin(), e.matches.matches.end());
  all.matches.insert(all.matches.end(), r.global_matches.matches.begin(), r.global_matches.matches.end());
  r.merged = dedup_grid(all);
  const auto t6 = clock::now();
  r.timings = {ms(t0, t1), ms(t1, t2), ms(t2, t3), ms(t3, t4), ms(t4, t5), ms(t5, t6), ms(t0, t6)};
  return r;
}

}  // namespace a2pm
