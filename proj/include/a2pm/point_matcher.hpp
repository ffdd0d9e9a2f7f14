#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "a2pm/error.hpp"
#include "a2pm/geometry.hpp"
#include "a2pm/ground_truth.hpp"
#include "a2pm/image.hpp"
#include "a2pm/semantic_map.hpp"

namespace a2pm {

/// Maps crop pixel centers to original pixel coordinates:
/// original = offset + crop / scale.
struct AreaTransform {
  Point2 offset;
  double scale_x = 1.0;
  double scale_y = 1.0;

  Point2 to_original(const Point2& c) const { return {offset.x + c.x / scale_x, offset.y + c.y / scale_y}; }
  Point2 to_crop(const Point2& o) const { return {(o.x - offset.x) * scale_x, (o.y - offset.y) * scale_y}; }

  /// Transform for the original pixel box `region` resampled to out_w x out_h.
  static AreaTransform for_region(const BBox& region, int out_w, int out_h) {
    AreaTransform t;
    t.scale_x = static_cast<double>(out_w) / region.width();
    t.scale_y = static_cast<double>(out_h) / region.height();
    t.offset = {region.min_x - 0.5 + 0.5 / t.scale_x, region.min_y - 0.5 + 0.5 / t.scale_y};
    return t;
  }

  friend bool operator==(const AreaTransform&, const AreaTransform&) = default;
};

struct AreaCrop {
  RgbImage image;
  BBox region;  // original pixels covered by the crop
  AreaTransform transform;
};

inline AreaCrop make_crop(const RgbImage& img, const BBox& region, int out_w, int out_h) {
  if (region.empty()) throw Error(ErrorCode::kInvalidArgument, "degenerate crop region");
  AreaCrop c;
  c.region = region;
  c.transform = AreaTransform::for_region(region, out_w, out_h);
  c.image = resample(img, c.transform.offset.x, c.transform.offset.y, 1.0 / c.transform.scale_x,
                     1.0 / c.transform.scale_y, out_w, out_h);
  return c;
}

struct MatcherRequest {
  AreaCrop area0;
  AreaCrop area1;
  std::size_t max_matches = 300;
};

struct MatcherResponse {
  MatchSet matches;  // original image coordinates
  std::optional<std::vector<double>> confidences;
};

class PointMatcher {
 public:
  virtual ~PointMatcher() = default;
  virtual std::string name() const = 0;
  virtual MatcherResponse match(const MatcherRequest& req) = 0;
};

namespace detail {

inline std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  h *= 0xff51afd7ed558ccdULL;
  return h ^ (h >> 33);
}

inline std::uint64_t hash_double(double d) {
  std::uint64_t u = 0;
  static_assert(sizeof(u) == sizeof(d));
  std::memcpy(&u, &d, sizeof(u));
  return u;
}

/// Seed keyed by the pair of regions so a pairing gets the same matches
/// wherever it appears.
inline std::uint64_t request_seed(std::uint64_t base, const MatcherRequest& req) {
  std::uint64_t h = hash_combine(0x243f6a8885a308d3ULL, base);
  for (const AreaCrop* c : {&req.area0, &req.area1}) {
    for (int v : {c->region.min_x, c->region.min_y, c->region.max_x, c->region.max_y})
      h = hash_combine(h, static_cast<std::uint64_t>(static_cast<std::int64_t>(v)));
    h = hash_combine(h, hash_double(c->transform.scale_x));
    h = hash_combine(h, hash_double(c->transform.scale_y));
  }
  return h;
}

}  // namespace detail

struct OracleOptions {
  double noise_sigma = 0.0;  // crop-1 pixels
  double outlier_rate = 0.0;
  std::size_t n_matches = 300;
  std::uint64_t seed = 0;
};

/// Ground-truth matcher: samples co-visible pixels of the area in I0, projects
/// them into I1, perturbs in crop-1 pixels and injects uniform outliers.
class OracleMatcher : public PointMatcher {
 public:
  OracleMatcher(GroundTruth gt, OracleOptions opt) : gt_(std::move(gt)), opt_(opt) {}

  std::string name() const override { return "oracle"; }
  const OracleOptions& options() const { return opt_; }

  MatcherResponse match(const MatcherRequest& req) override {
    const std::size_t n = std::min(opt_.n_matches, req.max_matches);
    std::mt19937_64 rng(detail::request_seed(opt_.seed, req));
    const BBox& r0 = req.area0.region;
    const BBox& r1 = req.area1.region;
    std::vector<std::int64_t> order(static_cast<std::size_t>(r0.area()));
    std::iota(order.begin(), order.end(), 0);
    std::vector<Correspondence> picked;
    picked.reserve(n);
    // Lazy Fisher-Yates: draw without replacement until n co-visible pixels.
    for (std::size_t i = 0; i < order.size() && picked.size() < n; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
      std::swap(order[i], order[pick(rng)]);
      const std::int64_t k = order[i];
      const Point2 q{static_cast<double>(r0.min_x + k % r0.width()), static_cast<double>(r0.min_y + k / r0.width())};
      const auto p = gt_.project(q);
      if (!p || !r1.contains(*p)) continue;
      picked.push_back({q, *p});
    }
    if (picked.size() < n)
      throw Error(ErrorCode::kInsufficientCovisibility,
                  "only " + std::to_string(picked.size()) + " co-visible pixels, need " + std::to_string(n));

    const AreaTransform& t1 = req.area1.transform;
    const double w1 = req.area1.image.width, h1 = req.area1.image.height;
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    MatcherResponse out;
    out.matches.matches.reserve(n);
    for (auto& c : picked) {
      Point2 pc = t1.to_crop(c.p);
      if (opt_.noise_sigma > 0.0) {
        pc.x += opt_.noise_sigma * noise(rng);
        pc.y += opt_.noise_sigma * noise(rng);
      }
      if (opt_.outlier_rate > 0.0 && unit(rng) < opt_.outlier_rate) {
        pc = {-0.5 + w1 * unit(rng), -0.5 + h1 * unit(rng)};
      }
      pc.x = std::clamp(pc.x, -0.5, w1 - 0.5 - 1e-9);
      pc.y = std::clamp(pc.y, -0.5, h1 - 0.5 - 1e-9);
      out.matches.matches.push_back({c.q, t1.to_original(pc)});
    }
    return out;
  }

 private:
  GroundTruth gt_;
  OracleOptions opt_;
};

struct ClassicalOptions {
  int patch = 16;
  int stride = 12;
  int search_radius = 24;
  double min_ncc = 0.8;
  double min_stddev = 4.0;
};

/// Normalized cross-correlation of patches on a sparse grid of crop 0,
/// searched in a window of crop 1, refined with a parabola fit.
class ClassicalMatcher : public PointMatcher {
 public:
  explicit ClassicalMatcher(ClassicalOptions opt = {}) : opt_(opt) {}

  std::string name() const override { return "classical"; }

  MatcherResponse match(const MatcherRequest& req) override {
    const Gray g0 = gray(req.area0.image), g1 = gray(req.area1.image);
    const int ps = opt_.patch, half = ps / 2;
    struct Scored {
      Correspondence c;
      double score;
    };
    std::vector<Scored> found;
    for (int y0 = 0; y0 + ps <= g0.h; y0 += opt_.stride) {
      for (int x0 = 0; x0 + ps <= g0.w; x0 += opt_.stride) {
        const auto ref = patch_stats(g0, x0, y0);
        if (ref.stddev < opt_.min_stddev) continue;
        const int lo_x = std::max(0, x0 - opt_.search_radius), hi_x = std::min(g1.w - ps, x0 + opt_.search_radius);
        const int lo_y = std::max(0, y0 - opt_.search_radius), hi_y = std::min(g1.h - ps, y0 + opt_.search_radius);
        if (lo_x > hi_x || lo_y > hi_y) continue;
        const int sw = hi_x - lo_x + 1, sh = hi_y - lo_y + 1;
        std::vector<double> score(static_cast<std::size_t>(sw) * sh, -1.0);
        double best = -2.0;
        int bx = 0, by = 0;
        for (int y = lo_y; y <= hi_y; ++y)
          for (int x = lo_x; x <= hi_x; ++x) {
            const double s = ncc(g0, x0, y0, ref, g1, x, y);
            score[static_cast<std::size_t>(y - lo_y) * sw + (x - lo_x)] = s;
            if (s > best) best = s, bx = x, by = y;
          }
        if (best < opt_.min_ncc) continue;
        auto at = [&](int x, int y) { return score[static_cast<std::size_t>(y - lo_y) * sw + (x - lo_x)]; };
        double dx = 0.0, dy = 0.0;
        if (bx > lo_x && bx < hi_x) dx = parabola(at(bx - 1, by), best, at(bx + 1, by));
        if (by > lo_y && by < hi_y) dy = parabola(at(bx, by - 1), best, at(bx, by + 1));
        const Point2 c0{x0 + half - 0.5, y0 + half - 0.5};
        const Point2 c1{bx + dx + half - 0.5, by + dy + half - 0.5};
        found.push_back({{req.area0.transform.to_original(c0), req.area1.transform.to_original(c1)}, best});
      }
    }
    std::stable_sort(found.begin(), found.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });
    if (found.size() > req.max_matches) found.resize(req.max_matches);
    MatcherResponse out;
    std::vector<double> conf;
    for (const auto& f : found) {
      out.matches.matches.push_back(f.c);
      conf.push_back(std::clamp(f.score, 0.0, 1.0));
    }
    out.confidences = std::move(conf);
    return out;
  }

 private:
  struct Gray {
    int w = 0, h = 0;
    std::vector<double> v;
    double at(int x, int y) const { return v[static_cast<std::size_t>(y) * w + x]; }
  };
  struct Stats {
    double mean = 0.0, stddev = 0.0;
  };

  static Gray gray(const RgbImage& img) {
    Gray g{img.width, img.height, std::vector<double>(static_cast<std::size_t>(img.width) * img.height)};
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) g.v[static_cast<std::size_t>(y) * g.w + x] = to_gray(img.px(x, y));
    return g;
  }

  Stats patch_stats(const Gray& g, int x0, int y0) const {
    double s = 0.0, s2 = 0.0;
    for (int y = 0; y < opt_.patch; ++y)
      for (int x = 0; x < opt_.patch; ++x) {
        const double v = g.at(x0 + x, y0 + y);
        s += v;
        s2 += v * v;
      }
    const double n = static_cast<double>(opt_.patch) * opt_.patch;
    const double mean = s / n;
    return {mean, std::sqrt(std::max(0.0, s2 / n - mean * mean))};
  }

  double ncc(const Gray& a, int ax, int ay, const Stats& as, const Gray& b, int bx, int by) const {
    const Stats bs = patch_stats(b, bx, by);
    if (bs.stddev < 1e-9) return -1.0;
    double s = 0.0;
    for (int y = 0; y < opt_.patch; ++y)
      for (int x = 0; x < opt_.patch; ++x) s += (a.at(ax + x, ay + y) - as.mean) * (b.at(bx + x, by + y) - bs.mean);
    return s / (static_cast<double>(opt_.patch) * opt_.patch * as.stddev * bs.stddev);
  }

  static double parabola(double l, double c, double r) {
    const double den = l - 2.0 * c + r;
    if (std::abs(den) < 1e-12) return 0.0;
    return std::clamp(0.5 * (l - r) / den, -0.5, 0.5);
  }

  ClassicalOptions opt_;
};

}  // namespace a2pm
