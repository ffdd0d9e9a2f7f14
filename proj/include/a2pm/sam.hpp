#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "a2pm/config.hpp"
#include "a2pm/semantic_map.hpp"

namespace a2pm {

enum class AreaKind { kSoa, kSia };

inline const char* to_string(AreaKind k) { return k == AreaKind::kSoa ? "SOA" : "SIA"; }

struct Area {
  BBox bbox;
  AreaKind kind = AreaKind::kSoa;
  Label anchor_label = 0;  // SOA only
  Point2 center;

  friend bool operator==(const Area& a, const Area& b) {
    return a.bbox == b.bbox && a.kind == b.kind && a.anchor_label == b.anchor_label;
  }
  friend auto operator<=>(const Area& a, const Area& b) {
    return std::tie(a.kind, a.anchor_label, a.bbox) <=> std::tie(b.kind, b.anchor_label, b.bbox);
  }

  static Area make(const BBox& b, AreaKind kind, Label anchor = 0) { return {b, kind, anchor, b.center()}; }
};

enum class MatchStatus { kAccepted, kDoubtful };
enum class Provenance { kSemantic, kPredicted };

inline const char* to_string(MatchStatus s) { return s == MatchStatus::kAccepted ? "accepted" : "doubtful"; }

struct AreaMatchCandidate {
  Area a0;
  Area a1;
  AreaKind kind = AreaKind::kSoa;
  double distance = 0.0;
  MatchStatus status = MatchStatus::kAccepted;
  Provenance provenance = Provenance::kSemantic;
};

struct SamOutput {
  std::vector<AreaMatchCandidate> accepted;
  std::vector<Area> doubtful_a0;
  std::vector<Area> doubtful_a1;
};

/// Labels present in either map, ascending. Descriptors of one image pair are
/// all expressed over this space.
using LabelSpace = std::vector<Label>;

inline LabelSpace pair_label_space(const SemanticMap& m0, const SemanticMap& m1) {
  const auto l0 = m0.distinct_labels();
  const auto l1 = m1.distinct_labels();
  LabelSpace out;
  std::set_union(l0.begin(), l0.end(), l1.begin(), l1.end(), std::back_inserter(out));
  return out;
}

inline std::optional<std::size_t> label_index(const LabelSpace& space, Label l) {
  const auto it = std::lower_bound(space.begin(), space.end(), l);
  if (it == space.end() || *it != l) return std::nullopt;
  return static_cast<std::size_t>(it - space.begin());
}

/// Box of the same center scaled by `s` on both axes.
inline BBox scaled_box(const BBox& b, double s) {
  const int w = std::max(1, static_cast<int>(std::lround(b.width() * s)));
  const int h = std::max(1, static_cast<int>(std::lround(b.height() * s)));
  return BBox::centered(b.center(), w, h);
}

// ---------------------------------------------------------------------------
// Semantic object areas

inline std::vector<Area> detect_soa(const SemanticMap& map, const SgamConfig& config) {
  std::vector<LabelRegion> regions;
  for (const auto& r : connected_components(map)) {
    if (static_cast<long long>(r.pixel_count) * 100 < map.pixel_count()) continue;
    regions.push_back(r);
  }
  std::vector<std::size_t> parent(regions.size());
  std::iota(parent.begin(), parent.end(), 0);
  std::function<std::size_t(std::size_t)> find = [&](std::size_t i) {
    return parent[i] == i ? i : parent[i] = find(parent[i]);
  };
  for (std::size_t i = 0; i < regions.size(); ++i) {
    for (std::size_t j = i + 1; j < regions.size(); ++j) {
      if (regions[i].label != regions[j].label) continue;
      if (distance(regions[i].bbox.center(), regions[j].bbox.center()) < config.merge_distance) {
        parent[find(j)] = find(i);
      }
    }
  }
  std::map<std::size_t, Area> merged;
  for (std::size_t i = 0; i < regions.size(); ++i) {
    const std::size_t root = find(i);
    auto it = merged.find(root);
    if (it == merged.end()) {
      merged.emplace(root, Area::make(regions[i].bbox, AreaKind::kSoa, regions[i].label));
    } else {
      it->second = Area::make(it->second.bbox.unite(regions[i].bbox), AreaKind::kSoa, regions[i].label);
    }
  }
  std::vector<Area> out;
  for (const auto& [root, a] : merged) out.push_back(a);
  std::sort(out.begin(), out.end(), [](const Area& a, const Area& b) {
    return std::tie(a.anchor_label, a.bbox.min_y, a.bbox.min_x) < std::tie(b.anchor_label, b.bbox.min_y, b.bbox.min_x);
  });
  return out;
}

/// Bits of the four sides concatenated top, right, bottom, left; each side has
/// one bit per label of the pair label space.
struct SoaDescriptor {
  std::size_t label_count = 0;
  std::vector<std::uint8_t> bits;

  bool bit(int side, std::size_t label_idx) const { return bits[side * label_count + label_idx] != 0; }
};

namespace detail {

/// Labels forming runs of at least `min_run` equal pixels along a pixel path.
/// Pixels outside the map break runs.
template <typename PixelAt>
void collect_runs(const SemanticMap& map, int length, PixelAt pixel_at, int min_run, std::set<Label>& out) {
  Label current = 0;
  int run = 0;
  bool in_map = false;
  auto flush = [&]() {
    if (in_map && current != 0 && run >= min_run) out.insert(current);
  };
  for (int k = 0; k < length; ++k) {
    const auto [x, y] = pixel_at(k);
    const bool inside = x >= 0 && y >= 0 && x < map.width() && y < map.height();
    const Label l = inside ? map.at(x, y) : Label{0};
    if (inside && in_map && l == current) {
      ++run;
      continue;
    }
    flush();
    in_map = inside;
    current = l;
    run = inside ? 1 : 0;
  }
  flush();
}

}  // namespace detail

/// Labels found on each side (top, right, bottom, left) of the one-pixel ring
/// just outside `box`.
inline std::array<std::set<Label>, 4> boundary_labels(const SemanticMap& map, const BBox& box, int min_run) {
  std::array<std::set<Label>, 4> sides;
  const int w = box.width(), h = box.height();
  detail::collect_runs(map, w, [&](int k) { return std::pair{box.min_x + k, box.min_y - 1}; }, min_run, sides[0]);
  detail::collect_runs(map, h, [&](int k) { return std::pair{box.max_x, box.min_y + k}; }, min_run, sides[1]);
  detail::collect_runs(map, w, [&](int k) { return std::pair{box.min_x + k, box.max_y}; }, min_run, sides[2]);
  detail::collect_runs(map, h, [&](int k) { return std::pair{box.min_x - 1, box.min_y + k}; }, min_run, sides[3]);
  return sides;
}

inline SoaDescriptor describe_soa(const SemanticMap& map, const Area& area, const LabelSpace& space,
                                  const SgamConfig& config) {
  SoaDescriptor d;
  d.label_count = space.size();
  d.bits.assign(4 * space.size(), 0);
  for (double s : config.scales()) {
    const auto sides = boundary_labels(map, scaled_box(area.bbox, s), config.min_boundary_run);
    for (int side = 0; side < 4; ++side) {
      for (Label l : sides[side]) {
        if (l == area.anchor_label) continue;
        if (const auto idx = label_index(space, l)) d.bits[side * space.size() + *idx] = 1;
      }
    }
  }
  return d;
}

inline double hamming_fraction(const SoaDescriptor& a, const SoaDescriptor& b) {
  if (a.bits.size() != b.bits.size()) {
    throw Error(ErrorCode::kInvalidArgument, "SOA descriptors come from different label spaces");
  }
  if (a.bits.empty()) return 0.0;
  std::size_t diff = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) diff += a.bits[i] != b.bits[i];
  return static_cast<double>(diff) / static_cast<double>(a.bits.size());
}

struct AreaMatching {
  std::vector<AreaMatchCandidate> matches;
  std::vector<Area> doubtful0;
  std::vector<Area> doubtful1;
};

namespace detail {

/// Nearest-neighbour area matching with doubt flagging. `dist(i, j)` returns
/// nothing when (i, j) is not an admissible pair.
/// - an area whose two best candidates are closer than t_da becomes doubtful
///   together with every candidate within t_da of its best;
/// - a target claimed by several sources becomes doubtful together with those
///   sources when their distances are within t_da, otherwise the closest wins;
/// - surviving matches farther than t_reject are dropped;
/// - a match touching any doubtful area is demoted to doubtful.
inline AreaMatching match_by_distance(const std::vector<Area>& a0, const std::vector<Area>& a1, AreaKind kind,
                                      const std::function<std::optional<double>(std::size_t, std::size_t)>& dist,
                                      double t_reject, double t_da) {
  std::vector<char> doubt0(a0.size(), 0), doubt1(a1.size(), 0);
  struct Proposal {
    std::size_t i, j;
    double d;
  };
  std::vector<Proposal> proposals;
  for (std::size_t i = 0; i < a0.size(); ++i) {
    std::vector<std::pair<double, std::size_t>> cands;
    for (std::size_t j = 0; j < a1.size(); ++j)
      if (const auto d = dist(i, j)) cands.push_back({*d, j});
    if (cands.empty()) continue;
    std::sort(cands.begin(), cands.end());
    if (cands.size() >= 2 && cands[1].first - cands[0].first < t_da) {
      doubt0[i] = 1;
      for (const auto& [d, j] : cands)
        if (d - cands[0].first < t_da) doubt1[j] = 1;
      continue;
    }
    proposals.push_back({i, cands[0].second, cands[0].first});
  }

  std::map<std::size_t, std::vector<Proposal>> by_target;
  for (const auto& p : proposals) by_target[p.j].push_back(p);
  std::vector<Proposal> kept;
  for (auto& [j, ps] : by_target) {
    std::sort(ps.begin(), ps.end(), [](const Proposal& x, const Proposal& y) {
      return std::tie(x.d, x.i) < std::tie(y.d, y.i);
    });
    if (ps.size() >= 2 && ps[1].d - ps[0].d < t_da) {
      doubt1[j] = 1;
      for (const auto& p : ps)
        if (p.d - ps[0].d < t_da) doubt0[p.i] = 1;
      continue;
    }
    kept.push_back(ps[0]);
  }
  std::erase_if(kept, [&](const Proposal& p) { return p.d > t_reject; });

  for (bool changed = true; changed;) {
    changed = false;
    for (auto it = kept.begin(); it != kept.end();) {
      if (doubt0[it->i] || doubt1[it->j]) {
        doubt0[it->i] = doubt1[it->j] = 1;
        it = kept.erase(it);
        changed = true;
      } else {
        ++it;
      }
    }
  }

  AreaMatching out;
  std::sort(kept.begin(), kept.end(), [](const Proposal& x, const Proposal& y) { return x.i < y.i; });
  for (const auto& p : kept) out.matches.push_back({a0[p.i], a1[p.j], kind, p.d, MatchStatus::kAccepted});
  for (std::size_t i = 0; i < a0.size(); ++i)
    if (doubt0[i]) out.doubtful0.push_back(a0[i]);
  for (std::size_t j = 0; j < a1.size(); ++j)
    if (doubt1[j]) out.doubtful1.push_back(a1[j]);
  return out;
}

}  // namespace detail

inline AreaMatching match_soa(const std::vector<Area>& a0, const std::vector<SoaDescriptor>& d0,
                              const std::vector<Area>& a1, const std::vector<SoaDescriptor>& d1,
                              const SgamConfig& config) {
  return detail::match_by_distance(
      a0, a1, AreaKind::kSoa,
      [&](std::size_t i, std::size_t j) -> std::optional<double> {
        if (a0[i].anchor_label != a1[j].anchor_label) return std::nullopt;
        return hamming_fraction(d0[i], d1[j]);
      },
      config.t_h, config.t_da);
}

// ---------------------------------------------------------------------------
// Semantic intersection areas

namespace detail {

/// Variance of the noise-filtered semantic proportions over all labels of the
/// integral's map, or nothing when the window holds at most 3 labels.
inline std::optional<double> proportion_variance(const LabelIntegral& integral, const BBox& window) {
  const auto& labels = integral.labels();
  if (labels.empty()) return std::nullopt;
  const long long area = window.area();
  thread_local std::vector<long long> counts;
  counts.assign(labels.size(), 0);
  long long kept = 0;
  int distinct = 0;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    const long long n = integral.count(k, window);
    if (n == 0 || n * 64 < area) continue;
    counts[k] = n;
    kept += n;
    ++distinct;
  }
  if (distinct <= 3) return std::nullopt;
  const double mean = 1.0 / static_cast<double>(labels.size());
  double var = 0.0;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    const double p = static_cast<double>(counts[k]) / static_cast<double>(kept) - mean;
    var += p * p;
  }
  return var / static_cast<double>(labels.size());
}

struct SiaCandidate {
  BBox box;
  double variance;
};

}  // namespace detail

/// Windows holding more than 3 labels on the coarse pyramid layer, refined at
/// full resolution to the placement of minimal proportion variance.
inline std::vector<Area> detect_sia(const SemanticMap& map, const LabelIntegral& integral, int window_w, int window_h,
                                    const SgamConfig& config) {
  window_w = std::clamp(window_w, 1, map.width());
  window_h = std::clamp(window_h, 1, map.height());
  const int r = config.pyramid_ratio;
  const SemanticMap coarse = downsample(map, r);
  const LabelIntegral coarse_integral(coarse);
  const int cw = std::clamp(static_cast<int>(std::lround(window_w / static_cast<double>(r))), 1, coarse.width());
  const int ch = std::clamp(static_cast<int>(std::lround(window_h / static_cast<double>(r))), 1, coarse.height());
  auto positions = [](int extent, int window) {
    std::vector<int> out;
    const int stride = std::max(1, window / 2);
    for (int p = 0; p + window <= extent; p += stride) out.push_back(p);
    if (out.empty() || out.back() + window < extent) out.push_back(extent - window);
    return out;
  };

  std::vector<detail::SiaCandidate> candidates;
  for (int cy : positions(coarse.height(), ch)) {
    for (int cx : positions(coarse.width(), cw)) {
      const Histogram h = coarse_integral.histogram({cx, cy, cx + cw, cy + ch});
      if (h.size() <= 3) continue;
      const int x0 = std::clamp(cx * r, 0, map.width() - window_w);
      const int y0 = std::clamp(cy * r, 0, map.height() - window_h);
      std::optional<detail::SiaCandidate> best;
      const int xa = std::max(0, x0 - window_w / 2), xb = std::min(map.width() - window_w, x0 + window_w / 2);
      const int ya = std::max(0, y0 - window_h / 2), yb = std::min(map.height() - window_h, y0 + window_h / 2);
      for (int y = ya; y <= yb; ++y) {
        for (int x = xa; x <= xb; ++x) {
          const BBox box{x, y, x + window_w, y + window_h};
          const auto v = detail::proportion_variance(integral, box);
          if (v && (!best || *v < best->variance)) best = detail::SiaCandidate{box, *v};
        }
      }
      if (best) candidates.push_back(*best);
    }
  }

  std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
    return std::tie(a.variance, a.box.min_y, a.box.min_x) < std::tie(b.variance, b.box.min_y, b.box.min_x);
  });
  std::vector<BBox> kept;
  for (const auto& c : candidates) {
    const bool overlaps = std::any_of(kept.begin(), kept.end(),
                                      [&](const BBox& k) { return k.iou(c.box) > config.sia_dedup_iou; });
    if (!overlaps) kept.push_back(c.box);
  }
  std::sort(kept.begin(), kept.end(),
            [](const BBox& a, const BBox& b) { return std::tie(a.min_y, a.min_x) < std::tie(b.min_y, b.min_x); });
  std::vector<Area> out;
  for (const auto& b : kept) out.push_back(Area::make(b, AreaKind::kSia));
  return out;
}

inline std::vector<Area> detect_sia(const SemanticMap& map, int window_w, int window_h, const SgamConfig& config) {
  return detect_sia(map, LabelIntegral(map), window_w, window_h, config);
}

/// Quadrant proportions TL, TR, BL, BR over the pair label space, averaged
/// across scales (scales where a quadrant falls outside the map or holds no
/// labels do not contribute to that quadrant).
struct SiaDescriptor {
  std::size_t label_count = 0;
  std::vector<double> props;

  double at(int quadrant, std::size_t label_idx) const { return props[quadrant * label_count + label_idx]; }
};

inline std::array<BBox, 4> quadrants(const BBox& b) {
  const int mx = b.min_x + b.width() / 2;
  const int my = b.min_y + b.height() / 2;
  return {BBox{b.min_x, b.min_y, mx, my}, BBox{mx, b.min_y, b.max_x, my}, BBox{b.min_x, my, mx, b.max_y},
          BBox{mx, my, b.max_x, b.max_y}};
}

inline SiaDescriptor describe_sia(const SemanticMap& map, const LabelIntegral& integral, const Area& area,
                                  const LabelSpace& space, const SgamConfig& config) {
  SiaDescriptor d;
  d.label_count = space.size();
  d.props.assign(4 * space.size(), 0.0);
  std::array<int, 4> contributing{};
  for (double s : config.scales()) {
    const auto quads = quadrants(scaled_box(area.bbox, s));
    for (int q = 0; q < 4; ++q) {
      if (quads[q].empty() || quads[q].intersect(map.bounds()).empty()) continue;
      const Histogram h = integral.histogram(quads[q]);
      if (h.empty()) continue;
      ++contributing[q];
      for (const auto& [label, frac] : h)
        if (const auto idx = label_index(space, label)) d.props[q * space.size() + *idx] += frac;
    }
  }
  for (int q = 0; q < 4; ++q)
    if (contributing[q] > 0)
      for (std::size_t k = 0; k < space.size(); ++k) d.props[q * space.size() + k] /= contributing[q];
  return d;
}

inline SiaDescriptor describe_sia(const SemanticMap& map, const Area& area, const LabelSpace& space,
                                  const SgamConfig& config) {
  return describe_sia(map, LabelIntegral(map), area, space, config);
}

inline double l2_distance(const SiaDescriptor& a, const SiaDescriptor& b) {
  if (a.props.size() != b.props.size()) {
    throw Error(ErrorCode::kInvalidArgument, "SIA descriptors come from different label spaces");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.props.size(); ++i) s += (a.props[i] - b.props[i]) * (a.props[i] - b.props[i]);
  return std::sqrt(s);
}

inline AreaMatching match_sia(const std::vector<Area>& a0, const std::vector<SiaDescriptor>& d0,
                              const std::vector<Area>& a1, const std::vector<SiaDescriptor>& d1,
                              const SgamConfig& config) {
  return detail::match_by_distance(
      a0, a1, AreaKind::kSia,
      [&](std::size_t i, std::size_t j) -> std::optional<double> { return l2_distance(d0[i], d1[j]); }, config.t_l,
      config.t_da);
}

// ---------------------------------------------------------------------------
// Full semantic area matching

/// Window scale for (I0, I1): I1's window follows the geometric mean of the
/// linear size ratio of accepted SOA matches.
inline std::pair<double, double> adjust_sia_scale(const std::vector<AreaMatchCandidate>& soa_matches) {
  double log_sum = 0.0;
  int n = 0;
  for (const auto& m : soa_matches) {
    if (m.kind != AreaKind::kSoa || m.status != MatchStatus::kAccepted) continue;
    const double a0 = static_cast<double>(m.a0.bbox.area());
    const double a1 = static_cast<double>(m.a1.bbox.area());
    if (a0 <= 0 || a1 <= 0) continue;
    log_sum += 0.5 * std::log(a1 / a0);
    ++n;
  }
  if (n == 0) return {1.0, 1.0};
  return {1.0, std::exp(log_sum / n)};
}

namespace detail {

inline void push_unique(std::vector<Area>& v, const Area& a) {
  if (std::find(v.begin(), v.end(), a) == v.end()) v.push_back(a);
}

}  // namespace detail

inline SamOutput sam_pipeline(const SemanticMap& map0, const SemanticMap& map1, const SgamConfig& config) {
  const LabelSpace space = pair_label_space(map0, map1);
  SamOutput out;

  const auto soa0 = detect_soa(map0, config);
  const auto soa1 = detect_soa(map1, config);
  std::vector<SoaDescriptor> sd0, sd1;
  for (const auto& a : soa0) sd0.push_back(describe_soa(map0, a, space, config));
  for (const auto& a : soa1) sd1.push_back(describe_soa(map1, a, space, config));
  AreaMatching soa = match_soa(soa0, sd0, soa1, sd1, config);

  const auto [s0, s1] = adjust_sia_scale(soa.matches);
  const int base = config.default_area_size;
  const int w0 = static_cast<int>(std::lround(base * s0));
  const int w1 = static_cast<int>(std::lround(base * s1));
  const LabelIntegral int0(map0), int1(map1);
  const auto sia0 = detect_sia(map0, int0, w0, w0, config);
  const auto sia1 = detect_sia(map1, int1, w1, w1, config);
  std::vector<SiaDescriptor> id0, id1;
  for (const auto& a : sia0) id0.push_back(describe_sia(map0, int0, a, space, config));
  for (const auto& a : sia1) id1.push_back(describe_sia(map1, int1, a, space, config));
  AreaMatching sia = match_sia(sia0, id0, sia1, id1, config);

  for (auto* m : {&soa, &sia}) {
    for (const auto& c : m->matches) out.accepted.push_back(c);
    for (const auto& a : m->doubtful0) detail::push_unique(out.doubtful_a0, a);
    for (const auto& a : m->doubtful1) detail::push_unique(out.doubtful_a1, a);
  }
  std::erase_if(out.accepted, [&](const AreaMatchCandidate& c) {
    const bool clash = std::find(out.doubtful_a0.begin(), out.doubtful_a0.end(), c.a0) != out.doubtful_a0.end() ||
                       std::find(out.doubtful_a1.begin(), out.doubtful_a1.end(), c.a1) != out.doubtful_a1.end();
    if (clash) {
      detail::push_unique(out.doubtful_a0, c.a0);
      detail::push_unique(out.doubtful_a1, c.a1);
    }
    return clash;
  });
  return out;
}

}  // namespace a2pm
