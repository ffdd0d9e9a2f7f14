#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "a2pm/config.hpp"
#include "a2pm/error.hpp"
#include "a2pm/geometry.hpp"
#include "a2pm/sam.hpp"

namespace a2pm {

/// Minimum inside-area matches for an area to carry its own F.
inline constexpr std::size_t kMinAreaMatches = 8;

struct AreaEntry {
  AreaMatchCandidate candidate;
  MatchSet matches;
  std::optional<FundamentalMatrix> f;

  bool certifiable() const { return f.has_value() && matches.size() >= kMinAreaMatches; }
};

struct AreaMatchSet {
  std::vector<AreaEntry> entries;
  long mapping_id = -1;
};

/// F of one area's inside matches, or nothing when it cannot be estimated.
inline std::optional<FundamentalMatrix> area_fundamental(const MatchSet& s, const SgamConfig& config) {
  if (s.size() < kMinAreaMatches) return std::nullopt;
  try {
    if (config.inside_f_ransac) return ransac_fundamental(s, config.ransac).f;
    return estimate_fundamental(s);
  } catch (const Error&) {
    return std::nullopt;
  }
}

inline AreaEntry make_entry(const AreaMatchCandidate& c, MatchSet s, const SgamConfig& config) {
  AreaEntry e{c, std::move(s), std::nullopt};
  e.f = area_fundamental(e.matches, config);
  return e;
}

/// Mean Sampson distance skipping matches that sit on an epipole; infinity
/// when every match does.
inline double mean_sampson(const FundamentalMatrix& f, std::span<const Correspondence> s) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& c : s) {
    try {
      sum += sampson_single(f, c);
      ++n;
    } catch (const Error&) {
    }
  }
  return n ? sum / static_cast<double>(n) : std::numeric_limits<double>::infinity();
}

struct ConsistencyReport {
  std::vector<std::size_t> included;  // entry indices, in input order
  std::vector<std::size_t> excluded;  // fewer than 8 matches or no F
  Eigen::MatrixXd cross;              // cross(i, j): P_j under F_i
  std::vector<double> self;
  std::vector<double> g;
  double set_g = 0.0;
};

inline ConsistencyReport geometry_consistency(const AreaMatchSet& set) {
  ConsistencyReport r;
  for (std::size_t i = 0; i < set.entries.size(); ++i)
    (set.entries[i].certifiable() ? r.included : r.excluded).push_back(i);
  const auto n = static_cast<Eigen::Index>(r.included.size());
  if (n == 0) throw Error(ErrorCode::kTooFewAreas, "no area has enough matches for geometry consistency");
  r.cross.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      r.cross(i, j) = mean_sampson(*set.entries[r.included[i]].f, set.entries[r.included[j]].matches.view());
  for (Eigen::Index i = 0; i < n; ++i) {
    r.self.push_back(r.cross(i, i));
    r.g.push_back(r.cross.row(i).mean());
  }
  r.set_g = std::accumulate(r.g.begin(), r.g.end(), 0.0) / static_cast<double>(n);
  return r;
}

// ---------------------------------------------------------------------------
// Rejector

struct GrResult {
  AreaMatchSet kept;
  ConsistencyReport report;
  double threshold = 0.0;
  std::vector<bool> rejected;  // per input entry; uncertifiable entries count as rejected
  bool all_rejected = false;
};

inline GrResult gr_reject(const AreaMatchSet& set, double phi, double epsilon = 1e-12) {
  GrResult out;
  out.kept.mapping_id = set.mapping_id;
  out.rejected.assign(set.entries.size(), true);
  if (set.entries.empty()) throw Error(ErrorCode::kEmptySet, "gr_reject on an empty set");
  try {
    out.report = geometry_consistency(set);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kTooFewAreas) throw;
    out.report.excluded.resize(set.entries.size());
    std::iota(out.report.excluded.begin(), out.report.excluded.end(), 0);
    out.all_rejected = true;
    return out;
  }
  const auto& self = out.report.self;
  const double mean_self = std::accumulate(self.begin(), self.end(), 0.0) / static_cast<double>(self.size());
  out.threshold = phi * mean_self + epsilon;
  for (std::size_t k = 0; k < out.report.included.size(); ++k) {
    if (out.report.g[k] > out.threshold) continue;
    const std::size_t idx = out.report.included[k];
    out.rejected[idx] = false;
    out.kept.entries.push_back(set.entries[idx]);
  }
  out.all_rejected = out.kept.entries.empty();
  return out;
}

// ---------------------------------------------------------------------------
// Predictor

/// Runs the point matcher inside one area pairing; nothing on matcher failure.
using PairMatcher = std::function<std::optional<MatchSet>(const AreaMatchCandidate&)>;

struct GpAssignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (index in doubtful0, index in doubtful1)
  bool valid = false;
  double g = std::numeric_limits<double>::infinity();
  double p = 0.0;  // exp(-g), 0 when invalid
};

struct GpResult {
  std::vector<AreaEntry> entries;  // the selected pairings with their matches
  std::vector<GpAssignment> assignments;
  std::optional<std::size_t> best;
  bool greedy = false;
};

namespace detail {

inline double count_assignments(std::size_t h, std::size_t r) {
  double l = 1.0;
  for (std::size_t k = 0; k < r; ++k) l *= static_cast<double>(h - k);
  return l;
}

/// Every injective map from {0..r-1} into {0..h-1}, lexicographic.
inline void enumerate_injective(std::size_t r, std::size_t h, std::vector<std::size_t>& cur, std::vector<bool>& used,
                                std::vector<std::vector<std::size_t>>& out) {
  if (cur.size() == r) {
    out.push_back(cur);
    return;
  }
  for (std::size_t j = 0; j < h; ++j) {
    if (used[j]) continue;
    used[j] = true;
    cur.push_back(j);
    enumerate_injective(r, h, cur, used, out);
    cur.pop_back();
    used[j] = false;
  }
}

}  // namespace detail

/// Resolves one group of doubtful areas. Each pairing is matched at most once;
/// the assignment with the highest exp(-G) over its own pairings wins.
inline GpResult gp_predict(const std::vector<Area>& doubtful0, const std::vector<Area>& doubtful1,
                           const PairMatcher& pm, const SgamConfig& config) {
  GpResult out;
  if (doubtful0.empty() || doubtful1.empty()) return out;
  const bool flip = doubtful0.size() < doubtful1.size();
  const std::size_t h = flip ? doubtful1.size() : doubtful0.size();
  const std::size_t r = flip ? doubtful0.size() : doubtful1.size();

  std::map<std::pair<std::size_t, std::size_t>, std::optional<AreaEntry>> cache;
  auto pairing = [&](std::size_t i0, std::size_t i1) -> const std::optional<AreaEntry>& {
    auto it = cache.find({i0, i1});
    if (it != cache.end()) return it->second;
    AreaMatchCandidate c;
    c.a0 = doubtful0[i0];
    c.a1 = doubtful1[i1];
    c.kind = c.a0.kind;
    c.status = MatchStatus::kAccepted;
    c.provenance = Provenance::kPredicted;
    std::optional<AreaEntry> e;
    if (auto s = pm(c)) {
      AreaEntry entry = make_entry(c, std::move(*s), config);
      if (entry.certifiable()) e = std::move(entry);
    }
    return cache.emplace(std::make_pair(i0, i1), std::move(e)).first->second;
  };
  auto to_pair = [&](std::size_t small, std::size_t large) {
    return flip ? std::make_pair(small, large) : std::make_pair(large, small);
  };
  auto pair_key = [&](const std::pair<std::size_t, std::size_t>& p) { return std::make_pair(doubtful0[p.first], doubtful1[p.second]); };
  auto evaluate = [&](GpAssignment& a) {
    AreaMatchSet set;
    for (const auto& pr : a.pairs) {
      const auto& e = pairing(pr.first, pr.second);
      if (!e) return;
      set.entries.push_back(*e);
    }
    const ConsistencyReport rep = geometry_consistency(set);
    a.valid = true;
    a.g = rep.set_g;
    a.p = std::exp(-a.g);
  };

  if (detail::count_assignments(h, r) <= static_cast<double>(config.gp_enumeration_cap)) {
    std::vector<std::vector<std::size_t>> maps;
    std::vector<std::size_t> cur;
    std::vector<bool> used(h, false);
    detail::enumerate_injective(r, h, cur, used, maps);
    for (std::size_t l = 0; l < maps.size(); ++l) {
      GpAssignment a;
      for (std::size_t k = 0; k < r; ++k) a.pairs.push_back(to_pair(k, maps[l][k]));
      evaluate(a);
      out.assignments.push_back(std::move(a));
    }
    // Ties break on area identity so the choice does not depend on list order.
    auto key = [&](const GpAssignment& a) {
      std::vector<std::pair<Area, Area>> k;
      for (const auto& pr : a.pairs) k.push_back(pair_key(pr));
      std::sort(k.begin(), k.end());
      return k;
    };
    for (std::size_t l = 0; l < out.assignments.size(); ++l) {
      const auto& a = out.assignments[l];
      if (!a.valid) continue;
      if (!out.best) {
        out.best = l;
        continue;
      }
      const auto& b = out.assignments[*out.best];
      if (a.p > b.p || (a.p == b.p && key(a) < key(b))) out.best = l;
    }
  } else {
    out.greedy = true;
    GpAssignment a;
    std::vector<bool> used0(doubtful0.size(), false), used1(doubtful1.size(), false);
    AreaMatchSet accepted;
    for (std::size_t step = 0; step < r; ++step) {
      std::optional<std::pair<std::size_t, std::size_t>> pick;
      double pick_g = std::numeric_limits<double>::infinity();
      for (std::size_t i0 = 0; i0 < doubtful0.size(); ++i0) {
        if (used0[i0]) continue;
        for (std::size_t i1 = 0; i1 < doubtful1.size(); ++i1) {
          if (used1[i1]) continue;
          const auto& e = pairing(i0, i1);
          if (!e) continue;
          AreaMatchSet trial = accepted;
          trial.entries.push_back(*e);
          const double g = geometry_consistency(trial).g.back();
          if (g < pick_g || (g == pick_g && pick && pair_key({i0, i1}) < pair_key(*pick))) pick_g = g, pick = {i0, i1};
        }
      }
      if (!pick) break;
      used0[pick->first] = used1[pick->second] = true;
      accepted.entries.push_back(*pairing(pick->first, pick->second));
      a.pairs.push_back(*pick);
    }
    if (!a.pairs.empty()) {
      evaluate(a);
      out.assignments.push_back(std::move(a));
      out.best = 0;
    }
  }
  if (out.best) {
    for (const auto& pr : out.assignments[*out.best].pairs) out.entries.push_back(*pairing(pr.first, pr.second));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Global match collection

/// Union coverage of the area boxes in each image over the image area,
/// averaged over both images.
inline double size_proportion(const AreaMatchSet& set, int w0, int h0, int w1, int h1) {
  if (set.entries.empty()) return 0.0;
  auto coverage = [&](bool second, int w, int h) {
    std::vector<unsigned char> mask(static_cast<std::size_t>(w) * h, 0);
    for (const auto& e : set.entries) {
      const BBox b = (second ? e.candidate.a1.bbox : e.candidate.a0.bbox).intersect({0, 0, w, h});
      for (int y = b.min_y; y < b.max_y; ++y)
        std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(y) * w + b.min_x, b.width(), 1);
    }
    return static_cast<double>(std::count(mask.begin(), mask.end(), 1)) / (static_cast<double>(w) * h);
  };
  return 0.5 * (coverage(false, w0, h0) + coverage(true, w1, h1));
}

struct GmcResult {
  bool ran = false;
  double size_proportion = 0.0;
  std::optional<FundamentalMatrix> f;
  double threshold = 0.0;
  std::size_t considered = 0;
  MatchSet collected;
  std::string warning;
};

/// Collects full-image matches consistent with the pooled inside-area
/// geometry when the matched areas cover little of the images.
inline GmcResult gmc_collect(const AreaMatchSet& kept, const std::function<std::optional<MatchSet>()>& global_pm,
                             int w0, int h0, int w1, int h1, const SgamConfig& config) {
  GmcResult out;
  out.size_proportion = size_proportion(kept, w0, h0, w1, h1);
  if (out.size_proportion >= config.t_sp || kept.entries.empty()) return out;
  MatchSet pooled;
  for (const auto& e : kept.entries)
    pooled.matches.insert(pooled.matches.end(), e.matches.matches.begin(), e.matches.matches.end());
  try {
    out.f = config.gmc_ransac ? ransac_fundamental(pooled, config.ransac).f : estimate_fundamental(pooled);
  } catch (const Error& e) {
    out.warning = std::string("global match collection skipped: ") + e.what();
    return out;
  }
  double sum = 0.0;
  std::size_t areas = 0;
  for (const auto& e : kept.entries) {
    if (e.matches.empty()) continue;
    sum += mean_sampson(*out.f, e.matches.view());
    ++areas;
  }
  out.threshold = sum / static_cast<double>(areas);
  out.ran = true;
  const auto global = global_pm();
  if (!global) {
    out.warning = "global match collection skipped: full-image matching failed";
    return out;
  }
  out.considered = global->size();
  for (const auto& c : global->matches) {
    try {
      if (sampson_single(*out.f, c) <= out.threshold) out.collected.matches.push_back(c);
    } catch (const Error&) {
    }
  }
  return out;
}

}  // namespace a2pm
