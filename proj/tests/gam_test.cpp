#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "a2pm/gam.hpp"
#include "test_support.hpp"

namespace a2pm {
namespace {

using testing::TwoView;

const std::array<BBox, 4> kQuadrants = {BBox{0, 0, 320, 240}, BBox{320, 0, 640, 240}, BBox{0, 240, 320, 480},
                                        BBox{320, 240, 640, 480}};

AreaMatchCandidate candidate(const BBox& b0, const BBox& b1) {
  AreaMatchCandidate c;
  c.a0 = Area::make(b0, AreaKind::kSia);
  c.a1 = Area::make(b1, AreaKind::kSia);
  c.kind = AreaKind::kSia;
  return c;
}

/// Four areas, one per image-0 quadrant, sharing one true geometry.
AreaMatchSet quadrant_set(const TwoView& tv, std::mt19937_64& rng, double noise, const SgamConfig& cfg) {
  const MatchSet all = testing::project_random_points(tv, 600, rng, noise);
  AreaMatchSet set;
  for (const BBox& b : kQuadrants) {
    MatchSet s;
    for (const auto& c : all.matches)
      if (b.contains(c.q)) s.matches.push_back(c);
    set.entries.push_back(make_entry(candidate(b, {0, 0, 640, 480}), s, cfg));
  }
  return set;
}

/// Image-1 points pushed through a similarity, as a matcher fed the wrong
/// crop would report them. A positive jitter adds scatter on top.
MatchSet displaced(const MatchSet& s, int variant = 0, double jitter = 0.0) {
  std::mt19937_64 rng(static_cast<std::uint64_t>(variant) + 99);
  std::normal_distribution<double> n(0.0, 1.0);
  const double a = 0.3 + 0.4 * variant, k = 0.8;
  MatchSet out;
  for (const auto& c : s.matches) {
    const double x = c.p.x - 320.0, y = c.p.y - 240.0;
    Point2 p{320.0 + k * (std::cos(a) * x - std::sin(a) * y) + 30.0 * variant,
             240.0 + k * (std::sin(a) * x + std::cos(a) * y) - 20.0};
    if (jitter > 0.0) p.x += jitter * n(rng), p.y += jitter * n(rng);
    out.matches.push_back({c.q, p});
  }
  return out;
}

TEST(GeometryConsistency, SharedTrueGeometryIsConsistent) {
  std::mt19937_64 rng(1);
  const auto tv = testing::random_two_view(rng);
  const SgamConfig cfg;
  const auto set = quadrant_set(tv, rng, 0.0, cfg);
  const auto rep = geometry_consistency(set);
  ASSERT_EQ(rep.included.size(), 4u);
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index j = 0; j < 4; ++j) EXPECT_LT(rep.cross(i, j), 1e-9);
  for (double g : rep.g) EXPECT_LT(g, 1e-9);
}

TEST(GeometryConsistency, RowMeansAndDiagonalAgreeWithDirectEvaluation) {
  std::mt19937_64 rng(2);
  const auto tv = testing::random_two_view(rng);
  const SgamConfig cfg;
  const auto set = quadrant_set(tv, rng, 1.0, cfg);
  const auto rep = geometry_consistency(set);
  for (std::size_t i = 0; i < 4; ++i) {
    // Self term straight from the set-level Sampson mean.
    EXPECT_DOUBLE_EQ(rep.self[i], sampson_set(*set.entries[i].f, set.entries[i].matches).mean);
    double sum = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0.0;
      for (const auto& c : set.entries[j].matches.matches) s += sampson_single(*set.entries[i].f, c);
      const double d = s / static_cast<double>(set.entries[j].matches.size());
      EXPECT_NEAR(rep.cross(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)), d, 1e-12 * (1 + d));
      sum += d;
    }
    EXPECT_NEAR(rep.g[i], sum / 4.0, 1e-12 * (1 + sum));
    EXPECT_GE(rep.g[i], 0.0);
  }
}

TEST(GeometryConsistency, SingleAreaUsesItsSelfTerm) {
  std::mt19937_64 rng(3);
  const auto tv = testing::random_two_view(rng);
  AreaMatchSet set = quadrant_set(tv, rng, 1.0, SgamConfig{});
  set.entries.resize(1);
  const auto rep = geometry_consistency(set);
  EXPECT_DOUBLE_EQ(rep.g[0], rep.self[0]);
}

TEST(GeometryConsistency, SmallAreasAreExcluded) {
  std::mt19937_64 rng(4);
  const auto tv = testing::random_two_view(rng);
  const SgamConfig cfg;
  AreaMatchSet set = quadrant_set(tv, rng, 0.0, cfg);
  set.entries[2].matches.matches.resize(7);
  set.entries[2] = make_entry(set.entries[2].candidate, set.entries[2].matches, cfg);
  EXPECT_FALSE(set.entries[2].f.has_value());
  const auto rep = geometry_consistency(set);
  EXPECT_EQ(rep.included, (std::vector<std::size_t>{0, 1, 3}));
  EXPECT_EQ(rep.excluded, (std::vector<std::size_t>{2}));

  AreaMatchSet none;
  none.entries.push_back(set.entries[2]);
  try {
    geometry_consistency(none);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTooFewAreas);
  }
}

TEST(GeometryConsistency, DisplacedAreaStandsOut) {
  // The corrupted area's G is the largest in the set. It is not 10x the
  // median of the others: the displaced matches fit their own F exactly, so
  // the correct areas share the large cross term with it.
  for (std::uint64_t seed = 10; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const auto tv = testing::random_two_view(rng);
    const SgamConfig cfg;
    AreaMatchSet set = quadrant_set(tv, rng, 0.5, cfg);
    MatchSet extra;
    for (const auto& c : testing::project_random_points(tv, 100, rng, 0.5).matches) extra.matches.push_back(c);
    set.entries.push_back(make_entry(candidate({0, 0, 640, 480}, {0, 0, 640, 480}), displaced(extra), cfg));
    const auto rep = geometry_consistency(set);
    ASSERT_EQ(rep.g.size(), 5u);
    EXPECT_EQ(std::max_element(rep.g.begin(), rep.g.end()) - rep.g.begin(), 4) << seed;
  }
}

TEST(GrReject, AllCorrectKeepsEverything) {
  std::mt19937_64 rng(5);
  const auto tv = testing::random_two_view(rng);
  const auto set = quadrant_set(tv, rng, 0.0, SgamConfig{});
  for (double phi : {1.0, 0.5}) {
    const auto gr = gr_reject(set, phi);
    EXPECT_EQ(gr.kept.entries.size(), 4u) << phi;
    EXPECT_FALSE(gr.all_rejected);
  }
}

TEST(GrReject, KeptAreasAreCertifiedBelowThreshold) {
  std::mt19937_64 rng(6);
  const auto tv = testing::random_two_view(rng);
  const auto set = quadrant_set(tv, rng, 1.0, SgamConfig{});
  const auto gr = gr_reject(set, 1.0);
  double mean_self = 0.0;
  for (double d : gr.report.self) mean_self += d;
  EXPECT_NEAR(gr.threshold, mean_self / 4.0 + 1e-12, 1e-15);
  for (std::size_t k = 0; k < gr.report.included.size(); ++k)
    EXPECT_EQ(gr.rejected[gr.report.included[k]], gr.report.g[k] > gr.threshold);
  const auto again = geometry_consistency(set);
  for (const auto& e : gr.kept.entries) {
    const auto it = std::find_if(set.entries.begin(), set.entries.end(),
                                 [&](const AreaEntry& x) { return x.candidate.a0 == e.candidate.a0; });
    EXPECT_LE(again.g[static_cast<std::size_t>(it - set.entries.begin())], gr.threshold);
  }
}

TEST(GrReject, SingleAreaAndTies) {
  std::mt19937_64 rng(7);
  const auto tv = testing::random_two_view(rng);
  AreaMatchSet set = quadrant_set(tv, rng, 1.0, SgamConfig{});
  set.entries.resize(1);
  EXPECT_EQ(gr_reject(set, 1.0).kept.entries.size(), 1u);
  // G equals the threshold exactly with no slack: ties keep.
  EXPECT_EQ(gr_reject(set, 1.0, 0.0).kept.entries.size(), 1u);
  EXPECT_EQ(gr_reject(set, 0.5, 0.0).kept.entries.size(), 0u);
}

TEST(GrReject, NothingCertifiableIsSignalled) {
  AreaMatchSet set;
  set.entries.push_back({candidate({0, 0, 10, 10}, {0, 0, 10, 10}), {}, std::nullopt});
  const auto gr = gr_reject(set, 1.0);
  EXPECT_TRUE(gr.all_rejected);
  EXPECT_TRUE(gr.kept.entries.empty());
  EXPECT_THROW(gr_reject(AreaMatchSet{}, 1.0), Error);
}

// ---------------------------------------------------------------------------
// GP

struct GpFixture {
  TwoView tv;
  std::vector<Area> d0, d1;
  std::vector<MatchSet> truth;  // matches of the true pairing i <-> i
  int calls = 0;

  explicit GpFixture(std::uint64_t seed, std::size_t n = 2) {
    std::mt19937_64 rng(seed);
    tv = testing::random_two_view(rng);
    const MatchSet all = testing::project_random_points(tv, 1200, rng, 0.5);
    for (std::size_t i = 0; i < n; ++i) {
      const BBox b = kQuadrants[i];
      d0.push_back(Area::make(b, AreaKind::kSoa, 20));
      d1.push_back(Area::make({b.min_x + 1, b.min_y, b.max_x + 1, b.max_y}, AreaKind::kSoa, 20));
      MatchSet s;
      for (const auto& c : all.matches)
        if (b.contains(c.q) && s.size() < 80) s.matches.push_back(c);
      truth.push_back(s);
    }
  }

  std::size_t index0(const Area& a) const { return std::find(d0.begin(), d0.end(), a) - d0.begin(); }
  std::size_t index1(const Area& a) const { return std::find(d1.begin(), d1.end(), a) - d1.begin(); }

  PairMatcher matcher() {
    return [this](const AreaMatchCandidate& c) -> std::optional<MatchSet> {
      ++calls;
      const std::size_t i = index0(c.a0), j = index1(c.a1);
      return i == j ? truth[i] : displaced(truth[i], static_cast<int>(3 * i + j), 4.0);
    };
  }
};

TEST(GpPredict, SingleCandidateIsReturned) {
  GpFixture fx(1, 1);
  const auto r = gp_predict(fx.d0, fx.d1, fx.matcher(), SgamConfig{});
  ASSERT_EQ(r.entries.size(), 1u);
  EXPECT_EQ(r.entries[0].candidate.a0, fx.d0[0]);
  EXPECT_EQ(r.entries[0].candidate.provenance, Provenance::kPredicted);
}

TEST(GpPredict, TrueAssignmentHasHighestProbability) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    GpFixture fx(seed, 3);
    const auto r = gp_predict(fx.d0, fx.d1, fx.matcher(), SgamConfig{});
    ASSERT_EQ(r.assignments.size(), 6u);
    EXPECT_EQ(fx.calls, 9);  // each pairing matched once
    ASSERT_TRUE(r.best.has_value());
    for (const auto& [i, j] : r.assignments[*r.best].pairs) EXPECT_EQ(i, j);
    // argmax of exp(-G) equals argmin of G.
    const auto by_g = std::min_element(r.assignments.begin(), r.assignments.end(),
                                       [](const GpAssignment& a, const GpAssignment& b) { return a.g < b.g; });
    EXPECT_EQ(static_cast<std::size_t>(by_g - r.assignments.begin()), *r.best);
    for (const auto& a : r.assignments) EXPECT_DOUBLE_EQ(a.p, std::exp(-a.g));
  }
}

TEST(GpPredict, PermutingInputsPermutesOutput) {
  GpFixture fx(3, 3);
  const auto r = gp_predict(fx.d0, fx.d1, fx.matcher(), SgamConfig{});
  std::vector<Area> p0 = {fx.d0[2], fx.d0[0], fx.d0[1]}, p1 = {fx.d1[1], fx.d1[2], fx.d1[0]};
  const auto q = gp_predict(p0, p1, fx.matcher(), SgamConfig{});
  auto pairs = [](const GpResult& g) {
    std::vector<std::pair<Area, Area>> v;
    for (const auto& e : g.entries) v.emplace_back(e.candidate.a0, e.candidate.a1);
    std::sort(v.begin(), v.end());
    return v;
  };
  EXPECT_EQ(pairs(r), pairs(q));
}

TEST(GpPredict, MoreAreasInOneImage) {
  GpFixture fx(4, 3);
  std::vector<Area> d1 = {fx.d1[1]};
  const auto r = gp_predict(fx.d0, d1, fx.matcher(), SgamConfig{});
  EXPECT_EQ(r.assignments.size(), 3u);
  ASSERT_EQ(r.entries.size(), 1u);
  // With one pairing per assignment G is its self term; the displaced pairings
  // fit their own geometry too, so only validity is checked here.
  EXPECT_EQ(r.entries[0].candidate.a1, fx.d1[1]);
}

TEST(GpPredict, InvalidPairingsGetZeroProbability) {
  GpFixture fx(5, 2);
  auto base = fx.matcher();
  const PairMatcher pm = [&](const AreaMatchCandidate& c) -> std::optional<MatchSet> {
    if (fx.index0(c.a0) == 0 && fx.index1(c.a1) == 0) return std::nullopt;
    return base(c);
  };
  const auto r = gp_predict(fx.d0, fx.d1, pm, SgamConfig{});
  ASSERT_EQ(r.assignments.size(), 2u);
  EXPECT_FALSE(r.assignments[0].valid);
  EXPECT_EQ(r.assignments[0].p, 0.0);
  EXPECT_EQ(*r.best, 1u);

  const PairMatcher dead = [](const AreaMatchCandidate&) -> std::optional<MatchSet> { return MatchSet{}; };
  const auto none = gp_predict(fx.d0, fx.d1, dead, SgamConfig{});
  EXPECT_FALSE(none.best.has_value());
  EXPECT_TRUE(none.entries.empty());
}

TEST(GpPredict, GreedyFallbackAboveCap) {
  GpFixture fx(6, 3);
  SgamConfig cfg;
  cfg.gp_enumeration_cap = 5;  // 3! = 6 assignments
  const auto r = gp_predict(fx.d0, fx.d1, fx.matcher(), cfg);
  EXPECT_TRUE(r.greedy);
  ASSERT_EQ(r.entries.size(), 3u);
  for (const auto& e : r.entries) EXPECT_EQ(fx.index0(e.candidate.a0), fx.index1(e.candidate.a1));
}

// ---------------------------------------------------------------------------
// Size proportion and GMC

TEST(SizeProportion, Coverage) {
  EXPECT_EQ(size_proportion(AreaMatchSet{}, 640, 480, 640, 480), 0.0);
  AreaMatchSet full;
  full.entries.push_back({candidate({0, 0, 640, 480}, {0, 0, 640, 480}), {}, std::nullopt});
  EXPECT_DOUBLE_EQ(size_proportion(full, 640, 480, 640, 480), 1.0);
  AreaMatchSet two;
  two.entries.push_back({candidate(kQuadrants[0], kQuadrants[0]), {}, std::nullopt});
  two.entries.push_back({candidate(kQuadrants[3], kQuadrants[3]), {}, std::nullopt});
  EXPECT_DOUBLE_EQ(size_proportion(two, 640, 480, 640, 480), 0.5);
  // Overlaps count once.
  two.entries.push_back({candidate({0, 0, 160, 120}, {0, 0, 160, 120}), {}, std::nullopt});
  EXPECT_DOUBLE_EQ(size_proportion(two, 640, 480, 640, 480), 0.5);
}

struct GmcData {
  AreaMatchSet kept;
  MatchSet global;
  std::vector<bool> outlier;
};

GmcData gmc_data(std::uint64_t seed, double inside_noise) {
  std::mt19937_64 rng(seed);
  const auto tv = testing::random_two_view(rng);
  GmcData d;
  const BBox small{280, 200, 360, 280};
  MatchSet inside;
  BBox small1{640, 480, 0, 0};
  const MatchSet pool = testing::project_random_points(tv, 3000, rng, inside_noise);
  for (const auto& c : pool.matches)
    if (small.contains(c.q)) {
      inside.matches.push_back(c);
      small1.min_x = std::min(small1.min_x, static_cast<int>(std::floor(c.p.x)));
      small1.min_y = std::min(small1.min_y, static_cast<int>(std::floor(c.p.y)));
      small1.max_x = std::max(small1.max_x, static_cast<int>(std::ceil(c.p.x)) + 1);
      small1.max_y = std::max(small1.max_y, static_cast<int>(std::ceil(c.p.y)) + 1);
    }
  d.kept.entries.push_back(make_entry(candidate(small, small1), inside, SgamConfig{}));
  std::uniform_real_distribution<double> ux(0, 640), uy(0, 480), u(0, 1);
  for (const auto& c : testing::project_random_points(tv, 500, rng, 0.0).matches) {
    const bool out = u(rng) < 0.3;
    d.global.matches.push_back(out ? Correspondence{c.q, {ux(rng), uy(rng)}} : c);
    d.outlier.push_back(out);
  }
  return d;
}

TEST(GmcCollect, GateOnSizeProportion) {
  GmcData d = gmc_data(1, 0.0);
  SgamConfig cfg;
  cfg.t_sp = 0.01;
  int calls = 0;
  const auto r = gmc_collect(d.kept, [&] { ++calls; return std::optional<MatchSet>(d.global); }, 640, 480, 640, 480, cfg);
  EXPECT_FALSE(r.ran);
  EXPECT_TRUE(r.collected.empty());
  EXPECT_EQ(calls, 0);
}

TEST(GmcCollect, NoiselessInsideMatchesExcludeOutliers) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    GmcData d = gmc_data(seed, 0.0);
    ASSERT_GE(d.kept.entries[0].matches.size(), 8u);
    const auto r = gmc_collect(d.kept, [&] { return std::optional<MatchSet>(d.global); }, 640, 480, 640, 480,
                               SgamConfig{});
    ASSERT_TRUE(r.ran);
    EXPECT_LT(r.size_proportion, 0.3);
    EXPECT_GT(r.collected.size(), 0u);
    for (const auto& c : r.collected.matches) {
      const auto idx = std::find(d.global.matches.begin(), d.global.matches.end(), c) - d.global.matches.begin();
      EXPECT_FALSE(d.outlier[static_cast<std::size_t>(idx)]);
      EXPECT_LE(sampson_single(*r.f, c), r.threshold);
    }
  }
}

TEST(GmcCollect, KeptMatchesAreNoWorseThanPooledMean) {
  GmcData d = gmc_data(3, 1.0);
  const auto r =
      gmc_collect(d.kept, [&] { return std::optional<MatchSet>(d.global); }, 640, 480, 640, 480, SgamConfig{});
  ASSERT_TRUE(r.ran);
  ASSERT_FALSE(r.collected.empty());
  EXPECT_NEAR(r.threshold, sampson_set(*r.f, d.kept.entries[0].matches).mean, 1e-12);
  EXPECT_LE(sampson_set(*r.f, r.collected).mean, r.threshold);
}

TEST(GmcCollect, EstimationFailureSkips) {
  AreaMatchSet kept;
  MatchSet few;
  for (int i = 0; i < 5; ++i) few.matches.push_back({{10.0 * i, 5.0}, {10.0 * i + 1, 5.0}});
  kept.entries.push_back({candidate({0, 0, 50, 50}, {0, 0, 50, 50}), few, std::nullopt});
  const auto r = gmc_collect(kept, [] { return std::optional<MatchSet>(MatchSet{}); }, 640, 480, 640, 480, SgamConfig{});
  EXPECT_FALSE(r.ran);
  EXPECT_FALSE(r.warning.empty());
}

}  // namespace
}  // namespace a2pm
