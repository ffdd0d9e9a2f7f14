#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "a2pm/eval.hpp"
#include "a2pm/synth.hpp"

namespace a2pm {
namespace {

GroundTruth homography_gt(const Eigen::Matrix3d& h) {
  GroundTruth gt;
  gt.k0 = gt.k1 = fixture_intrinsics();
  gt.width0 = gt.width1 = 640;
  gt.height0 = gt.height1 = 480;
  gt.homography = h;
  return gt;
}

AreaMatchCandidate pair_of(const BBox& b0, const BBox& b1) {
  AreaMatchCandidate c;
  c.a0 = Area::make(b0, AreaKind::kSoa, 1);
  c.a1 = Area::make(b1, AreaKind::kSoa, 1);
  return c;
}

TEST(Aor, IdentityAndDisjoint) {
  const GroundTruth gt = homography_gt(Eigen::Matrix3d::Identity());
  EXPECT_DOUBLE_EQ(aor(pair_of({100, 100, 200, 180}, {100, 100, 200, 180}), gt), 1.0);
  EXPECT_DOUBLE_EQ(aor(pair_of({100, 100, 200, 180}, {400, 300, 500, 380}), gt), 0.0);
}

TEST(Aor, HalfOverlapUnderHomography) {
  // Shift by 50 px: the left half of a 100 px wide area lands in the box.
  Eigen::Matrix3d h = Eigen::Matrix3d::Identity();
  h(0, 2) = 50.0;
  const GroundTruth gt = homography_gt(h);
  const auto m = pair_of({100, 100, 200, 200}, {150, 100, 200, 200});
  EXPECT_NEAR(aor(m, gt, 2000, 1), 0.5, 0.02);
  EXPECT_NEAR(aor(m, gt, 10000, 2), aor(m, gt, 100000, 3), 0.01);
}

TEST(Aor, NoValidPoints) {
  Eigen::Matrix3d h = Eigen::Matrix3d::Identity();
  h(0, 2) = 5000.0;
  const GroundTruth gt = homography_gt(h);
  try {
    aor(pair_of({0, 0, 10, 10}, {0, 0, 10, 10}), gt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoValidPoints);
  }
}

TEST(Amp, StrictThreshold) {
  EXPECT_DOUBLE_EQ(amp({1.0, 1.0, 1.0}, 0.7), 1.0);
  EXPECT_DOUBLE_EQ(amp({0.9, 0.5}, 0.7), 0.5);
  EXPECT_DOUBLE_EQ(amp({0.7}, 0.7), 0.0);
  EXPECT_THROW(amp({}, 0.7), Error);
}

TEST(Amp, NonIncreasingInThreshold) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> a(200);
  for (auto& x : a) x = u(rng);
  double last = 1.0;
  for (double t = 0.0; t <= 1.0; t += 0.01) {
    const double v = amp(a, t);
    EXPECT_LE(v, last);
    last = v;
  }
}

TEST(Mma, ConstructedOffsets) {
  const GroundTruth gt = homography_gt(Eigen::Matrix3d::Identity());
  MatchSet s;
  for (int i = 0; i < 100; ++i) {
    const Point2 q{100.0 + i, 200.0};
    s.matches.push_back({q, i % 2 ? Point2{q.x + 2.5, q.y} : q});
  }
  const auto r = mma(s, gt);
  EXPECT_DOUBLE_EQ(r.accuracy.at(1), 0.5);
  EXPECT_DOUBLE_EQ(r.accuracy.at(2), 0.5);
  EXPECT_DOUBLE_EQ(r.accuracy.at(3), 1.0);
  EXPECT_EQ(r.valid, 100u);
}

TEST(Mma, InvalidProjectionsAreCountedSeparately) {
  Eigen::Matrix3d h = Eigen::Matrix3d::Identity();
  h(0, 2) = 300.0;
  const GroundTruth gt = homography_gt(h);
  MatchSet s;
  s.matches.push_back({{10, 10}, {310, 10}});
  s.matches.push_back({{500, 10}, {0, 0}});  // lands outside I1
  const auto r = mma(s, gt);
  EXPECT_EQ(r.valid, 1u);
  EXPECT_EQ(r.invalid, 1u);
  EXPECT_DOUBLE_EQ(r.accuracy.at(1), 1.0);

  MatchSet bad;
  bad.matches.push_back({{500, 10}, {0, 0}});
  try {
    mma(bad, gt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyAfterValidity);
  }
  EXPECT_THROW(mma(MatchSet{}, gt), Error);
}

TEST(Mma, NonDecreasingInThreshold) {
  const GroundTruth gt = homography_gt(Eigen::Matrix3d::Identity());
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 3.0);
  MatchSet s;
  for (int i = 0; i < 500; ++i) {
    const Point2 q{50.0 + i, 100.0};
    s.matches.push_back({q, {q.x + n(rng), q.y + n(rng)}});
  }
  std::vector<double> th;
  for (int i = 0; i <= 40; ++i) th.push_back(0.25 * i);
  const auto r = mma(s, gt, th);
  double last = 0.0;
  for (const auto& [t, v] : r.accuracy) {
    EXPECT_GE(v, last);
    last = v;
  }
}

/// Area under the cumulative accuracy curve by a 0.01 degree Riemann sum.
double riemann_auc(const std::vector<double>& errors, double t) {
  const int steps = static_cast<int>(std::lround(t / 0.01));
  double s = 0.0;
  for (int k = 0; k < steps; ++k) {
    const double x = (k + 0.5) * 0.01;
    const auto n = std::count_if(errors.begin(), errors.end(), [x](double e) { return e <= x; });
    s += static_cast<double>(n) / static_cast<double>(errors.size()) * 0.01;
  }
  return s / t;
}

TEST(PoseAuc, ClosedForms) {
  EXPECT_DOUBLE_EQ(pose_auc({0, 0, 0}).at(5), 1.0);
  EXPECT_DOUBLE_EQ(pose_auc({0, 0, 0}).at(20), 1.0);
  EXPECT_DOUBLE_EQ(pose_auc({kInf, kInf}).at(20), 0.0);
  EXPECT_DOUBLE_EQ(pose_auc({5.0}, {10}).at(10), 0.5);
  EXPECT_THROW(pose_auc({}), Error);
}

TEST(PoseAuc, MatchesRiemannSum) {
  std::mt19937_64 rng(3);
  std::exponential_distribution<double> e(0.15);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> errors(50);
    for (auto& x : errors) x = e(rng);
    errors[0] = kInf;
    const auto auc = pose_auc(errors);
    for (const auto& [t, v] : auc) EXPECT_NEAR(v, riemann_auc(errors, t), 1e-3);
    EXPECT_LE(auc.at(5), auc.at(10));
    EXPECT_LE(auc.at(10), auc.at(20));
  }
}

BenchmarkPair fixture_pair(const std::string& name, std::uint64_t seed) {
  return {name + "-" + std::to_string(seed), [name, seed] {
            RenderedPair p = standard_fixture(name, seed);
            return PairData{name, std::move(p.rgb0), std::move(p.rgb1), std::move(p.sem0), std::move(p.sem1),
                            std::move(p.gt)};
          }};
}

MatcherFactory oracle_factory(double sigma) {
  return [sigma](const PairData& d) { return std::make_unique<OracleMatcher>(d.gt, OracleOptions{sigma, 0.0, 300, 9}); };
}

TEST(RunBenchmark, EmptyListGivesEmptyReport) {
  const auto rep = run_benchmark({}, oracle_factory(0.0), BenchmarkOptions{});
  EXPECT_TRUE(rep.pairs.empty());
  EXPECT_TRUE(rep.mma.empty());
  EXPECT_EQ(rep.failed, 0u);
}

TEST(RunBenchmark, NoiselessSweepRecoversPoses) {
  std::vector<BenchmarkPair> pairs;
  for (std::uint64_t s = 1; s <= 50; ++s) pairs.push_back(fixture_pair("room6", s));
  BenchmarkOptions opt;
  opt.workers = 2;
  const auto rep = run_benchmark(pairs, oracle_factory(0.0), opt);
  EXPECT_EQ(rep.failed, 0u);
  EXPECT_GT(rep.pose_auc.at(5), 0.99);
  EXPECT_DOUBLE_EQ(rep.mma.at(1), 1.0);
  for (const auto& p : rep.pairs) EXPECT_LE(p.sgam.matches, opt.config.max_correspondences);
  ASSERT_FALSE(rep.aor.empty());
  EXPECT_GE(rep.amp.at(0.7), 0.9);
}

TEST(RunBenchmark, FailuresAreRecordedAndOrderDoesNotMatter) {
  std::vector<BenchmarkPair> pairs = {fixture_pair("room6", 1), fixture_pair("sparse", 2), fixture_pair("twins", 3)};
  pairs.push_back({"broken", [] () -> PairData { throw Error(ErrorCode::kIo, "missing file"); }});
  BenchmarkOptions opt;
  opt.compare_bare = true;
  const auto a = run_benchmark(pairs, oracle_factory(1.0), opt);
  EXPECT_EQ(a.failed, 1u);
  EXPECT_FALSE(a.pairs[3].ok);
  EXPECT_EQ(a.pairs[3].sgam.pose_error, kInf);
  EXPECT_FALSE(a.pairs[3].error.empty());
  ASSERT_TRUE(a.bare_mma.has_value());

  // Seeds follow the pair name, so reversing the list only reverses the rows.
  std::vector<BenchmarkPair> rev(pairs.rbegin(), pairs.rend());
  const auto b = run_benchmark(rev, oracle_factory(1.0), opt);
  EXPECT_EQ(b.failed, 1u);
  EXPECT_EQ(a.pairs.front().name, b.pairs.back().name);
  for (const auto& [t, v] : a.mma) EXPECT_NEAR(v, b.mma.at(t), 1e-12);
  for (const auto& [t, v] : a.pose_auc) EXPECT_NEAR(v, b.pose_auc.at(t), 1e-12);
  for (const auto& [t, v] : *a.bare_mma) EXPECT_NEAR(v, b.bare_mma->at(t), 1e-12);
  for (const auto& [t, v] : a.amp) EXPECT_NEAR(v, b.amp.at(t), 1e-12);
}

}  // namespace
}  // namespace a2pm
