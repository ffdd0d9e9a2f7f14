#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "a2pm/serialize.hpp"
#include "a2pm/synth.hpp"

namespace a2pm {
namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("a2pm-serialize-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

TEST(MatchesBinary, LayoutIsLittleEndianFloat32) {
  MatchSet s;
  s.matches.push_back({{1.0, 2.0}, {3.5, -4.25}});
  const std::string b = matches_binary(s);
  ASSERT_EQ(b.size(), 9u + 16u);
  EXPECT_EQ(b.substr(0, 5), "A2PM1");
  EXPECT_EQ(b.substr(5, 4), std::string("\x01\x00\x00\x00", 4));
  // 1.0f = 0x3f800000, stored low byte first.
  EXPECT_EQ(b.substr(9, 4), std::string("\x00\x00\x80\x3f", 4));
  EXPECT_EQ(b.substr(21, 4), std::string("\x00\x00\x88\xc0", 4));
}

TEST(MatchesBinary, RoundTripsAtFloatPrecision) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-10.0, 700.0);
  MatchSet s;
  for (int i = 0; i < 257; ++i) s.matches.push_back({{u(rng), u(rng)}, {u(rng), u(rng)}});
  const MatchSet back = matches_from_binary(matches_binary(s));
  ASSERT_EQ(back.size(), s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(back.matches[i].q.x, static_cast<double>(static_cast<float>(s.matches[i].q.x)));
    EXPECT_EQ(back.matches[i].p.y, static_cast<double>(static_cast<float>(s.matches[i].p.y)));
  }
  std::string cut = matches_binary(s);
  cut.pop_back();
  EXPECT_THROW(matches_from_binary(cut), Error);
  EXPECT_THROW(matches_from_binary("A2PM2\0\0\0\0"), Error);
}

TEST(MatchesJson, RoundTripIsExact) {
  MatchSet s;
  s.matches.push_back({{0.1, 1.0 / 3.0}, {1e-17, 639.4999999}});
  EXPECT_EQ(matches_from_json(json::parse(matches_json(s).dump())).matches, s.matches);
}

TEST(GroundTruthJson, DepthRoundTripProjectsLikeTheScene) {
  const auto dir = scratch("gt");
  const RenderedPair p = standard_fixture("room6", 3);
  write_pfm(dir / "depth0.pfm", p.depth0);
  write_pfm(dir / "depth1.pfm", p.depth1);
  const json j = ground_truth_json(p.gt, "depth0.pfm", "depth1.pfm");
  atomic_write(dir / "gt.json", j.dump(2));
  const GroundTruth back = ground_truth_from_json(read_json_file(dir / "gt.json"), dir, 0, 0, 0, 0);
  EXPECT_EQ(back.width0, 640);
  EXPECT_TRUE(back.r.isApprox(p.gt.r, 1e-15));
  EXPECT_EQ(back.k1.fx, p.gt.k1.fx);
  std::size_t agree = 0, both = 0;
  for (int y = 5; y < 480; y += 17)
    for (int x = 5; x < 640; x += 17) {
      const auto a = p.gt.project({double(x), double(y)});
      const auto b = back.project({double(x), double(y)});
      if (a && b) {
        ++both;
        agree += distance(*a, *b) < 1e-3;
      }
    }
  ASSERT_GT(both, 500u);
  EXPECT_GE(static_cast<double>(agree) / both, 0.99);
  EXPECT_FALSE(std::filesystem::exists(dir / "gt.json.tmp"));
}

TEST(GroundTruthJson, HomographyOnly) {
  Eigen::Matrix3d h = Eigen::Matrix3d::Identity();
  h(0, 2) = 12.5;
  const json j = {{"homography", matrix_json(h)}};
  const GroundTruth gt = ground_truth_from_json(j, ".", 640, 480, 640, 480);
  const auto p = gt.project({10, 20});
  ASSERT_TRUE(p.has_value());
  EXPECT_DOUBLE_EQ(p->x, 22.5);
  EXPECT_THROW(ground_truth_from_json(json::object(), ".", 640, 480, 640, 480), Error);
}

TEST(PairList, RelativePathsResolveAgainstTheList) {
  const auto dir = scratch("list");
  atomic_write(dir / "pairs.jsonl",
               "{\"name\": \"a\", \"image0\": \"x/0.png\", \"image1\": \"/abs/1.png\", \"sem0\": \"s0.png\", "
               "\"sem1\": \"s1.pgm\", \"gt\": \"x/gt.json\"}\n\n"
               "{\"image0\": \"0.png\", \"image1\": \"1.png\", \"sem0\": \"s0.png\", \"sem1\": \"s1.png\", "
               "\"gt\": {\"homography\": [[1,0,0],[0,1,0],[0,0,1]]}}\n");
  const auto pairs = read_pair_list(dir / "pairs.jsonl");
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_EQ(pairs[0].name, "a");
  EXPECT_EQ(pairs[0].image0, dir / "x/0.png");
  EXPECT_EQ(pairs[0].image1, std::filesystem::path("/abs/1.png"));
  EXPECT_EQ(pairs[0].gt.get<std::string>(), (dir / "x/gt.json").string());
  EXPECT_EQ(pairs[1].name, "pair1");
  EXPECT_TRUE(pairs[1].gt.is_object());

  atomic_write(dir / "bad.jsonl", "{\"image0\": 1}\n");
  EXPECT_THROW(read_pair_list(dir / "bad.jsonl"), Error);
}

TEST(ReportCsv, ColumnsAndDeltas) {
  MetricReport r;
  PairReport p;
  p.name = "one";
  p.ok = true;
  p.sgam.mma = {{1, 0.5}, {2, 0.75}, {3, 1.0}};
  p.sgam.pose_error = 1.0;
  p.bare = MethodMetrics{{{1, 0.25}, {2, 0.5}, {3, 1.0}}, kInf, 10};
  r.pairs.push_back(p);
  r.mma = p.sgam.mma;
  r.bare_mma = p.bare->mma;
  r.pose_auc = {{5, 0.8}, {10, 0.9}, {20, 0.95}};
  r.bare_pose_auc = {{5, 0.0}, {10, 0.0}, {20, 0.0}};
  const std::string csv = report_csv(r);
  std::istringstream in(csv);
  std::string header, row, mean;
  std::getline(in, header);
  std::getline(in, row);
  std::getline(in, mean);
  auto cols = [](const std::string& s) { return std::count(s.begin(), s.end(), ',') + 1; };
  EXPECT_EQ(cols(header), cols(row));
  EXPECT_EQ(cols(header), cols(mean));
  EXPECT_NE(header.find("MMA@1"), std::string::npos);
  EXPECT_NE(header.find("AUC@20"), std::string::npos);
  EXPECT_NE(header.find("delta_MMA@1"), std::string::npos);
  EXPECT_NE(row.find(",inf,"), std::string::npos);
  EXPECT_EQ(mean.substr(0, 5), "mean,");
  EXPECT_NE(mean.find("0.25"), std::string::npos);  // MMA@1 delta
}

TEST(ConsistencyJson, ReportsVerdictsPerArea) {
  const RenderedPair p = standard_fixture("room6", 2);
  OracleMatcher pm(p.gt, {0.5, 0.0, 300, 2});
  const SgamResult r = sgam({p.rgb0, p.rgb1, p.sem0, p.sem1}, pm, SgamConfig{});
  const json j = consistency_json(r.candidates, r.gr, 1.0);
  ASSERT_EQ(j["areas"].size(), r.candidates.entries.size());
  const std::size_t n = j["included"].size();
  EXPECT_EQ(j["cross"].size(), n);
  EXPECT_EQ(j["g"].size(), n);
  std::size_t kept = 0;
  for (const auto& a : j["areas"]) kept += !a["rejected"].get<bool>();
  EXPECT_EQ(kept, r.area_matches.entries.size());
  const json res = result_json(r);
  EXPECT_FALSE(res.contains("timings"));
  EXPECT_EQ(res["merged"].size(), r.merged.size());
  EXPECT_TRUE(result_json(r, {std::nullopt, std::nullopt, true}).contains("timings"));
}

}  // namespace
}  // namespace a2pm
