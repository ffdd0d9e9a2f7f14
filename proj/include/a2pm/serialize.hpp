#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "a2pm/error.hpp"
#include "a2pm/eval.hpp"
#include "a2pm/gam.hpp"
#include "a2pm/ground_truth.hpp"
#include "a2pm/image.hpp"
#include "a2pm/pipeline.hpp"
#include "a2pm/sam.hpp"

namespace a2pm {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Files

/// Writes `bytes` next to `path` and renames it into place, so readers never
/// see a partial file.
inline void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot open " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::kIo, "write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorCode::kIo, "cannot rename into " + path.string());
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json read_json_file(const std::filesystem::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Building blocks

inline json to_json(const BBox& b) { return json::array({b.min_x, b.min_y, b.max_x, b.max_y}); }

inline json to_json(const Area& a) {
  json j = {{"kind", to_string(a.kind)}, {"bbox", to_json(a.bbox)}};
  if (a.kind == AreaKind::kSoa) j["label"] = a.anchor_label;
  return j;
}

inline json to_json(const AreaMatchCandidate& c) {
  return {{"area0", to_json(c.a0)},
          {"area1", to_json(c.a1)},
          {"kind", to_string(c.kind)},
          {"distance", c.distance},
          {"status", to_string(c.status)},
          {"source", c.provenance == Provenance::kPredicted ? "predicted" : "semantic"}};
}

inline json matches_json(const MatchSet& s) {
  json a = json::array();
  for (const auto& c : s.matches) a.push_back({c.q.x, c.q.y, c.p.x, c.p.y});
  return a;
}

inline MatchSet matches_from_json(const json& j) {
  if (!j.is_array()) throw Error(ErrorCode::kParse, "matches must be an array");
  MatchSet s;
  for (const auto& m : j) {
    if (!m.is_array() || m.size() != 4) throw Error(ErrorCode::kParse, "match must be [x0, y0, x1, y1]");
    s.matches.push_back({{m[0].get<double>(), m[1].get<double>()}, {m[2].get<double>(), m[3].get<double>()}});
  }
  return s;
}

inline json matrix_json(const Eigen::Matrix3d& m) {
  json rows = json::array();
  for (int r = 0; r < 3; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2)});
  return rows;
}

inline Eigen::Matrix3d matrix_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::kParse, "expected a 3x3 matrix");
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r) {
    if (!j[r].is_array() || j[r].size() != 3) throw Error(ErrorCode::kParse, "expected a 3x3 matrix");
    for (int c = 0; c < 3; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

inline json to_json(const PoseEstimate& p) {
  return {{"R", matrix_json(p.rotation)},
          {"t", {p.translation_dir.x(), p.translation_dir.y(), p.translation_dir.z()}},
          {"inliers", p.inlier_count}};
}

/// Cross matrix, per-area G, threshold and verdicts, indexed like `set`.
inline json consistency_json(const AreaMatchSet& set, const GrResult& gr, double phi) {
  json areas = json::array();
  for (std::size_t i = 0; i < set.entries.size(); ++i) {
    const auto& e = set.entries[i];
    json a = {{"match", to_json(e.candidate)}, {"matches", e.matches.size()}, {"certifiable", e.certifiable()}};
    a["rejected"] = i < gr.rejected.size() ? static_cast<bool>(gr.rejected[i]) : true;
    areas.push_back(a);
  }
  const auto& r = gr.report;
  json cross = json::array();
  for (Eigen::Index i = 0; i < r.cross.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < r.cross.cols(); ++j) row.push_back(r.cross(i, j));
    cross.push_back(row);
  }
  return {{"areas", areas},
          {"included", r.included},
          {"excluded", r.excluded},
          {"cross", cross},
          {"self", r.self},
          {"g", r.g},
          {"set_g", r.set_g},
          {"phi", phi},
          {"threshold", gr.threshold},
          {"all_rejected", gr.all_rejected}};
}

inline json timings_json(const StageTimings& t) {
  return {{"sam_ms", t.sam_ms}, {"match_ms", t.match_ms}, {"gp_ms", t.gp_ms},       {"gr_ms", t.gr_ms},
          {"gmc_ms", t.gmc_ms}, {"assemble_ms", t.assemble_ms}, {"total_ms", t.total_ms}};
}

struct ResultExtras {
  std::optional<PoseEstimate> pose;
  std::optional<MatchSet> sampled;
  bool timings = false;
};

inline json result_json(const SgamResult& r, const ResultExtras& extra = {}) {
  json areas = json::array();
  for (const auto& e : r.area_matches.entries)
    areas.push_back({{"match", to_json(e.candidate)}, {"matches", matches_json(e.matches)}});
  json doubtful = {{"image0", json::array()}, {"image1", json::array()}};
  for (const auto& a : r.sam.doubtful_a0) doubtful["image0"].push_back(to_json(a));
  for (const auto& a : r.sam.doubtful_a1) doubtful["image1"].push_back(to_json(a));
  json candidates = json::array();
  for (std::size_t i = 0; i < r.candidates.entries.size(); ++i) {
    const auto& e = r.candidates.entries[i];
    candidates.push_back({{"match", to_json(e.candidate)},
                          {"matches", e.matches.size()},
                          {"rejected", i < r.gr.rejected.size() ? static_cast<bool>(r.gr.rejected[i]) : true}});
  }
  json j = {{"degraded", r.degraded},
            {"area_matches", areas},
            {"candidates", candidates},
            {"doubtful", doubtful},
            {"gmc",
             {{"ran", r.gmc.ran},
              {"size_proportion", r.gmc.size_proportion},
              {"threshold", r.gmc.threshold},
              {"considered", r.gmc.considered},
              {"collected", r.gmc.collected.size()}}},
            {"global_matches", matches_json(r.global_matches)},
            {"merged", matches_json(r.merged)},
            {"log", r.log}};
  if (extra.sampled) j["sampled"] = matches_json(*extra.sampled);
  if (extra.pose) j["pose"] = to_json(*extra.pose);
  if (extra.timings) j["timings"] = timings_json(r.timings);
  return j;
}

// ---------------------------------------------------------------------------
// Binary matches: "A2PM1", u32 count, count x 4 float32, all little-endian.

inline std::string matches_binary(const MatchSet& s) {
  if (s.size() > 0xffffffffULL) throw Error(ErrorCode::kInvalidArgument, "too many matches for the binary format");
  std::string out = "A2PM1";
  auto put = [&out](std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
  };
  put(static_cast<std::uint32_t>(s.size()));
  for (const auto& c : s.matches)
    for (double v : {c.q.x, c.q.y, c.p.x, c.p.y}) put(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

inline MatchSet matches_from_binary(const std::string& bytes) {
  if (bytes.size() < 9 || bytes.compare(0, 5, "A2PM1") != 0) throw Error(ErrorCode::kParse, "not an A2PM1 file");
  auto get = [&bytes](std::size_t at) {
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[at + k])) << (8 * k);
    return v;
  };
  const std::uint32_t n = get(5);
  if (bytes.size() != 9 + 16ULL * n) throw Error(ErrorCode::kParse, "A2PM1 size does not match its count");
  MatchSet s;
  for (std::uint32_t i = 0; i < n; ++i) {
    float v[4];
    for (int k = 0; k < 4; ++k) v[k] = std::bit_cast<float>(get(9 + 16ULL * i + 4 * k));
    s.matches.push_back({{v[0], v[1]}, {v[2], v[3]}});
  }
  return s;
}

// ---------------------------------------------------------------------------
// Ground truth

inline json intrinsics_json(const CameraIntrinsics& k) { return matrix_json(k.matrix()); }

inline CameraIntrinsics intrinsics_from_json(const json& j) {
  const Eigen::Matrix3d m = matrix_from_json(j);
  return {m(0, 0), m(1, 1), m(0, 2), m(1, 2), m(0, 1)};
}

/// Pose and intrinsics, depth map file names, and the homography if any.
inline json ground_truth_json(const GroundTruth& gt, const std::string& depth0, const std::string& depth1) {
  json j = {{"K0", intrinsics_json(gt.k0)},
            {"K1", intrinsics_json(gt.k1)},
            {"pose", {{"R", matrix_json(gt.r)}, {"t", {gt.t.x(), gt.t.y(), gt.t.z()}}}},
            {"size0", {gt.width0, gt.height0}},
            {"size1", {gt.width1, gt.height1}}};
  if (!depth0.empty()) j["depth0"] = depth0;
  if (!depth1.empty()) j["depth1"] = depth1;
  if (gt.homography) j["homography"] = matrix_json(*gt.homography);
  return j;
}

/// Relative depth paths resolve against `base`. Image sizes default to the
/// given ones when the document has none.
inline GroundTruth ground_truth_from_json(const json& j, const std::filesystem::path& base, int w0, int h0, int w1,
                                          int h1) {
  try {
    GroundTruth gt;
    gt.width0 = w0, gt.height0 = h0, gt.width1 = w1, gt.height1 = h1;
    if (j.contains("size0")) gt.width0 = j["size0"][0], gt.height0 = j["size0"][1];
    if (j.contains("size1")) gt.width1 = j["size1"][0], gt.height1 = j["size1"][1];
    if (j.contains("K0")) gt.k0 = intrinsics_from_json(j["K0"]);
    if (j.contains("K1")) gt.k1 = intrinsics_from_json(j["K1"]);
    if (j.contains("pose")) {
      gt.r = matrix_from_json(j["pose"]["R"]);
      const auto& t = j["pose"]["t"];
      gt.t = {t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>()};
    }
    if (j.contains("homography")) gt.homography = matrix_from_json(j["homography"]);
    auto resolve = [&base](const std::string& p) {
      const std::filesystem::path path(p);
      return path.is_absolute() ? path : base / path;
    };
    if (j.contains("depth0")) gt.depth0 = std::make_shared<const DepthMap>(read_pfm(resolve(j["depth0"])));
    if (j.contains("depth1")) gt.depth1 = std::make_shared<const DepthMap>(read_pfm(resolve(j["depth1"])));
    if (!gt.homography && !gt.depth0) throw Error(ErrorCode::kParse, "ground truth needs depth0 or a homography");
    return gt;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("ground truth: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Pair lists: JSON lines {image0, image1, sem0, sem1, gt}, where gt is a file
// name or an inline object. Relative paths resolve against the list's folder.

struct PairPaths {
  std::string name;
  std::filesystem::path image0, image1, sem0, sem1;
  json gt;  // object, or a string naming a JSON file
};

inline PairData load_pair(const PairPaths& pp) {
  PairData d;
  d.name = pp.name;
  d.rgb0 = read_rgb_png(pp.image0);
  d.rgb1 = read_rgb_png(pp.image1);
  d.sem0 = read_semantic_map(pp.sem0);
  d.sem1 = read_semantic_map(pp.sem1);
  json gt = pp.gt;
  std::filesystem::path base = pp.image0.parent_path();
  if (gt.is_string()) {
    const std::filesystem::path p = gt.get<std::string>();
    gt = read_json_file(p);
    base = p.parent_path();
  }
  d.gt = ground_truth_from_json(gt, base, d.rgb0.width, d.rgb0.height, d.rgb1.width, d.rgb1.height);
  return d;
}

inline std::vector<PairPaths> read_pair_list(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  const std::filesystem::path base = path.parent_path();
  auto resolve = [&base](const std::string& p) {
    const std::filesystem::path q(p);
    return q.is_absolute() ? q : base / q;
  };
  std::vector<PairPaths> out;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      PairPaths p;
      p.name = j.value("name", "pair" + std::to_string(out.size()));
      p.image0 = resolve(j.at("image0"));
      p.image1 = resolve(j.at("image1"));
      p.sem0 = resolve(j.at("sem0"));
      p.sem1 = resolve(j.at("sem1"));
      p.gt = j.at("gt");
      if (p.gt.is_string()) p.gt = resolve(p.gt.get<std::string>()).string();
      out.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kParse, path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

inline json metrics_json(const MethodMetrics& m) {
  json j = {{"matches", m.matches}, {"mma", json::object()}};
  for (const auto& [t, v] : m.mma) j["mma"][std::to_string(static_cast<int>(t))] = v;
  j["pose_error_deg"] = std::isfinite(m.pose_error) ? json(m.pose_error) : json(nullptr);
  return j;
}

inline json threshold_map_json(const std::map<double, double>& m) {
  json j = json::object();
  for (const auto& [t, v] : m) {
    std::ostringstream k;
    k << t;
    j[k.str()] = v;
  }
  return j;
}

inline json report_json(const MetricReport& r) {
  json pairs = json::array();
  for (const auto& p : r.pairs) {
    json j = {{"name", p.name}, {"ok", p.ok}, {"sgam", metrics_json(p.sgam)}, {"area_matches", p.area_matches},
              {"degraded", p.degraded}, {"aor", p.aors}};
    if (!p.ok) j["error"] = p.error;
    if (p.bare) j["bare"] = metrics_json(*p.bare);
    pairs.push_back(j);
  }
  json j = {{"pairs", pairs},
            {"failed", r.failed},
            {"mma", threshold_map_json(r.mma)},
            {"pose_auc", threshold_map_json(r.pose_auc)},
            {"amp", threshold_map_json(r.amp)}};
  if (r.bare_mma) j["bare_mma"] = threshold_map_json(*r.bare_mma);
  if (r.bare_pose_auc) j["bare_pose_auc"] = threshold_map_json(*r.bare_pose_auc);
  return j;
}

/// One row per pair plus a closing "mean" row (none for an empty report); columns MMA@1/2/3 and
/// AUC@5/10/20, with bare and delta columns when the bare run is present.
inline std::string report_csv(const MetricReport& r, const std::vector<double>& mma_t = {1, 2, 3},
                              const std::vector<double>& auc_t = {5, 10, 20}) {
  const bool bare = r.bare_mma.has_value();
  std::ostringstream out;
  out << std::setprecision(6);
  auto num = [](double t) {
    std::ostringstream s;
    s << t;
    return s.str();
  };
  out << "pair,ok,matches";
  for (double t : mma_t) out << ",MMA@" << num(t);
  out << ",pose_err_deg";
  if (bare) {
    for (double t : mma_t) out << ",bare_MMA@" << num(t);
    out << ",bare_pose_err_deg";
    for (double t : mma_t) out << ",delta_MMA@" << num(t);
  }
  for (double t : auc_t) out << ",AUC@" << num(t);
  if (bare) {
    for (double t : auc_t) out << ",bare_AUC@" << num(t);
    for (double t : auc_t) out << ",delta_AUC@" << num(t);
  }
  out << "\n";
  auto at = [](const std::map<double, double>& m, double t) { return m.count(t) ? m.at(t) : 0.0; };
  auto err = [](double e) { return std::isfinite(e) ? std::to_string(e) : std::string("inf"); };
  for (const auto& p : r.pairs) {
    out << p.name << "," << (p.ok ? 1 : 0) << "," << p.sgam.matches;
    for (double t : mma_t) out << "," << at(p.sgam.mma, t);
    out << "," << err(p.sgam.pose_error);
    if (bare) {
      const MethodMetrics b = p.bare.value_or(MethodMetrics{});
      for (double t : mma_t) out << "," << at(b.mma, t);
      out << "," << err(b.pose_error);
      for (double t : mma_t) out << "," << at(p.sgam.mma, t) - at(b.mma, t);
    }
    for (std::size_t k = 0; k < auc_t.size() * (bare ? 3 : 1); ++k) out << ",";
    out << "\n";
  }
  if (r.pairs.empty()) return out.str();
  out << "mean," << (r.pairs.size() - r.failed) << ",";
  for (double t : mma_t) out << "," << at(r.mma, t);
  out << ",";
  if (bare) {
    for (double t : mma_t) out << "," << at(*r.bare_mma, t);
    out << ",";
    for (double t : mma_t) out << "," << at(r.mma, t) - at(*r.bare_mma, t);
  }
  for (double t : auc_t) out << "," << at(r.pose_auc, t);
  if (bare) {
    for (double t : auc_t) out << "," << at(*r.bare_pose_auc, t);
    for (double t : auc_t) out << "," << at(r.pose_auc, t) - at(*r.bare_pose_auc, t);
  }
  out << "\n";
  return out.str();
}

}  // namespace a2pm
