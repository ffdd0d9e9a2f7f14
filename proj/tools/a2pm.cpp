#include <CLI11.hpp>

#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <thread>

#include "a2pm/eval.hpp"
#include "a2pm/overlay.hpp"
#include "a2pm/pipeline.hpp"
#include "a2pm/serialize.hpp"
#include "a2pm/subprocess_matcher.hpp"
#include "a2pm/synth.hpp"

namespace fs = std::filesystem;
using namespace a2pm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 2;
constexpr int kExitMatcher = 3;

struct ConfigFlags {
  std::string preset = "default";
  std::optional<double> phi, t_sp, t_h, t_l, t_da;
  std::optional<int> area_size, max_matches;
  std::uint64_t seed = 0;

  SgamConfig build() const {
    SgamConfig c = preset == "scannet" ? SgamConfig::scannet() : SgamConfig::defaults();
    if (phi) c.phi = *phi;
    if (t_sp) c.t_sp = *t_sp;
    if (t_h) c.t_h = *t_h;
    if (t_l) c.t_l = *t_l;
    if (t_da) c.t_da = *t_da;
    if (area_size) c.default_area_size = *area_size;
    if (max_matches) c.pm_max_matches = *max_matches;
    c.ransac.seed = seed;
    c.validate();
    return c;
  }
};

struct MatcherFlags {
  std::string matcher = "oracle";
  double noise = 0.0;
  double outlier_rate = 0.0;
  int timeout_ms = 30000;
};

struct PairFlags {
  std::string pair_dir, image0, image1, sem0, sem1, gt;
};

void add_config_flags(CLI::App* app, ConfigFlags& f) {
  app->add_option("--preset", f.preset, "Parameter preset")->check(CLI::IsMember({"default", "scannet"}));
  app->add_option("--phi", f.phi, "Rejection threshold weight");
  app->add_option("--t-sp", f.t_sp, "Size proportion below which global matches are collected");
  app->add_option("--t-h", f.t_h, "Object area descriptor distance limit");
  app->add_option("--t-l", f.t_l, "Intersection area descriptor distance limit");
  app->add_option("--t-da", f.t_da, "Doubtful area margin");
  app->add_option("--area-size", f.area_size, "Side of the square area crops in pixels");
  app->add_option("--max-matches", f.max_matches, "Point matches requested per area");
  app->add_option("--seed", f.seed, "Seed for sampling and robust estimation");
}

void add_matcher_flags(CLI::App* app, MatcherFlags& f) {
  app->add_option("--matcher", f.matcher, "oracle, classical or subprocess:<command>");
  app->add_option("--noise", f.noise, "Oracle noise in crop pixels")->check(CLI::NonNegativeNumber);
  app->add_option("--outlier-rate", f.outlier_rate, "Oracle outlier rate")->check(CLI::Range(0.0, 1.0));
  app->add_option("--timeout-ms", f.timeout_ms, "Subprocess reply timeout")->check(CLI::PositiveNumber);
}

void add_pair_flags(CLI::App* app, PairFlags& f) {
  app->add_option("--pair", f.pair_dir, "Folder written by the synth command");
  app->add_option("--image0", f.image0, "First RGB image (PNG)");
  app->add_option("--image1", f.image1, "Second RGB image (PNG)");
  app->add_option("--sem0", f.sem0, "First semantic map (PNG or PGM)");
  app->add_option("--sem1", f.sem1, "Second semantic map (PNG or PGM)");
  app->add_option("--gt", f.gt, "Ground-truth JSON");
}

struct LoadedPair {
  RgbImage rgb0, rgb1;
  SemanticMap sem0, sem1;
  std::optional<GroundTruth> gt;
};

fs::path first_existing(const fs::path& dir, std::initializer_list<const char*> names) {
  for (const char* n : names)
    if (fs::exists(dir / n)) return dir / n;
  return dir / *names.begin();
}

LoadedPair load_inputs(const PairFlags& f, bool want_gt) {
  PairFlags p = f;
  if (!p.pair_dir.empty()) {
    const fs::path d = p.pair_dir;
    if (p.image0.empty()) p.image0 = (d / "rgb0.png").string();
    if (p.image1.empty()) p.image1 = (d / "rgb1.png").string();
    if (p.sem0.empty()) p.sem0 = first_existing(d, {"sem0.png", "sem0.pgm"}).string();
    if (p.sem1.empty()) p.sem1 = first_existing(d, {"sem1.png", "sem1.pgm"}).string();
    if (p.gt.empty() && fs::exists(d / "gt.json")) p.gt = (d / "gt.json").string();
  }
  for (const auto* s : {&p.image0, &p.image1, &p.sem0, &p.sem1})
    if (s->empty()) throw Error(ErrorCode::kInvalidArgument, "need --pair or all of --image0/--image1/--sem0/--sem1");
  for (const auto* s : {&p.image0, &p.image1, &p.sem0, &p.sem1})
    if (!fs::exists(*s)) throw Error(ErrorCode::kIo, "missing input " + *s);
  LoadedPair l;
  l.rgb0 = read_rgb_png(p.image0);
  l.rgb1 = read_rgb_png(p.image1);
  l.sem0 = read_semantic_map(p.sem0);
  l.sem1 = read_semantic_map(p.sem1);
  if (want_gt && !p.gt.empty())
    l.gt = ground_truth_from_json(read_json_file(p.gt), fs::path(p.gt).parent_path(), l.rgb0.width, l.rgb0.height,
                                  l.rgb1.width, l.rgb1.height);
  return l;
}

std::unique_ptr<PointMatcher> make_matcher(const MatcherFlags& f, const GroundTruth* gt, std::uint64_t seed) {
  if (f.matcher == "oracle") {
    if (!gt) throw Error(ErrorCode::kInvalidArgument, "the oracle matcher needs ground truth (--gt or gt.json)");
    return std::make_unique<OracleMatcher>(*gt, OracleOptions{f.noise, f.outlier_rate, 300, seed});
  }
  if (f.matcher == "classical") return std::make_unique<ClassicalMatcher>();
  if (f.matcher.rfind("subprocess:", 0) == 0) {
    SubprocessOptions o;
    o.command = f.matcher.substr(11);
    o.timeout = std::chrono::milliseconds(f.timeout_ms);
    if (o.command.empty()) throw Error(ErrorCode::kInvalidArgument, "subprocess matcher needs a command");
    return std::make_unique<SubprocessMatcher>(o);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown matcher " + f.matcher);
}

/// Counts calls and failures so a matcher that never answers can be told
/// apart from a pair without usable areas.
class CountingMatcher : public PointMatcher {
 public:
  explicit CountingMatcher(PointMatcher& inner) : inner_(inner) {}
  std::string name() const override { return inner_.name(); }
  MatcherResponse match(const MatcherRequest& req) override {
    ++calls;
    try {
      return inner_.match(req);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kInsufficientCovisibility) ++failures;
      throw;
    }
  }
  std::size_t calls = 0, failures = 0;

 private:
  PointMatcher& inner_;
};

void write_file_atomic(const fs::path& path, const std::function<void(const fs::path&)>& write) {
  fs::path tmp = path;
  tmp += ".tmp";
  try {
    write(tmp);
    fs::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

std::vector<std::pair<Area, Area>> area_pairs(const AreaMatchSet& s) {
  std::vector<std::pair<Area, Area>> v;
  for (const auto& e : s.entries) v.emplace_back(e.candidate.a0, e.candidate.a1);
  return v;
}

// ---------------------------------------------------------------------------

struct MatchArgs {
  PairFlags pair;
  ConfigFlags config;
  MatcherFlags matcher;
  std::string out, binary, overlay;
  bool dump_consistency = false, timings = false;
};

int cmd_match(const MatchArgs& a) {
  const SgamConfig cfg = a.config.build();
  const LoadedPair in = load_inputs(a.pair, true);
  auto base = make_matcher(a.matcher, in.gt ? &*in.gt : nullptr, a.config.seed);
  CountingMatcher pm(*base);
  const SgamResult r = sgam({in.rgb0, in.rgb1, in.sem0, in.sem1}, pm, cfg);
  if (pm.calls > 0 && pm.failures == pm.calls) {
    std::cerr << "error: the point matcher failed on every request\n";
    for (const auto& l : r.log) std::cerr << "  " << l << "\n";
    return kExitMatcher;
  }

  ResultExtras extra;
  extra.timings = a.timings;
  const MatchSet sampled = uniform_sample(r.merged, in.rgb0.width, in.rgb0.height,
                                          cfg.max_correspondences, a.config.seed);
  extra.sampled = sampled;
  json eval_j;
  if (in.gt) {
    extra.pose = estimate_pose(sampled, in.gt->k0, in.gt->k1, cfg.ransac);
    if (!sampled.empty()) {
      try {
        eval_j["mma"] = threshold_map_json(mma(sampled, *in.gt).accuracy);
      } catch (const Error&) {
      }
    }
    if (in.gt->t.norm() > 0) {
      const double e = pose_error_deg(extra.pose, *in.gt);
      eval_j["pose_error_deg"] = std::isfinite(e) ? json(e) : json(nullptr);
    }
  }
  json j = result_json(r, extra);
  j["matcher"] = pm.name();
  if (!eval_j.is_null()) j["evaluation"] = eval_j;

  const fs::path out = a.out;
  ensure_parent(out);
  atomic_write(out, j.dump(2) + "\n");
  if (a.dump_consistency) {
    fs::path c = out;
    c.replace_extension(".consistency.json");
    atomic_write(c, consistency_json(r.candidates, r.gr, cfg.phi).dump(2) + "\n");
  }
  if (!a.binary.empty()) {
    ensure_parent(a.binary);
    atomic_write(a.binary, matches_binary(r.merged));
  }
  if (!a.overlay.empty()) {
    ensure_parent(a.overlay);
    const RgbImage img = render_overlay(in.rgb0, in.rgb1, area_pairs(r.area_matches), r.merged);
    write_file_atomic(a.overlay, [&](const fs::path& p) { write_rgb_png(p, img); });
  }
  std::cerr << "areas kept " << r.area_matches.entries.size() << " of " << r.candidates.entries.size()
            << ", matches " << r.merged.size() << (r.degraded ? " (full-image fallback)" : "") << "\n";
  return kExitOk;
}

struct AreasArgs {
  PairFlags pair;
  ConfigFlags config;
  std::string out, overlay;
};

int cmd_areas(const AreasArgs& a) {
  const SgamConfig cfg = a.config.build();
  const LoadedPair in = load_inputs(a.pair, false);
  const SamOutput sam = sam_pipeline(in.sem0, in.sem1, cfg);
  json j = {{"accepted", json::array()}, {"doubtful", {{"image0", json::array()}, {"image1", json::array()}}}};
  for (const auto& c : sam.accepted) j["accepted"].push_back(to_json(c));
  for (const auto& x : sam.doubtful_a0) j["doubtful"]["image0"].push_back(to_json(x));
  for (const auto& x : sam.doubtful_a1) j["doubtful"]["image1"].push_back(to_json(x));
  json soa = {{"image0", json::array()}, {"image1", json::array()}};
  for (const auto& x : detect_soa(in.sem0, cfg)) soa["image0"].push_back(to_json(x));
  for (const auto& x : detect_soa(in.sem1, cfg)) soa["image1"].push_back(to_json(x));
  j["objects"] = soa;
  const fs::path out = a.out;
  ensure_parent(out);
  atomic_write(out, j.dump(2) + "\n");
  if (!a.overlay.empty()) {
    std::vector<std::pair<Area, Area>> pairs;
    for (const auto& c : sam.accepted) pairs.emplace_back(c.a0, c.a1);
    const RgbImage img = render_overlay(in.rgb0, in.rgb1, pairs, MatchSet{});
    ensure_parent(a.overlay);
    write_file_atomic(a.overlay, [&](const fs::path& p) { write_rgb_png(p, img); });
  }
  return kExitOk;
}

struct EvalArgs {
  std::string pairs, fixture, out, csv;
  int count = 10;
  std::uint64_t first_seed = 1;
  ConfigFlags config;
  MatcherFlags matcher;
  bool compare_bare = false;
  unsigned workers = 0;
};

int cmd_eval(const EvalArgs& a) {
  const SgamConfig cfg = a.config.build();
  if (a.pairs.empty() == a.fixture.empty())
    throw Error(ErrorCode::kInvalidArgument, "give exactly one of --pairs or --fixture");
  std::vector<BenchmarkPair> pairs;
  if (!a.pairs.empty()) {
    for (auto& pp : read_pair_list(a.pairs)) pairs.push_back({pp.name, [pp] { return load_pair(pp); }});
  } else {
    fixture_scene(a.fixture, a.first_seed);  // validates the name
    for (int i = 0; i < a.count; ++i) {
      const std::uint64_t s = a.first_seed + static_cast<std::uint64_t>(i);
      const std::string name = a.fixture;
      pairs.push_back({name + "-" + std::to_string(s), [name, s] {
                         RenderedPair p = standard_fixture(name, s);
                         return PairData{name + "-" + std::to_string(s), std::move(p.rgb0), std::move(p.rgb1),
                                         std::move(p.sem0), std::move(p.sem1), std::move(p.gt)};
                       }});
    }
  }
  const std::string& kind = a.matcher.matcher;
  if (kind != "oracle" && kind != "classical" && kind.rfind("subprocess:", 0) != 0)
    throw Error(ErrorCode::kInvalidArgument, "unknown matcher " + kind);
  const MatcherFlags mf = a.matcher;
  const std::uint64_t seed = a.config.seed;
  MatcherFactory factory = [mf, seed](const PairData& d) { return make_matcher(mf, &d.gt, seed); };
  BenchmarkOptions opt;
  opt.config = cfg;
  opt.compare_bare = a.compare_bare;
  opt.workers = a.workers ? a.workers : std::max(1u, std::thread::hardware_concurrency());
  opt.seed = seed;
  const MetricReport rep = run_benchmark(pairs, factory, opt);
  for (const auto& p : rep.pairs)
    std::cerr << p.name << ": " << (p.ok ? "ok" : "failed: " + p.error) << "\n";

  const fs::path out = a.out;
  ensure_parent(out);
  atomic_write(out, report_json(rep).dump(2) + "\n");
  fs::path csv = a.csv.empty() ? fs::path(out).replace_extension(".csv") : fs::path(a.csv);
  ensure_parent(csv);
  atomic_write(csv, report_csv(rep, opt.mma_thresholds, opt.auc_thresholds));
  return kExitOk;
}

struct SynthArgs {
  std::string fixture, out;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a) {
  const RenderedPair p = standard_fixture(a.fixture, a.seed);
  const fs::path dir = a.out;
  fs::create_directories(dir);
  write_file_atomic(dir / "rgb0.png", [&](const fs::path& f) { write_rgb_png(f, p.rgb0); });
  write_file_atomic(dir / "rgb1.png", [&](const fs::path& f) { write_rgb_png(f, p.rgb1); });
  write_file_atomic(dir / "sem0.png", [&](const fs::path& f) { write_label_png(f, p.sem0); });
  write_file_atomic(dir / "sem1.png", [&](const fs::path& f) { write_label_png(f, p.sem1); });
  write_file_atomic(dir / "depth0.pfm", [&](const fs::path& f) { write_pfm(f, p.depth0); });
  write_file_atomic(dir / "depth1.pfm", [&](const fs::path& f) { write_pfm(f, p.depth1); });
  atomic_write(dir / "gt.json", ground_truth_json(p.gt, "depth0.pfm", "depth1.pfm").dump(2) + "\n");
  return kExitOk;
}

struct OverlayArgs {
  PairFlags pair;
  std::string result, out;
};

int cmd_overlay(const OverlayArgs& a) {
  const LoadedPair in = load_inputs(a.pair, false);
  const json r = read_json_file(a.result);
  std::vector<std::pair<Area, Area>> areas;
  MatchSet merged;
  try {
    auto area = [](const json& j) {
      const auto& b = j.at("bbox");
      const AreaKind kind = j.at("kind") == "SIA" ? AreaKind::kSia : AreaKind::kSoa;
      return Area::make({b.at(0), b.at(1), b.at(2), b.at(3)}, kind, j.value("label", 0));
    };
    for (const auto& m : r.at("area_matches"))
      areas.emplace_back(area(m.at("match").at("area0")), area(m.at("match").at("area1")));
    merged = matches_from_json(r.at("merged"));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, a.result + ": " + e.what());
  }
  const RgbImage img = render_overlay(in.rgb0, in.rgb1, areas, merged);
  ensure_parent(a.out);
  write_file_atomic(a.out, [&](const fs::path& p) { write_rgb_png(p, img); });
  return kExitOk;
}

int exit_code_for(const Error& e) {
  if (e.is_matcher_error()) return kExitMatcher;
  return kExitInvalid;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic and geometry area matching for two-view point correspondences"};
  app.require_subcommand(1);

  MatchArgs match;
  auto* m = app.add_subcommand("match", "Match one image pair");
  add_pair_flags(m, match.pair);
  add_config_flags(m, match.config);
  add_matcher_flags(m, match.matcher);
  m->add_option("--out", match.out, "Result JSON")->required();
  m->add_option("--binary", match.binary, "Also write merged matches in the A2PM1 binary format");
  m->add_option("--overlay", match.overlay, "Also write an overlay PNG");
  m->add_flag("--dump-consistency", match.dump_consistency, "Write the consistency report next to the result");
  m->add_flag("--timings", match.timings, "Include per-stage timings in the result");

  AreasArgs areas;
  auto* ar = app.add_subcommand("areas", "Detect and match semantic areas only");
  add_pair_flags(ar, areas.pair);
  add_config_flags(ar, areas.config);
  ar->add_option("--out", areas.out, "Areas JSON")->required();
  ar->add_option("--overlay", areas.overlay, "Also write an overlay PNG");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Benchmark over a pair list or a synthetic fixture family");
  e->add_option("--pairs", ev.pairs, "JSON-lines pair list");
  e->add_option("--fixture", ev.fixture, "Synthetic fixture name");
  e->add_option("--count", ev.count, "Number of fixture seeds")->check(CLI::NonNegativeNumber);
  e->add_option("--first-seed", ev.first_seed, "First fixture seed");
  add_config_flags(e, ev.config);
  add_matcher_flags(e, ev.matcher);
  e->add_option("--out", ev.out, "Report JSON")->required();
  e->add_option("--csv", ev.csv, "Report CSV (default: next to the JSON)");
  e->add_flag("--compare-bare", ev.compare_bare, "Also run the point matcher on the full images");
  e->add_option("--workers", ev.workers, "Parallel pairs (default: logical cores)");

  SynthArgs sy;
  auto* s = app.add_subcommand("synth", "Render a synthetic fixture pair");
  s->add_option("--fixture", sy.fixture, "room6, twins, sparse or planar")->required();
  s->add_option("--seed", sy.seed, "Fixture seed");
  s->add_option("--out", sy.out, "Output folder")->required();

  OverlayArgs ov;
  auto* o = app.add_subcommand("overlay", "Draw a match result over the image pair");
  add_pair_flags(o, ov.pair);
  o->add_option("--result", ov.result, "Result JSON from match")->required();
  o->add_option("--out", ov.out, "Overlay PNG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kExitInvalid;
  }

  try {
    if (m->parsed()) return cmd_match(match);
    if (ar->parsed()) return cmd_areas(areas);
    if (e->parsed()) return cmd_eval(ev);
    if (s->parsed()) return cmd_synth(sy);
    if (o->parsed()) return cmd_overlay(ov);
  } catch (const Error& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return exit_code_for(ex);
  } catch (const std::filesystem::filesystem_error& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitInvalid;
  }
  return kExitInvalid;
}
