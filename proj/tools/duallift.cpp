// duallift command-line entry point.
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "duallift/config.hpp"
#include "duallift/eval.hpp"
#include "duallift/lifter.hpp"
#include "duallift/logging.hpp"
#include "duallift/mocap_index.hpp"
#include "duallift/pose_io.hpp"
#include "duallift/psm.hpp"
#include "duallift/skeleton.hpp"

namespace fs = std::filesystem;
using namespace duallift;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitEstimation = 3;

Skeleton skeleton_from(const std::string& path) {
  if (path.empty()) return default_skeleton();
  Skeleton s = load_skeleton(path);
  const ValidationReport rep = validate_skeleton(s);
  if (!rep.ok()) throw InputError(path + ": " + rep.violations.front());
  return s;
}

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

template <class Save>
std::string to_bytes(Save&& save) {
  std::ostringstream out(std::ios::binary);
  save(out);
  return out.str();
}

struct Common {
  std::string skeleton;
  int verbose = 0;
  bool quiet = false;
};

void apply_logging(const Common& c) {
  if (c.quiet) {
    set_log_level(LogLevel::kQuiet);
  } else if (c.verbose >= 2) {
    set_log_level(LogLevel::kDebug);
  } else if (c.verbose == 1) {
    set_log_level(LogLevel::kInfo);
  }
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--skeleton", c.skeleton, "Skeleton definition (default: built-in 14 joints)")
      ->check(CLI::ExistingFile);
  app->add_flag("-v,--verbose", c.verbose, "More logging (repeatable)");
  app->add_flag("-q,--quiet", c.quiet, "Errors only");
}

// build-db
struct BuildDbArgs {
  Common common;
  std::string poses;
  std::string out;
  double dedup_mm = kDefaultDedupMm;
};

int cmd_build_db(const BuildDbArgs& a) {
  const Skeleton skeleton = skeleton_from(a.common.skeleton);
  const auto records = read_pose_file(a.poses, skeleton.num_joints());
  if (records.empty()) throw InputError(a.poses + ": no poses");
  std::vector<Pose3D> poses;
  poses.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    Pose3D p = records[i].pose;
    if (p.skeleton_id.empty()) p.skeleton_id = skeleton.id;
    try {
      check_pose(p, skeleton);
    } catch (const InputError& e) {
      throw InputError(a.poses + ": pose '" + records[i].id + "': " + e.what());
    }
    poses.push_back(std::move(p));
  }
  const std::vector<Pose3D> kept = deduplicate(poses, a.dedup_mm, skeleton);
  const MoCapIndex index = MoCapIndex::build(kept, virtual_cameras(), skeleton);
  write_file_atomic(a.out, to_bytes([&](std::ostream& o) { index.save(o); }));
  std::cout << "poses read: " << poses.size() << "\nposes kept: " << kept.size()
            << "\nvirtual cameras: " << index.num_cameras() << "\n";
  for (JointSet s : kJointSets) std::cout << "entries[" << to_string(s) << "]: " << index.num_entries(s) << "\n";
  return 0;
}

// estimate
struct EstimateArgs {
  Common common;
  std::string index;
  std::string unaries;
  std::string pose2d;
  std::string intrinsics;
  std::string params;
  std::string out;
  std::optional<int> iterations;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  double sigma_px = 2.0;
};

UnaryMap unaries_from_pose2d(const std::string& path, const Intrinsics& k, int num_joints, double sigma) {
  const nlohmann::json j = load_json_file(path);
  const nlohmann::json& joints = j.is_object() && j.contains("joints_px") ? j.at("joints_px") : j;
  Pose2D p;
  try {
    p = pose2d_from_json(joints, num_joints);
  } catch (const InputError& e) {
    throw InputError(path + ": " + e.what());
  }
  UnarySynthesis spec;
  spec.sigma_px = sigma;
  spec.width = static_cast<int>(std::ceil(2.0 * k.cx / spec.stride)) + 1;
  spec.height = static_cast<int>(std::ceil(2.0 * k.cy / spec.stride)) + 1;
  return synthesize_unaries(p, spec);
}

int cmd_estimate(const EstimateArgs& a) {
  const Skeleton skeleton = skeleton_from(a.common.skeleton);
  const Intrinsics k = load_intrinsics(a.intrinsics);
  EnergyParams params = a.params.empty() ? EnergyParams{} : load_params(a.params);
  if (a.iterations) params.iterations = *a.iterations;
  if (a.seed) params.seed = *a.seed;
  if (a.mode) apply_param(params, "mode", *a.mode);
  check_params(params);
  const MoCapIndex index = MoCapIndex::load(a.index, skeleton);
  const UnaryMap unaries = a.unaries.empty() ? unaries_from_pose2d(a.pose2d, k, skeleton.num_joints(), a.sigma_px)
                                             : load_unary_map(a.unaries);
  const LiftResult r = estimate_3d(unaries, index, skeleton, k, params);
  write_file_atomic(a.out, dump(lift_result_to_json(r, params, skeleton)));
  log_info("selected set " + std::string(to_string(r.selected_set)));
  return 0;
}

// eval
struct EvalArgs {
  Common common;
  std::string scenarios;
  std::vector<std::string> sweeps;
  std::string params;
  std::string result;
  std::string gt;
  std::string out;
  bool allow_scale = false;
  std::optional<std::uint64_t> seed;
  int threads = 0;
};

Eigen::Matrix3Xd gt_pose_from(const std::string& path, int n) {
  if (fs::path(path).extension() == ".json") {
    const nlohmann::json j = load_json_file(path);
    if (!j.is_object() || !j.contains("pose_3d_mm")) throw InputError(path + ": missing 'pose_3d_mm'");
    return pose3d_from_json(j.at("pose_3d_mm"), n);
  }
  const auto recs = read_pose_file(path, n);
  if (recs.size() != 1) throw InputError(path + ": expected exactly one pose");
  return recs.front().pose.joints;
}

int cmd_eval(const EvalArgs& a) {
  const Skeleton skeleton = skeleton_from(a.common.skeleton);
  if (!a.result.empty()) {
    const nlohmann::json r = load_json_file(a.result);
    if (!r.is_object() || !r.contains("pose_3d_mm")) throw InputError(a.result + ": missing 'pose_3d_mm'");
    Eigen::Matrix3Xd est;
    try {
      est = pose3d_from_json(r.at("pose_3d_mm"), skeleton.num_joints());
    } catch (const InputError& e) {
      throw InputError(a.result + ": " + e.what());
    }
    const Eigen::Matrix3Xd gt = gt_pose_from(a.gt, skeleton.num_joints());
    const double err = pose_error_3d(est, gt, a.allow_scale);
    nlohmann::json out = {{"result", a.result}, {"gt", a.gt}, {"allow_scale", a.allow_scale},
                          {"err3d_mm", std::stod(fmt6(err))}};
    write_file_atomic(a.out, dump(out));
    std::cout << "err3d_mm: " << fmt6(err) << "\n";
    return 0;
  }
  BenchmarkConfig cfg = load_benchmark_config(a.scenarios, skeleton);
  if (a.seed) cfg.spec.seed = *a.seed;
  EnergyParams base = a.params.empty() ? EnergyParams{} : load_params(a.params);
  if (a.seed) base.seed = *a.seed;
  std::vector<SweepCell> cells;
  if (a.sweeps.empty()) cells.push_back({"default", base});
  for (const auto& s : a.sweeps) {
    auto c = parse_sweep(s, base);
    cells.insert(cells.end(), c.begin(), c.end());
  }
  log_info("building benchmark with " + std::to_string(cfg.scenes) + " scenes");
  const Benchmark bench = make_benchmark(cfg.spec, cfg.scenes, skeleton);
  const Report rep = run_experiment(bench, cells, skeleton, a.threads > 0 ? a.threads : default_thread_count(),
                                    a.allow_scale);
  write_file_atomic(a.out + ".csv", rep.csv());
  write_file_atomic(a.out + ".json", rep.json());
  write_file_atomic(a.out + ".tsv", rep.curves_tsv());
  std::cout << rep.curves_tsv();
  return 0;
}

// synth
struct SynthArgs {
  Common common;
  std::string scenario;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
};

int cmd_synth(const SynthArgs& a) {
  const Skeleton skeleton = skeleton_from(a.common.skeleton);
  ScenarioSpec spec = load_benchmark_config(a.scenario, skeleton).spec;
  if (a.seed) spec.seed = *a.seed;
  const ScenarioBundle b = generate_scenario(spec, skeleton);
  std::error_code ec;
  fs::create_directories(a.out_dir, ec);
  if (ec) throw InputError("cannot create '" + a.out_dir + "'");
  const fs::path dir(a.out_dir);

  std::vector<PoseRecord> db;
  for (std::size_t i = 0; i < b.database.size(); ++i) db.push_back({"db" + std::to_string(i), b.database[i]});
  std::ostringstream dbs, gts;
  write_pose_jsonl(dbs, db);
  write_pose_jsonl(gts, {{"gt", b.scene.gt}});
  write_file_atomic((dir / "database.jsonl").string(), dbs.str());
  write_file_atomic((dir / "gt.jsonl").string(), gts.str());
  write_file_atomic((dir / "gt_2d.json").string(), dump({{"joints_px", pose2d_to_json(b.scene.gt_2d)}}));
  write_file_atomic((dir / "intrinsics.txt").string(), intrinsics_to_text(b.scene.camera.intrinsics));
  write_file_atomic((dir / "unaries.dsum").string(),
                    to_bytes([&](std::ostream& o) { save_unary_map(o, b.scene.unaries); }));
  write_file_atomic((dir / "scenario.json").string(), dump(scenario_spec_to_json(spec, skeleton)));
  std::cout << "wrote scenario to " << a.out_dir << "\n";
  return 0;
}

// report
struct ReportArgs {
  Common common;
  std::vector<std::string> inputs;
  std::string out;
};

int cmd_report(const ReportArgs& a) {
  Report merged;
  nlohmann::json sources = nlohmann::json::array();
  for (const auto& path : a.inputs) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open report '" + path + "'");
    Report r;
    try {
      r = read_report_csv(in);
    } catch (const InputError& e) {
      throw InputError(path + ": " + e.what());
    }
    for (auto& row : r.rows) merged.rows.push_back(std::move(row));
    for (const auto& c : r.cell_order) {
      if (std::find(merged.cell_order.begin(), merged.cell_order.end(), c) == merged.cell_order.end()) {
        merged.cell_order.push_back(c);
      }
    }
    sources.push_back(path);
  }
  merged.config_json = nlohmann::json{{"sources", sources}}.dump();
  write_file_atomic(a.out + ".json", merged.json());
  write_file_atomic(a.out + ".tsv", merged.curves_tsv());
  std::cout << merged.curves_tsv();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monocular 3D human pose estimation from 2D joint evidence and a motion-capture database"};
  app.require_subcommand(1);

  BuildDbArgs bd;
  auto* build = app.add_subcommand("build-db", "Build a retrieval index from 3D poses");
  add_common(build, bd.common);
  build->add_option("--poses", bd.poses, "Pose file (.jsonl or .csv)")->required()->check(CLI::ExistingFile);
  build->add_option("--out", bd.out, "Output index file")->required();
  build->add_option("--dedup-mm", bd.dedup_mm, "Drop poses closer than this mean joint distance")
      ->check(CLI::NonNegativeNumber);

  EstimateArgs est;
  auto* estimate = app.add_subcommand("estimate", "Estimate a 3D pose from unary maps or 2D joints");
  add_common(estimate, est.common);
  estimate->add_option("--index", est.index, "Index file from build-db")->required()->check(CLI::ExistingFile);
  auto* un = estimate->add_option("--unaries", est.unaries, "Unary map file")->check(CLI::ExistingFile);
  auto* p2 = estimate->add_option("--pose2d", est.pose2d, "2D joints JSON; unaries are synthesized around them")
                 ->check(CLI::ExistingFile);
  un->excludes(p2);
  estimate->add_option("--intrinsics", est.intrinsics, "Intrinsics file (fx fy cx cy)")->required();
  estimate->add_option("--params", est.params, "Parameters file");
  estimate->add_option("--iterations", est.iterations, "Outer iterations");
  estimate->add_option("--seed", est.seed, "Root seed");
  estimate->add_option("--mode", est.mode, "posterior, energy, or a set label to force");
  estimate->add_option("--sigma-px", est.sigma_px, "Gaussian width for --pose2d unaries")->check(CLI::PositiveNumber);
  estimate->add_option("--out", est.out, "Output JSON")->required();

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Run a synthetic benchmark or score a result");
  add_common(eval, ev.common);
  auto* sc = eval->add_option("--scenarios", ev.scenarios, "Benchmark JSON")->check(CLI::ExistingFile);
  eval->add_option("--sweep", ev.sweeps, "key=v1,v2 (repeatable)")->needs(sc);
  eval->add_option("--params", ev.params, "Base parameters file")->needs(sc);
  auto* res = eval->add_option("--result", ev.result, "LiftResult JSON to score")->check(CLI::ExistingFile);
  auto* gt = eval->add_option("--gt", ev.gt, "Ground-truth pose (.jsonl, .csv or result-style .json)")
                 ->check(CLI::ExistingFile);
  res->needs(gt);
  gt->needs(res);
  sc->excludes(res);
  eval->add_option("--out", ev.out, "Output path (prefix for benchmark reports)")->required();
  eval->add_flag("--allow-scale", ev.allow_scale, "Also align scale before measuring 3D error");
  eval->add_option("--seed", ev.seed, "Root seed");
  eval->add_option("--threads", ev.threads, "Worker threads (default: DUALLIFT_THREADS or all cores)");

  SynthArgs sy;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic scenario");
  add_common(synth, sy.common);
  synth->add_option("--scenario", sy.scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
  synth->add_option("--out-dir", sy.out_dir, "Output directory")->required();
  synth->add_option("--seed", sy.seed, "Root seed");

  ReportArgs rp;
  auto* report = app.add_subcommand("report", "Aggregate report CSVs");
  add_common(report, rp.common);
  report->add_option("--inputs", rp.inputs, "Report CSV files")->required()->check(CLI::ExistingFile);
  report->add_option("--out", rp.out, "Output prefix")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  try {
    if (*build) {
      apply_logging(bd.common);
      return cmd_build_db(bd);
    }
    if (*estimate) {
      apply_logging(est.common);
      if (est.unaries.empty() && est.pose2d.empty()) throw InputError("estimate needs --unaries or --pose2d");
      return cmd_estimate(est);
    }
    if (*eval) {
      apply_logging(ev.common);
      if (ev.scenarios.empty() && ev.result.empty()) throw InputError("eval needs --scenarios or --result/--gt");
      return cmd_eval(ev);
    }
    if (*synth) {
      apply_logging(sy.common);
      return cmd_synth(sy);
    }
    apply_logging(rp.common);
    return cmd_report(rp);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const EstimationError& e) {
    std::cerr << "estimation failed: " << e.what() << "\n";
    return kExitEstimation;
  }
}
