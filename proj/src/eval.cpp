#include "duallift/eval.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <json.hpp>

#include "duallift/config.hpp"

namespace duallift {
namespace {

Mat3 rot_x(double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); }
Mat3 rot_y(double a) { return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix(); }
Mat3 rot_z(double a) { return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix(); }

// Angle layout of BodyAngles, with the sampling range of each.
enum Angle {
  kTorsoPitch, kTorsoRoll, kTorsoYaw, kHeadPitch, kHeadRoll,
  kRShoulderPitch, kRShoulderAbd, kRElbow, kLShoulderPitch, kLShoulderAbd, kLElbow,
  kRHipPitch, kRHipAbd, kRKnee, kLHipPitch, kLHipAbd, kLKnee, kAngleCount
};

struct Range {
  double lo, hi;
};

constexpr std::array<Range, kAngleCount> kRanges = {{
    {-0.1, 0.5}, {-0.15, 0.15}, {-0.4, 0.4}, {-0.3, 0.4}, {-0.2, 0.2},
    {-0.6, 2.4}, {0.0, 1.4}, {0.0, 2.3}, {-0.6, 2.4}, {0.0, 1.4}, {0.0, 2.3},
    {-0.3, 1.4}, {0.0, 0.45}, {0.0, 2.0}, {-0.3, 1.4}, {0.0, 0.45}, {0.0, 2.0},
}};

// Millimetres of joint motion per radian, used to express angle noise in mm.
constexpr double kLeverMm = 400.0;

Vec3 centroid(const Eigen::Matrix3Xd& p) { return p.rowwise().mean(); }

// Singular values of the centered point cloud, descending.
Vec3 spread(const Eigen::Matrix3Xd& p) {
  const Eigen::Matrix3Xd c = p.colwise() - centroid(p);
  return Eigen::JacobiSVD<Eigen::Matrix3d>(c * c.transpose()).singularValues();
}

struct DatabaseDraw {
  std::vector<BodyAngles> bank;
  std::vector<BodyAngles> poses;
};

DatabaseDraw draw_database(const DatabaseSpec& spec, std::uint64_t seed) {
  DatabaseDraw d;
  for (int i = 0; i < spec.seed_poses; ++i) d.bank.push_back(sample_body_angles(split_seed(seed, 1000u + i)));
  for (int i = 0; i < spec.size; ++i) {
    d.poses.push_back(perturb_body_angles(d.bank[static_cast<std::size_t>(i % spec.seed_poses)],
                                          spec.perturbation_mm, split_seed(seed, 1000000u + i)));
  }
  return d;
}

// Ground-truth body for a scene: a database entry or a fresh draw around a
// bank pose.
Pose3D draw_gt(const DatabaseDraw& db, const DatabaseSpec& spec, std::uint64_t seed, const Skeleton& skeleton) {
  std::mt19937_64 rng(split_seed(seed, 7));
  if (spec.include_gt) {
    std::uniform_int_distribution<std::size_t> pick(0, db.poses.size() - 1);
    return articulate(db.poses[pick(rng)], skeleton);
  }
  std::uniform_int_distribution<std::size_t> pick(0, db.bank.size() - 1);
  return articulate(perturb_body_angles(db.bank[pick(rng)], spec.perturbation_mm, split_seed(seed, 8)), skeleton);
}

std::vector<Pose3D> articulate_all(const std::vector<BodyAngles>& a, const Skeleton& skeleton) {
  std::vector<Pose3D> out;
  out.reserve(a.size());
  for (const auto& b : a) out.push_back(articulate(b, skeleton));
  return out;
}

double mean(std::span<const double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stddev(std::span<const double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

// Shortest text that reads back to the same double.
std::string fmt_exact(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

double round6(double v) { return std::isfinite(v) ? std::stod(fmt6(v)) : v; }

nlohmann::json json_number(double v) {
  if (!std::isfinite(v)) return nullptr;
  return round6(v);
}

std::string csv_safe(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

std::string fmt6(double v) {
  std::ostringstream out;
  out << std::setprecision(6) << v;
  return out.str();
}

Eigen::Matrix3Xd RigidTransform::apply(const Eigen::Matrix3Xd& pts) const {
  return ((scale * rotation) * pts).colwise() + translation;
}

RigidTransform rigid_align(const Eigen::Matrix3Xd& est, const Eigen::Matrix3Xd& gt, bool allow_scale) {
  if (est.cols() != gt.cols()) throw InputError("rigid_align: joint count mismatch");
  if (est.cols() < 3) throw InputError("rigid_align: need at least three joints");
  for (const auto* p : {&est, &gt}) {
    const Vec3 s = spread(*p);
    if (!(s(1) > 1e-12 * std::max(s(0), 1e-300))) throw InputError("rigid_align: degenerate (collinear) joints");
  }
  if (est == gt) return {};
  const Vec3 me = centroid(est);
  const Vec3 mg = centroid(gt);
  const Eigen::Matrix3Xd e = est.colwise() - me;
  const Eigen::Matrix3Xd g = gt.colwise() - mg;
  const Eigen::JacobiSVD<Mat3> svd(g * e.transpose(), Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 d(1.0, 1.0, 1.0);
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2) = -1.0;
  RigidTransform t;
  t.rotation = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
  if (allow_scale) t.scale = svd.singularValues().dot(d) / e.squaredNorm();
  t.translation = mg - t.scale * t.rotation * me;
  return t;
}

double pose_error_3d(const Eigen::Matrix3Xd& est, const Eigen::Matrix3Xd& gt, bool allow_scale) {
  const RigidTransform t = rigid_align(est, gt, allow_scale);
  return (t.apply(est) - gt).colwise().norm().mean();
}

double pose_error_3d(const Pose3D& est, const Pose3D& gt, bool allow_scale) {
  return pose_error_3d(est.joints, gt.joints, allow_scale);
}

double pose_error_2d(const Pose2D& est, const Pose2D& gt) {
  if (est.num_joints() != gt.num_joints()) throw InputError("pose_error_2d: joint count mismatch");
  if (est.num_joints() == 0) return 0.0;
  return (est.joints - gt.joints).colwise().norm().mean();
}

int num_body_angles() { return kAngleCount; }

BodyAngles sample_body_angles(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  BodyAngles b;
  b.angles.resize(kAngleCount);
  for (int i = 0; i < kAngleCount; ++i) b.angles[i] = kRanges[i].lo + (kRanges[i].hi - kRanges[i].lo) * u(rng);
  b.scale = 0.94 + 0.12 * u(rng);
  return b;
}

BodyAngles perturb_body_angles(const BodyAngles& base, double sigma_mm, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma_mm / kLeverMm);
  BodyAngles b = base;
  if (sigma_mm <= 0.0) return b;
  for (double& a : b.angles) a += n(rng);
  return b;
}

Pose3D articulate(const BodyAngles& body, const Skeleton& skeleton) {
  if (static_cast<int>(body.angles.size()) != kAngleCount) throw InputError("articulate: wrong angle count");
  const auto j = [&](const char* name) {
    const int i = skeleton.joint_index(name);
    if (i < 0) throw InputError(std::string("synthetic bodies need joint '") + name + "'");
    return i;
  };
  const auto& a = body.angles;
  // Body frame: x toward the body's left, y down, the body faces -z.
  Eigen::Matrix3Xd X = Eigen::Matrix3Xd::Zero(3, skeleton.num_joints());
  const Vec3 r_hip(-100, 0, 0), l_hip(100, 0, 0);
  X.col(j("r_hip")) = r_hip;
  X.col(j("l_hip")) = l_hip;

  const Mat3 torso = rot_y(a[kTorsoYaw]) * rot_x(a[kTorsoPitch]) * rot_z(a[kTorsoRoll]);
  const Vec3 neck = torso * Vec3(0, -520, 0);
  X.col(j("neck")) = neck;
  X.col(j("head")) = neck + torso * rot_x(a[kHeadPitch]) * rot_z(a[kHeadRoll]) * Vec3(0, -230, 0);

  const auto arm = [&](const char* sh, const char* el, const char* wr, double side, int pitch, int abd, int elbow) {
    const Vec3 s = neck + torso * Vec3(180 * side, 20, 0);
    const Mat3 upper = torso * rot_z(-side * a[abd]) * rot_x(-a[pitch]);
    const Vec3 e = s + upper * Vec3(0, 290, 0);
    const Vec3 w = e + upper * rot_x(-a[elbow]) * Vec3(0, 260, 0);
    X.col(j(sh)) = s;
    X.col(j(el)) = e;
    X.col(j(wr)) = w;
  };
  arm("r_shoulder", "r_elbow", "r_wrist", -1.0, kRShoulderPitch, kRShoulderAbd, kRElbow);
  arm("l_shoulder", "l_elbow", "l_wrist", 1.0, kLShoulderPitch, kLShoulderAbd, kLElbow);

  const auto leg = [&](const char* kn, const char* an, const Vec3& hip, double side, int pitch, int abd, int knee) {
    const Mat3 thigh = rot_z(-side * a[abd]) * rot_x(-a[pitch]);
    const Vec3 k = hip + thigh * Vec3(0, 440, 0);
    X.col(j(kn)) = k;
    X.col(j(an)) = k + thigh * rot_x(a[knee]) * Vec3(0, 420, 0);
  };
  leg("r_knee", "r_ankle", r_hip, -1.0, kRHipPitch, kRHipAbd, kRKnee);
  leg("l_knee", "l_ankle", l_hip, 1.0, kLHipPitch, kLHipAbd, kLKnee);

  Pose3D p;
  p.skeleton_id = skeleton.id;
  p.joints = body.scale * X;
  return p;
}

std::vector<Pose3D> generate_database(const DatabaseSpec& spec, std::uint64_t seed, const Skeleton& skeleton) {
  return articulate_all(draw_database(spec, seed).poses, skeleton);
}

Scenario render_scenario(const Pose3D& gt_body, const ScenarioSpec& spec, std::uint64_t seed,
                         const Skeleton& skeleton) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double az = 360.0 * u(rng);
  const double el = spec.camera.max_elevation_deg * u(rng);
  const double ox = -200.0 + 400.0 * u(rng);
  const double oy = -100.0 + 200.0 * u(rng);

  Scenario sc;
  sc.camera.intrinsics = {spec.camera.focal_px, spec.camera.focal_px, 0.5 * spec.camera.image_width,
                          0.5 * spec.camera.image_height};
  const Mat3 R = VirtualCamera{az, el}.rotation();
  const Vec3 root = body_root(gt_body, skeleton);
  sc.camera.rotation = axis_angle(R);
  sc.camera.translation = Vec3(ox, oy, spec.camera.depth_mm) - R * root;
  sc.gt_body = gt_body;
  sc.gt.skeleton_id = skeleton.id;
  sc.gt.joints = (R * gt_body.joints).colwise() + sc.camera.translation;
  sc.gt_2d = project_pose(sc.camera, gt_body.joints);

  Pose2D centers = sc.gt_2d;
  const Corruption& c = spec.corruption;
  if (c.random_limb_px > 0.0) {
    static constexpr std::array<std::array<const char*, 2>, 4> kLimbs = {{
        {"l_elbow", "l_wrist"}, {"r_elbow", "r_wrist"}, {"l_knee", "l_ankle"}, {"r_knee", "r_ankle"}}};
    const auto& limb = kLimbs[static_cast<std::size_t>(std::uniform_int_distribution<int>(0, 3)(rng))];
    const double dir = 2.0 * std::numbers::pi * u(rng);
    const Vec2 off = c.random_limb_px * Vec2(std::cos(dir), std::sin(dir));
    for (const char* name : limb) {
      const int jj = skeleton.joint_index(name);
      sc.corrupted.push_back(jj);
      centers.joints.col(jj) += off;
    }
  } else {
    for (int jj : c.joints) {
      sc.corrupted.push_back(jj);
      centers.joints.col(jj) += c.offset_px;
    }
  }
  if (spec.jitter_px > 0.0) {
    std::normal_distribution<double> n(0.0, spec.jitter_px);
    for (int jj = 0; jj < centers.num_joints(); ++jj) {
      const double dx = n(rng);
      const double dy = n(rng);
      centers.joints.col(jj) += Vec2(dx, dy);
    }
  }
  sc.unaries = synthesize_unaries(centers, spec.unaries);
  return sc;
}

ScenarioBundle generate_scenario(const ScenarioSpec& spec, const Skeleton& skeleton) {
  const DatabaseDraw db = draw_database(spec.database, split_seed(spec.seed, 1));
  ScenarioBundle b;
  b.database = articulate_all(db.poses, skeleton);
  const Pose3D gt = draw_gt(db, spec.database, split_seed(spec.seed, 2), skeleton);
  b.scene = render_scenario(gt, spec, split_seed(spec.seed, 3), skeleton);
  return b;
}

Benchmark make_benchmark(const ScenarioSpec& spec, int scenes, const Skeleton& skeleton) {
  if (scenes < 1) throw InputError("benchmark needs at least one scene");
  const DatabaseDraw db = draw_database(spec.database, split_seed(spec.seed, 1));
  std::vector<Pose3D> poses = articulate_all(db.poses, skeleton);
  const std::vector<VirtualCamera> cams = virtual_cameras();
  Benchmark b{spec, poses, MoCapIndex::build(poses, cams, skeleton), {}};
  for (int i = 0; i < scenes; ++i) {
    const std::uint64_t s = split_seed(spec.seed, 100u + static_cast<std::uint64_t>(i));
    const Pose3D gt = draw_gt(db, spec.database, split_seed(s, 2), skeleton);
    b.scenes.push_back(render_scenario(gt, spec, split_seed(s, 3), skeleton));
  }
  return b;
}

std::vector<SweepCell> parse_sweep(const std::string& sweep, const EnergyParams& base) {
  const auto eq = sweep.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 >= sweep.size()) {
    throw InputError("sweep must look like key=v1,v2");
  }
  const std::string key = sweep.substr(0, eq);
  std::vector<SweepCell> cells;
  std::stringstream ss(sweep.substr(eq + 1));
  for (std::string v; std::getline(ss, v, ',');) {
    if (v.empty()) throw InputError("sweep '" + sweep + "' has an empty value");
    SweepCell c{key + "=" + v, base};
    apply_param(c.params, key, v);
    check_params(c.params);
    cells.push_back(std::move(c));
  }
  return cells;
}

std::vector<CellSummary> Report::summarize() const {
  std::vector<CellSummary> out;
  for (const auto& name : cell_order) {
    CellSummary s;
    s.cell = name;
    std::vector<double> e3, e2, em;
    for (const auto& r : rows) {
      if (r.cell != name) continue;
      if (!r.ok) {
        ++s.n_failed;
        continue;
      }
      ++s.n_ok;
      e3.push_back(r.err3d_mm);
      e2.push_back(r.err2d_px);
      em.push_back(r.err3d_mean_pose_mm);
    }
    s.err3d_mean = mean(e3);
    s.err3d_std = stddev(e3);
    s.err2d_mean = mean(e2);
    s.err2d_std = stddev(e2);
    s.err3d_mean_pose = mean(em);
    out.push_back(s);
  }
  return out;
}

std::string Report::csv() const {
  std::ostringstream out;
  out << "scene,cell,status,selected_set,err3d_mm,err2d_px,err3d_mean_pose_mm,err2d_initial_px,"
         "energy_initial,energy_final,error\n";
  for (const auto& r : rows) {
    out << r.scene << "," << csv_safe(r.cell) << "," << (r.ok ? "ok" : "failed") << "," << r.selected_set << ",";
    if (r.ok) {
      out << fmt_exact(r.err3d_mm) << "," << fmt_exact(r.err2d_px) << "," << fmt_exact(r.err3d_mean_pose_mm) << ","
          << fmt_exact(r.err2d_initial_px) << "," << fmt_exact(r.energy_initial) << "," << fmt_exact(r.energy_final)
          << ",";
    } else {
      out << ",,,,,,";
    }
    out << csv_safe(r.error) << "\n";
  }
  return out.str();
}

std::string Report::json() const {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& s : summarize()) {
    cells.push_back({{"cell", s.cell},
                     {"n_ok", s.n_ok},
                     {"n_failed", s.n_failed},
                     {"err3d_mean_mm", json_number(s.err3d_mean)},
                     {"err3d_std_mm", json_number(s.err3d_std)},
                     {"err2d_mean_px", json_number(s.err2d_mean)},
                     {"err2d_std_px", json_number(s.err2d_std)},
                     {"err3d_mean_pose_mm", json_number(s.err3d_mean_pose)}});
  }
  nlohmann::json j;
  j["config"] = config_json.empty() ? nlohmann::json::object() : nlohmann::json::parse(config_json);
  j["cells"] = std::move(cells);
  return j.dump(2) + "\n";
}

std::string Report::curves_tsv() const {
  std::ostringstream out;
  out << "sweep\tvalue\tn_ok\terr3d_mean_mm\terr3d_std_mm\terr2d_mean_px\n";
  for (const auto& s : summarize()) {
    const auto eq = s.cell.find('=');
    const std::string key = eq == std::string::npos ? s.cell : s.cell.substr(0, eq);
    const std::string value = eq == std::string::npos ? "-" : s.cell.substr(eq + 1);
    out << key << "\t" << value << "\t" << s.n_ok << "\t" << fmt6(s.err3d_mean) << "\t" << fmt6(s.err3d_std) << "\t"
        << fmt6(s.err2d_mean) << "\n";
  }
  return out.str();
}

Report read_report_csv(std::istream& in) {
  Report rep;
  std::string line;
  int line_no = 0;
  const auto number = [&](const std::string& f) {
    try {
      std::size_t used = 0;
      const double v = std::stod(f, &used);
      if (used != f.size()) throw InputError("");
      return v;
    } catch (const std::exception&) {
      throw InputError("report line " + std::to_string(line_no) + ": '" + f + "' is not a number");
    }
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (line_no == 1) {
      if (f.size() != 11 || f[0] != "scene" || f[1] != "cell") throw InputError("report: unexpected CSV header");
      continue;
    }
    if (f.size() != 11) throw InputError("report line " + std::to_string(line_no) + ": expected 11 fields");
    ExperimentRow r;
    r.scene = static_cast<int>(number(f[0]));
    r.cell = f[1];
    r.ok = f[2] == "ok";
    if (!r.ok && f[2] != "failed") throw InputError("report line " + std::to_string(line_no) + ": bad status");
    r.selected_set = f[3];
    if (r.ok) {
      r.err3d_mm = number(f[4]);
      r.err2d_px = number(f[5]);
      r.err3d_mean_pose_mm = number(f[6]);
      r.err2d_initial_px = number(f[7]);
      r.energy_initial = number(f[8]);
      r.energy_final = number(f[9]);
    }
    r.error = f[10];
    if (std::find(rep.cell_order.begin(), rep.cell_order.end(), r.cell) == rep.cell_order.end()) {
      rep.cell_order.push_back(r.cell);
    }
    rep.rows.push_back(std::move(r));
  }
  return rep;
}

int default_thread_count() {
  if (const char* env = std::getenv("DUALLIFT_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && n >= 1) return static_cast<int>(std::min(n, 256L));
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

Report run_experiment(const Benchmark& bench, std::span<const SweepCell> cells, const Skeleton& skeleton,
                      int threads, bool allow_scale) {
  if (bench.scenes.empty()) throw InputError("run_experiment: no scenarios");
  if (cells.empty()) throw InputError("run_experiment: no cells");
  Report rep;
  nlohmann::json config;
  config["scenario"] = benchmark_config_to_json({bench.spec, static_cast<int>(bench.scenes.size())}, skeleton);
  config["allow_scale"] = allow_scale;
  nlohmann::json cj = nlohmann::json::array();
  for (const auto& c : cells) {
    cj.push_back({{"cell", c.name}, {"params", params_to_json(c.params)}});
    rep.cell_order.push_back(c.name);
  }
  config["cells"] = std::move(cj);
  rep.config_json = config.dump();

  const std::size_t n_scenes = bench.scenes.size();
  const std::size_t jobs = cells.size() * n_scenes;
  rep.rows.resize(jobs);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t job = next++; job < jobs; job = next++) {
      const SweepCell& cell = cells[job / n_scenes];
      const std::size_t i = job % n_scenes;
      const Scenario& sc = bench.scenes[i];
      ExperimentRow& row = rep.rows[job];
      row.scene = static_cast<int>(i);
      row.cell = cell.name;
      try {
        EnergyParams p = cell.params;
        p.seed = split_seed(cell.params.seed, i);
        const LiftResult r = estimate_3d(sc.unaries, bench.index, skeleton, sc.camera.intrinsics, p);
        row.ok = true;
        row.selected_set = std::string(to_string(r.selected_set));
        row.err3d_mm = pose_error_3d(r.pose_3d.joints, sc.gt.joints, allow_scale);
        row.err2d_px = pose_error_2d(r.pose_2d, sc.gt_2d);
        row.err3d_mean_pose_mm = pose_error_3d(r.weighted_mean, sc.gt.joints, allow_scale);
        row.err2d_initial_px = pose_error_2d(r.iterations.front().input_pose, sc.gt_2d);
        row.energy_initial = r.initial_energy.total;
        row.energy_final = r.final_energy.total;
      } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(threads > 0 ? threads : default_thread_count(), static_cast<int>(jobs)));
  std::vector<std::jthread> pool;
  for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  pool.clear();
  return rep;
}

}  // namespace duallift
