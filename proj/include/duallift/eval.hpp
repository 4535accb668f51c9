#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "duallift/lifter.hpp"
#include "duallift/mocap_index.hpp"
#include "duallift/psm.hpp"
#include "duallift/skeleton.hpp"

namespace duallift {

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;

  Eigen::Matrix3Xd apply(const Eigen::Matrix3Xd& pts) const;
};

// Least-squares R, t (and s when allowed) minimizing sum |s R est_i + t - gt_i|^2,
// never a reflection. Throws InputError when est or gt is collinear.
RigidTransform rigid_align(const Eigen::Matrix3Xd& est, const Eigen::Matrix3Xd& gt,
                           bool allow_scale = false);

// Mean per-joint distance after rigid alignment of est onto gt.
double pose_error_3d(const Eigen::Matrix3Xd& est, const Eigen::Matrix3Xd& gt, bool allow_scale = false);
double pose_error_3d(const Pose3D& est, const Pose3D& gt, bool allow_scale = false);
double pose_error_2d(const Pose2D& est, const Pose2D& gt);

// Joint-angle parameters of the synthetic articulated body.
struct BodyAngles {
  std::vector<double> angles;
  double scale = 1.0;
};

int num_body_angles();
BodyAngles sample_body_angles(std::uint64_t seed);
BodyAngles perturb_body_angles(const BodyAngles& base, double sigma_mm, std::uint64_t seed);
// Root-centered pose of a ~1700 mm tall body; needs the default joint names.
Pose3D articulate(const BodyAngles& body, const Skeleton& skeleton);

struct DatabaseSpec {
  int size = 2000;
  int seed_poses = 64;
  double perturbation_mm = 40.0;
  bool include_gt = true;
};

struct Corruption {
  std::vector<int> joints;
  Vec2 offset_px = Vec2::Zero();
  // When > 0 a random limb (elbow+wrist or knee+ankle) is displaced by this
  // many pixels in a random direction instead of the explicit joints.
  double random_limb_px = 0.0;
};

struct SceneCameraSpec {
  double focal_px = 1000.0;
  int image_width = 640;
  int image_height = 480;
  double depth_mm = 5000.0;
  double max_elevation_deg = 30.0;
};

struct ScenarioSpec {
  std::uint64_t seed = 1;
  DatabaseSpec database;
  SceneCameraSpec camera;
  UnarySynthesis unaries;
  Corruption corruption;
  double jitter_px = 0.0;  // per-joint Gaussian offset of the unary centers
};

struct Scenario {
  Pose3D gt;       // camera frame
  Pose3D gt_body;  // body frame, root at the origin
  CameraModel camera;
  Pose2D gt_2d;
  UnaryMap unaries;
  std::vector<int> corrupted;
};

struct ScenarioBundle {
  Scenario scene;
  std::vector<Pose3D> database;
};

std::vector<Pose3D> generate_database(const DatabaseSpec& spec, std::uint64_t seed, const Skeleton& skeleton);

// Renders one scene around the given ground-truth pose.
Scenario render_scenario(const Pose3D& gt_body, const ScenarioSpec& spec, std::uint64_t seed,
                         const Skeleton& skeleton);

// Database plus a scene; the ground truth is a database pose when included.
ScenarioBundle generate_scenario(const ScenarioSpec& spec, const Skeleton& skeleton);

// Many scenes sharing one database and index.
struct Benchmark {
  ScenarioSpec spec;
  std::vector<Pose3D> database;
  MoCapIndex index;
  std::vector<Scenario> scenes;
};

Benchmark make_benchmark(const ScenarioSpec& spec, int scenes, const Skeleton& skeleton);

struct SweepCell {
  std::string name;  // "key=value" or "default"
  EnergyParams params;
};

// Parses "key=v1,v2,..." into one cell per value on top of base.
std::vector<SweepCell> parse_sweep(const std::string& sweep, const EnergyParams& base);

struct ExperimentRow {
  int scene = 0;
  std::string cell;
  bool ok = false;
  std::string error;
  std::string selected_set;
  double err3d_mm = 0.0;
  double err2d_px = 0.0;
  double err3d_mean_pose_mm = 0.0;  // plain weighted average of the kept neighbours
  double err2d_initial_px = 0.0;
  double energy_initial = 0.0;
  double energy_final = 0.0;
};

struct CellSummary {
  std::string cell;
  int n_ok = 0;
  int n_failed = 0;
  double err3d_mean = 0.0;
  double err3d_std = 0.0;
  double err2d_mean = 0.0;
  double err2d_std = 0.0;
  double err3d_mean_pose = 0.0;
};

struct Report {
  std::string config_json;  // echo of the effective configuration
  std::vector<std::string> cell_order;
  std::vector<ExperimentRow> rows;

  std::vector<CellSummary> summarize() const;
  std::string csv() const;
  std::string json() const;
  std::string curves_tsv() const;
};

Report read_report_csv(std::istream& in);

// Thread count from DUALLIFT_THREADS, else the hardware concurrency.
int default_thread_count();

Report run_experiment(const Benchmark& bench, std::span<const SweepCell> cells, const Skeleton& skeleton,
                      int threads = 0, bool allow_scale = false);

// Formats with 6 significant digits.
std::string fmt6(double v);

}  // namespace duallift
