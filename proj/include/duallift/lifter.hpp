#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "duallift/mocap_index.hpp"
#include "duallift/psm.hpp"
#include "duallift/skeleton.hpp"

namespace duallift {

struct Intrinsics {
  double fx = 1000.0;
  double fy = 1000.0;
  double cx = 320.0;
  double cy = 240.0;
};

void check_intrinsics(const Intrinsics& k);

// Perspective camera mapping normalized pose space into the image.
struct CameraModel {
  Intrinsics intrinsics;
  Vec3 rotation = Vec3::Zero();  // axis-angle
  Vec3 translation = Vec3::Zero();  // mm

  Mat3 rotation_matrix() const;
};

Vec3 axis_angle(const Mat3& r);

// Throws EstimationError "behind camera" if any joint has non-positive depth.
Pose2D project_pose(const CameraModel& cam, const Eigen::Matrix3Xd& joints);
Pose2D project_pose(const CameraModel& cam, const Pose3D& pose);

enum class SelectionMode { kPosterior, kEnergy };

std::string_view to_string(SelectionMode m);
SelectionMode selection_mode_from_string(std::string_view s);

struct EnergyParams {
  double omega_p = 0.55;
  double omega_r = 0.35;
  double omega_a = 0.065;
  int K = 256;
  int K_w = 64;
  int pca_dim = 18;
  double root_eps = 1e-12;
  int max_iterations = 500;
  double gradient_tolerance = 1e-8;
  int restarts = 4;
  int iterations = 2;
  std::uint64_t seed = 0;
  SelectionMode mode = SelectionMode::kPosterior;
  // Ablations: false weights all K neighbours by 1; a forced set skips selection.
  bool weighting = true;
  std::optional<JointSet> forced_set;
};

void check_params(const EnergyParams& p);

double energy_p(const Eigen::Matrix3Xd& X, const CameraModel& cam, std::span<const int> joints,
                const Pose2D& x, double eps);
double energy_r(const Eigen::Matrix3Xd& X, std::span<const Eigen::Matrix3Xd> retrieved,
                std::span<const double> weights, double eps);
double energy_a(const Eigen::Matrix3Xd& X, std::span<const Eigen::Matrix3Xd> retrieved,
                std::span<const double> weights, const Skeleton& skeleton, double eps);

// Everything the three-term energy depends on besides the pose itself.
struct EnergyInputs {
  CameraModel camera;
  std::vector<int> joints;
  Pose2D observed;
  std::vector<Eigen::Matrix3Xd> retrieved;
  std::vector<double> weights;
};

struct EnergyValue {
  double total = 0.0;
  double e_p = 0.0;
  double e_r = 0.0;
  double e_a = 0.0;
  Eigen::Matrix3Xd gradient;  // d total / d X
};

EnergyValue total_energy(const Eigen::Matrix3Xd& X, const EnergyInputs& in, const Skeleton& skeleton,
                         const EnergyParams& params, bool with_gradient = true);

struct PoseSubspace {
  Eigen::VectorXd mean;       // flattened, x0 y0 z0 x1 ...
  Eigen::MatrixXd basis;      // columns orthonormal
  Eigen::VectorXd variances;  // non-increasing

  int dim() const { return static_cast<int>(basis.cols()); }
  Eigen::Matrix3Xd pose(const Eigen::VectorXd& coeffs) const;
  Eigen::Matrix3Xd mean_pose() const;
};

PoseSubspace fit_pca(std::span<const Eigen::Matrix3Xd> poses, std::span<const double> weights,
                     int pca_dim);

// Gradient of total_energy with respect to subspace coefficients.
Eigen::VectorXd coefficient_gradient(const PoseSubspace& subspace, const Eigen::Matrix3Xd& grad_x);

Eigen::Matrix3Xd minimize_energy(const PoseSubspace& subspace, const EnergyInputs& in,
                                 const Skeleton& skeleton, const EnergyParams& params);

struct CameraFit {
  CameraModel camera;
  double energy = 0.0;
  int restart = -1;  // index of the winning start
};

// Fits rotation and translation so the retrieved poses project onto x over
// the given joints. Starts from each azimuth plus the optional warm start and
// view hint; keeps the lowest energy.
CameraFit estimate_projection(std::span<const Eigen::Matrix3Xd> retrieved, const Pose2D& x,
                              std::span<const int> joints, const Intrinsics& intrinsics,
                              const EnergyParams& params,
                              const std::optional<CameraModel>& warm_start = std::nullopt,
                              const std::optional<VirtualCamera>& view_hint = std::nullopt);

// Unary support of each projected pose, top K_w kept and min-max normalized.
std::vector<double> raw_weights(const UnaryMap& unaries, std::span<const Pose2D> projected);
std::vector<double> compute_weights(const UnaryMap& unaries, std::span<const Pose2D> projected,
                                    int K_w);
std::vector<double> normalize_weights(std::span<const double> raw, int K_w);

struct SetState {
  bool ok = false;
  std::string failure;
  std::vector<Eigen::Matrix3Xd> retrieved;
  std::vector<Pose2D> projected;
  std::vector<double> raw_weights;
  std::vector<double> weights;
  CameraFit camera;
  VirtualCamera nearest_view;
};

struct Selection {
  JointSet set = JointSet::kAll;
  Pose2D pose;  // refined 2D pose
  std::array<double, 5> scores{};
};

Selection select_joint_set(const std::array<SetState, 5>& sets, const Pose2D& x,
                           const UnaryMap& unaries, const Skeleton& skeleton,
                           const EnergyParams& params);

struct IterationDiagnostics {
  int iteration = 0;
  Pose2D input_pose;
  Pose2D refined_pose;
  JointSet selected_set = JointSet::kAll;
  std::array<bool, 5> set_ok{};
  std::array<double, 5> camera_energy{};
  std::array<double, 5> selection_score{};
  std::array<std::vector<double>, 5> weights;
};

struct LiftResult {
  Pose3D pose_3d;                     // camera frame, mm
  Eigen::Matrix3Xd pose_normalized;   // normalized pose space
  Eigen::Matrix3Xd weighted_mean;     // weighted average of the kept neighbours
  Pose2D pose_2d;
  JointSet selected_set = JointSet::kAll;
  CameraModel camera;
  EnergyValue initial_energy;
  EnergyValue final_energy;
  int subspace_dim = 0;
  std::vector<IterationDiagnostics> iterations;
};

struct LiftOptions {
  // Model for the first 2D inference; null uses independent per-joint maxima.
  const PsmModel* initial_model = nullptr;
};

LiftResult estimate_3d(const UnaryMap& unaries, const MoCapIndex& index, const Skeleton& skeleton,
                       const Intrinsics& intrinsics, const EnergyParams& params,
                       const LiftOptions& options = {});

}  // namespace duallift
