#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "duallift/common.hpp"

namespace duallift {

inline constexpr int kNumJoints = 14;

enum class JointSet : std::uint8_t { kAll = 0, kUp = 1, kLw = 2, kLt = 3, kRt = 4 };

// Fixed evaluation and tie-break order.
inline constexpr std::array<JointSet, 5> kJointSets = {
    JointSet::kAll, JointSet::kUp, JointSet::kLw, JointSet::kLt, JointSet::kRt};

std::string_view to_string(JointSet s);
JointSet joint_set_from_string(std::string_view label);

// Joint names, kinematic tree and joint-set memberships.
struct Skeleton {
  std::string id;
  std::vector<std::string> joint_names;
  // (child, parent) pairs.
  std::vector<std::pair<int, int>> edges;
  // Root of the kinematic tree (a real joint).
  int root = -1;
  // The two joints whose midpoint is the body root used for centering.
  int left_hip = -1;
  int right_hip = -1;
  std::map<std::string, std::vector<int>> joint_sets;

  int num_joints() const { return static_cast<int>(joint_names.size()); }
  int num_edges() const { return static_cast<int>(edges.size()); }
  int joint_index(std::string_view name) const;
  // Members of a set; throws InputError if the set is missing.
  const std::vector<int>& joints_in(JointSet s) const;
  // parent[j] for every joint, -1 for the root. Requires a valid tree.
  std::vector<int> parents() const;
  // Joints in an order where every parent precedes its children.
  std::vector<int> topological_order() const;
};

// The shipped 14-joint skeleton (identical to data/skeleton14.txt).
const Skeleton& default_skeleton();

Skeleton parse_skeleton(std::istream& in);
Skeleton load_skeleton(const std::string& path);
std::string skeleton_to_text(const Skeleton& skeleton);

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

ValidationReport validate_skeleton(const Skeleton& skeleton);

// Joint positions in millimeters, one column per joint.
struct Pose3D {
  std::string skeleton_id;
  Eigen::Matrix3Xd joints;

  int num_joints() const { return static_cast<int>(joints.cols()); }
  // Column-major flattening: x0 y0 z0 x1 ...
  Eigen::VectorXd flat() const;
  static Pose3D from_flat(const Eigen::VectorXd& v, std::string skeleton_id = {});
};

// Joint positions in pixels. An empty `valid` means every joint is valid.
struct Pose2D {
  Eigen::Matrix2Xd joints;
  std::vector<bool> valid;

  int num_joints() const { return static_cast<int>(joints.cols()); }
  bool is_valid(int j) const { return valid.empty() || valid[static_cast<std::size_t>(j)]; }
};

// Throws InputError if the pose does not fit the skeleton or holds non-finite values.
void check_pose(const Pose3D& pose, const Skeleton& skeleton);

Vec3 body_root(const Pose3D& pose, const Skeleton& skeleton);
Pose3D root_centered(const Pose3D& pose, const Skeleton& skeleton);

// Euclidean length of every skeleton edge, in edge order.
Eigen::VectorXd limb_lengths(const Pose3D& pose, const Skeleton& skeleton);

// Per-target-joint affine maps on root-centered coordinates.
struct RetargetMap {
  std::string source_id;
  std::string target_id;
  double regularization = 0.0;
  std::vector<Mat3> linear;
  std::vector<Vec3> offset;
  // RMS of the fit over all training joints, in mm.
  double fit_residual_rms = 0.0;

  static RetargetMap identity(const Skeleton& skeleton);
};

RetargetMap fit_retarget_map(std::span<const std::pair<Pose3D, Pose3D>> pairs,
                             double regularization, const Skeleton& source,
                             const Skeleton& target);

// Maps the root-centered pose and restores the source root position.
Pose3D apply_retarget(const RetargetMap& map, const Pose3D& pose, const Skeleton& source);

inline constexpr double kDefaultDedupMm = 1.5;

// Greedy first-occurrence filter: a pose is dropped iff its mean per-joint
// distance (root-centered) to an already retained pose is below threshold_mm.
std::vector<Pose3D> deduplicate(std::span<const Pose3D> poses, double threshold_mm,
                                const Skeleton& skeleton);
// Same, returning retained input positions.
std::vector<std::size_t> deduplicate_indices(std::span<const Pose3D> poses,
                                             double threshold_mm, const Skeleton& skeleton);

}  // namespace duallift
