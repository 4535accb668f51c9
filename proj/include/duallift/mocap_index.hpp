#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "duallift/kdtree.hpp"
#include "duallift/skeleton.hpp"

namespace duallift {

// Pose with the body root at the origin and the heading removed by a rotation
// about the vertical axis. Frame convention: x right, y down (gravity), z
// forward; the left-to-right hip direction points along -x.
struct NormalizedPose3D {
  Eigen::Matrix3Xd joints;
};

// Orthographic projection scaled so joint y spans [-1, 1] and mean x is 0.
struct NormalizedPose2D {
  Eigen::Matrix2Xd joints;
};

struct VirtualCamera {
  double azimuth_deg = 0.0;
  double elevation_deg = 0.0;

  // World-to-camera rotation: elevation about x after azimuth about y.
  Mat3 rotation() const;
  // Unit viewing direction in world coordinates.
  Vec3 view_direction() const;
};

Mat3 rotation_about_vertical(double angle_rad);

NormalizedPose3D normalize_pose3d(const Pose3D& pose, const Skeleton& skeleton);

// 24 azimuths x 6 elevations in 15 degree steps (elevations 0..75).
std::vector<VirtualCamera> virtual_cameras();

Pose2D project_orthographic(const NormalizedPose3D& pose, const VirtualCamera& cam);

NormalizedPose2D normalize_pose2d(const Pose2D& pose);

struct RetrievedPose {
  std::uint32_t entry_id = 0;
  std::uint32_t pose_id = 0;
  std::uint32_t camera_id = 0;
  // Euclidean distance of the concatenated set coordinates divided by the
  // joint count of the set.
  double distance = 0.0;
  int rank = 0;
  Eigen::Matrix3Xd pose;
};

struct KnnResult {
  std::vector<RetrievedPose> neighbors;
  bool truncated = false;
};

class MoCapIndex {
 public:
  struct Entry {
    std::uint32_t pose_id;
    std::uint32_t camera_id;
  };

  static MoCapIndex build(std::span<const Pose3D> poses, std::span<const VirtualCamera> cameras,
                          const Skeleton& skeleton);

  KnnResult query(const NormalizedPose2D& query, JointSet s, int k) const;

  // Feature layout for set s: x, y of each member joint in set order.
  std::vector<double> feature(const NormalizedPose2D& pose, JointSet s) const;

  std::size_t num_poses() const { return poses_.size(); }
  std::size_t num_cameras() const { return cameras_.size(); }
  std::size_t num_entries(JointSet s) const { return sets_[idx(s)].entries.size(); }
  const Entry& entry(JointSet s, std::size_t i) const { return sets_[idx(s)].entries[i]; }
  std::span<const float> stored_feature(JointSet s, std::size_t i) const {
    return sets_[idx(s)].tree.point(i);
  }
  const std::vector<int>& set_joints(JointSet s) const { return sets_[idx(s)].joints; }
  const NormalizedPose3D& pose(std::size_t id) const { return poses_[id]; }
  const VirtualCamera& camera(std::size_t id) const { return cameras_[id]; }
  const std::string& skeleton_id() const { return skeleton_id_; }
  int num_joints() const { return num_joints_; }

  void save(std::ostream& out) const;
  void save(const std::string& path) const;
  static MoCapIndex load(std::istream& in, const Skeleton& skeleton);
  static MoCapIndex load(const std::string& path, const Skeleton& skeleton);

  static constexpr std::uint16_t kFormatVersion = 1;

 private:
  struct SetIndex {
    std::vector<int> joints;
    std::vector<Entry> entries;
    KdTree tree;
  };
  static std::size_t idx(JointSet s) { return static_cast<std::size_t>(s); }

  std::string skeleton_id_;
  int num_joints_ = 0;
  std::vector<NormalizedPose3D> poses_;
  std::vector<VirtualCamera> cameras_;
  std::array<SetIndex, 5> sets_;
};

inline constexpr int kDefaultK = 256;

KnnResult knn_query(const MoCapIndex& index, const NormalizedPose2D& query, JointSet s, int k);

}  // namespace duallift
