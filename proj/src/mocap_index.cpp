#include "duallift/mocap_index.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "duallift/binary_io.hpp"

namespace duallift {
namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr int kAzimuthSteps = 24;
constexpr int kElevationSteps = 6;
constexpr double kAngleStepDeg = 15.0;

Mat3 rotation_about_x(double angle_rad) {
  const double c = std::cos(angle_rad), s = std::sin(angle_rad);
  Mat3 r;
  r << 1, 0, 0, 0, c, -s, 0, s, c;
  return r;
}

}  // namespace

Mat3 rotation_about_vertical(double angle_rad) {
  const double c = std::cos(angle_rad), s = std::sin(angle_rad);
  Mat3 r;
  r << c, 0, s, 0, 1, 0, -s, 0, c;
  return r;
}

Mat3 VirtualCamera::rotation() const {
  return rotation_about_x(elevation_deg * kDegToRad) *
         rotation_about_vertical(azimuth_deg * kDegToRad);
}

Vec3 VirtualCamera::view_direction() const { return rotation().row(2).transpose(); }

NormalizedPose3D normalize_pose3d(const Pose3D& pose, const Skeleton& skeleton) {
  check_pose(pose, skeleton);
  const Vec3 root = body_root(pose, skeleton);
  const Vec3 hips = pose.joints.col(skeleton.right_hip) - pose.joints.col(skeleton.left_hip);
  const double horizontal = std::hypot(hips.x(), hips.z());
  if (!(horizontal > 1e-9)) throw InputError("degenerate heading: hips coincide horizontally");
  // Rotation about y taking the horizontal hip direction onto -x.
  const double c = -hips.x() / horizontal;
  const double s = -hips.z() / horizontal;
  Mat3 r;
  r << c, 0, s, 0, 1, 0, -s, 0, c;
  NormalizedPose3D out;
  out.joints = r * (pose.joints.colwise() - root);
  return out;
}

std::vector<VirtualCamera> virtual_cameras() {
  std::vector<VirtualCamera> cams;
  cams.reserve(kAzimuthSteps * kElevationSteps);
  for (int e = 0; e < kElevationSteps; ++e) {
    for (int a = 0; a < kAzimuthSteps; ++a) {
      cams.push_back({a * kAngleStepDeg, e * kAngleStepDeg});
    }
  }
  return cams;
}

Pose2D project_orthographic(const NormalizedPose3D& pose, const VirtualCamera& cam) {
  Pose2D out;
  out.joints = (cam.rotation() * pose.joints).topRows<2>();
  return out;
}

NormalizedPose2D normalize_pose2d(const Pose2D& pose) {
  double min_y = std::numeric_limits<double>::infinity();
  double max_y = -min_y;
  double sum_x = 0.0;
  int n_valid = 0;
  for (int j = 0; j < pose.num_joints(); ++j) {
    if (!pose.is_valid(j)) continue;
    min_y = std::min(min_y, pose.joints(1, j));
    max_y = std::max(max_y, pose.joints(1, j));
    sum_x += pose.joints(0, j);
    ++n_valid;
  }
  if (n_valid == 0 || !(max_y - min_y > 0.0) || !std::isfinite(max_y - min_y)) {
    throw InputError("degenerate pose: zero vertical extent");
  }
  const double scale = 2.0 / (max_y - min_y);
  const double mean_x = sum_x / n_valid;
  NormalizedPose2D out;
  out.joints.resize(2, pose.num_joints());
  for (int j = 0; j < pose.num_joints(); ++j) {
    out.joints(0, j) = (pose.joints(0, j) - mean_x) * scale;
    out.joints(1, j) = (pose.joints(1, j) - min_y) * scale - 1.0;
    if (pose.is_valid(j)) {
      // Pin the extremes so the range is exactly [-1, 1].
      if (pose.joints(1, j) == min_y) out.joints(1, j) = -1.0;
      if (pose.joints(1, j) == max_y) out.joints(1, j) = 1.0;
    }
  }
  return out;
}

MoCapIndex MoCapIndex::build(std::span<const Pose3D> poses, std::span<const VirtualCamera> cameras,
                             const Skeleton& skeleton) {
  if (poses.empty()) throw InputError("no poses to index");
  if (cameras.empty()) throw InputError("no cameras to index");
  MoCapIndex index;
  index.skeleton_id_ = skeleton.id;
  index.num_joints_ = skeleton.num_joints();
  index.cameras_.assign(cameras.begin(), cameras.end());
  index.poses_.reserve(poses.size());
  for (const auto& p : poses) index.poses_.push_back(normalize_pose3d(p, skeleton));

  std::array<std::vector<float>, 5> features;
  for (JointSet s : kJointSets) {
    auto& set = index.sets_[idx(s)];
    set.joints = skeleton.joints_in(s);
    set.entries.reserve(poses.size() * cameras.size());
    features[idx(s)].reserve(poses.size() * cameras.size() * set.joints.size() * 2);
  }
  for (std::size_t p = 0; p < index.poses_.size(); ++p) {
    for (std::size_t c = 0; c < cameras.size(); ++c) {
      const NormalizedPose2D proj = normalize_pose2d(project_orthographic(index.poses_[p], cameras[c]));
      for (JointSet s : kJointSets) {
        auto& set = index.sets_[idx(s)];
        set.entries.push_back({static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(c)});
        for (int j : set.joints) {
          features[idx(s)].push_back(static_cast<float>(proj.joints(0, j)));
          features[idx(s)].push_back(static_cast<float>(proj.joints(1, j)));
        }
      }
    }
  }
  for (JointSet s : kJointSets) {
    auto& set = index.sets_[idx(s)];
    set.tree = KdTree(std::move(features[idx(s)]), static_cast<int>(set.joints.size()) * 2);
  }
  return index;
}

std::vector<double> MoCapIndex::feature(const NormalizedPose2D& pose, JointSet s) const {
  const auto& joints = sets_[idx(s)].joints;
  if (pose.joints.cols() != num_joints_) throw InputError("query joint count mismatch");
  std::vector<double> f;
  f.reserve(joints.size() * 2);
  for (int j : joints) {
    f.push_back(pose.joints(0, j));
    f.push_back(pose.joints(1, j));
  }
  return f;
}

KnnResult MoCapIndex::query(const NormalizedPose2D& q, JointSet s, int k) const {
  if (k < 1) throw InputError("K must be >= 1");
  const auto& set = sets_[idx(s)];
  const std::vector<double> f = feature(q, s);
  KnnResult result;
  result.truncated = static_cast<std::size_t>(k) > set.entries.size();
  const auto hits = set.tree.knn(f, k);
  const double n_joints = static_cast<double>(set.joints.size());
  result.neighbors.reserve(hits.size());
  int rank = 1;
  for (const auto& h : hits) {
    RetrievedPose r;
    r.entry_id = h.id;
    r.pose_id = set.entries[h.id].pose_id;
    r.camera_id = set.entries[h.id].camera_id;
    r.distance = std::sqrt(h.sq_dist) / n_joints;
    r.rank = rank++;
    r.pose = poses_[r.pose_id].joints;
    result.neighbors.push_back(std::move(r));
  }
  return result;
}

KnnResult knn_query(const MoCapIndex& index, const NormalizedPose2D& query, JointSet s, int k) {
  return index.query(query, s, k);
}

// Layout (little-endian):
//   "DSMI" u16 version u16 joints u32 poses u32 cameras string skeleton_id
//   cameras: f64 azimuth, f64 elevation
//   poses:   f64 x 3 x joints (normalized)
//   u8 set count, then per set: u8 label, u16 n, u16 joint[n], u32 entries,
//   f32 features[entries x 2n], (u32 pose id, u32 camera id)[entries]
void MoCapIndex::save(std::ostream& out) const {
  using namespace binio;
  put_magic(out, "DSMI");
  put_uint<std::uint16_t>(out, kFormatVersion);
  put_uint<std::uint16_t>(out, static_cast<std::uint16_t>(num_joints_));
  put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(poses_.size()));
  put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(cameras_.size()));
  put_string(out, skeleton_id_);
  for (const auto& c : cameras_) {
    put_f64(out, c.azimuth_deg);
    put_f64(out, c.elevation_deg);
  }
  for (const auto& p : poses_) {
    for (Eigen::Index i = 0; i < p.joints.size(); ++i) put_f64(out, p.joints.data()[i]);
  }
  put_uint<std::uint8_t>(out, static_cast<std::uint8_t>(sets_.size()));
  for (JointSet s : kJointSets) {
    const auto& set = sets_[idx(s)];
    put_uint<std::uint8_t>(out, static_cast<std::uint8_t>(s));
    put_uint<std::uint16_t>(out, static_cast<std::uint16_t>(set.joints.size()));
    for (int j : set.joints) put_uint<std::uint16_t>(out, static_cast<std::uint16_t>(j));
    put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(set.entries.size()));
    for (float v : set.tree.points()) put_f32(out, v);
    for (const auto& e : set.entries) {
      put_uint<std::uint32_t>(out, e.pose_id);
      put_uint<std::uint32_t>(out, e.camera_id);
    }
  }
  if (!out) throw InputError("failed writing index");
}

void MoCapIndex::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open '" + path + "' for writing");
  save(out);
}

MoCapIndex MoCapIndex::load(std::istream& in, const Skeleton& skeleton) {
  using namespace binio;
  expect_magic(in, "DSMI", "index");
  const auto version = get_uint<std::uint16_t>(in);
  if (version != kFormatVersion) {
    throw InputError("index version " + std::to_string(version) + " not supported (expected " +
                     std::to_string(kFormatVersion) + ")");
  }
  MoCapIndex index;
  index.num_joints_ = get_uint<std::uint16_t>(in);
  const auto n_poses = get_uint<std::uint32_t>(in);
  const auto n_cams = get_uint<std::uint32_t>(in);
  index.skeleton_id_ = get_string(in);
  if (index.num_joints_ != skeleton.num_joints() ||
      (!skeleton.id.empty() && index.skeleton_id_ != skeleton.id)) {
    throw InputError("index was built for skeleton '" + index.skeleton_id_ + "'");
  }
  for (std::uint32_t c = 0; c < n_cams; ++c) {
    VirtualCamera cam;
    cam.azimuth_deg = get_f64(in);
    cam.elevation_deg = get_f64(in);
    index.cameras_.push_back(cam);
  }
  index.poses_.resize(n_poses);
  for (auto& p : index.poses_) {
    p.joints.resize(3, index.num_joints_);
    for (Eigen::Index i = 0; i < p.joints.size(); ++i) p.joints.data()[i] = get_f64(in);
  }
  const auto n_sets = get_uint<std::uint8_t>(in);
  if (n_sets != index.sets_.size()) throw InputError("index has wrong joint-set count");
  for (std::uint8_t k = 0; k < n_sets; ++k) {
    const auto label = get_uint<std::uint8_t>(in);
    if (label >= index.sets_.size()) throw InputError("index has an unknown joint-set label");
    auto& set = index.sets_[label];
    const auto n = get_uint<std::uint16_t>(in);
    for (std::uint16_t j = 0; j < n; ++j) {
      const int joint = get_uint<std::uint16_t>(in);
      if (joint >= index.num_joints_) throw InputError("index joint out of range");
      set.joints.push_back(joint);
    }
    const auto n_entries = get_uint<std::uint32_t>(in);
    std::vector<float> feats(static_cast<std::size_t>(n_entries) * n * 2);
    for (auto& v : feats) v = get_f32(in);
    set.entries.resize(n_entries);
    for (auto& e : set.entries) {
      e.pose_id = get_uint<std::uint32_t>(in);
      e.camera_id = get_uint<std::uint32_t>(in);
      if (e.pose_id >= n_poses || e.camera_id >= n_cams) {
        throw InputError("index back-link out of range");
      }
    }
    set.tree = KdTree(std::move(feats), n * 2);
  }
  return index;
}

MoCapIndex MoCapIndex::load(const std::string& path, const Skeleton& skeleton) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open index '" + path + "'");
  return load(in, skeleton);
}

}  // namespace duallift
