#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "duallift/kdtree.hpp"
#include "duallift/mocap_index.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace duallift;

using testing::linear_scan;
using testing::random_query;

namespace {

const Skeleton& sk() { return default_skeleton(); }

std::vector<Pose3D> bodies(int n, std::uint64_t seed) {
  std::vector<Pose3D> out;
  for (int i = 0; i < n; ++i) out.push_back(testing::random_body(split_seed(seed, i)));
  return out;
}

}  // namespace

TEST_CASE("normalize_pose3d removes translation and heading") {
  const Pose3D p = testing::random_body(9);
  const NormalizedPose3D a = normalize_pose3d(p, sk());
  const int lh = sk().left_hip, rh = sk().right_hip;
  CHECK(((a.joints.col(lh) + a.joints.col(rh)) * 0.5).norm() <= 1e-9);
  const Vec3 hips = a.joints.col(rh) - a.joints.col(lh);
  CHECK(std::abs(hips.z()) <= 1e-9);
  CHECK(hips.x() < 0.0);

  Pose3D shifted = p;
  shifted.joints.colwise() += Vec3(5, 7, 9);
  CHECK((normalize_pose3d(shifted, sk()).joints - a.joints).cwiseAbs().maxCoeff() <= 1e-9);

  const NormalizedPose3D again = normalize_pose3d(Pose3D{sk().id, a.joints}, sk());
  CHECK((again.joints - a.joints).cwiseAbs().maxCoeff() <= 1e-9);

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> ang(0.0, 2.0 * std::numbers::pi);
  for (double deg : {137.0, -30.0, 181.0}) {
    Pose3D r = p;
    r.joints = rotation_about_vertical(deg * std::numbers::pi / 180.0) * p.joints;
    CHECK((normalize_pose3d(r, sk()).joints - a.joints).cwiseAbs().maxCoeff() <= 1e-6);
  }
  for (int t = 0; t < 200; ++t) {
    const Pose3D q = testing::random_body(1000 + t);
    Pose3D r = q;
    r.joints = (rotation_about_vertical(ang(rng)) * q.joints).colwise() + testing::random_vec(rng, 2000);
    CHECK((normalize_pose3d(r, sk()).joints - normalize_pose3d(q, sk()).joints).cwiseAbs().maxCoeff() <= 1e-6);
  }

  Pose3D bad = p;
  bad.joints.col(rh) = bad.joints.col(lh) + Vec3(0, 30, 0);
  CHECK_THROWS_WITH_AS(normalize_pose3d(bad, sk()), doctest::Contains("degenerate heading"), InputError);
}

TEST_CASE("virtual cameras") {
  const auto cams = virtual_cameras();
  REQUIRE(cams.size() == 144);
  CHECK(cams[1].azimuth_deg - cams[0].azimuth_deg == 15.0);
  for (const auto& c : cams) {
    CHECK(std::abs(c.view_direction().norm() - 1.0) <= 1e-12);
    CHECK(c.azimuth_deg >= 0.0);
    CHECK(c.azimuth_deg < 360.0);
    CHECK(c.elevation_deg >= 0.0);
    CHECK(c.elevation_deg <= 75.0);
  }
}

TEST_CASE("orthographic projection") {
  const NormalizedPose3D p = normalize_pose3d(testing::random_body(4), sk());
  const Pose2D front = project_orthographic(p, VirtualCamera{0.0, 0.0});
  CHECK((front.joints - p.joints.topRows<2>()).cwiseAbs().maxCoeff() <= 1e-12);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> az(0.0, 360.0), el(0.0, 90.0);
  for (int t = 0; t < 100; ++t) {
    const VirtualCamera cam{az(rng), el(rng)};
    const double a = cam.azimuth_deg * std::numbers::pi / 180.0;
    const double e = cam.elevation_deg * std::numbers::pi / 180.0;
    Mat3 ry, rx;
    ry << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
    rx << 1, 0, 0, 0, std::cos(e), -std::sin(e), 0, std::sin(e), std::cos(e);
    const Eigen::Matrix3Xd cam_pts = rx * ry * p.joints;
    const Pose2D out = project_orthographic(p, cam);
    CHECK((out.joints - cam_pts.topRows<2>()).cwiseAbs().maxCoeff() <= 1e-9);

    NormalizedPose3D pushed = p;
    pushed.joints.colwise() += 750.0 * cam.view_direction();
    CHECK((project_orthographic(pushed, cam).joints - out.joints).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("normalize_pose2d") {
  Pose2D p;
  p.joints.resize(2, 3);
  p.joints << 4, 8, 0, 0, 1, 2;
  const NormalizedPose2D n = normalize_pose2d(p);
  CHECK(n.joints(1, 0) == -1.0);
  CHECK(n.joints(1, 1) == 0.0);
  CHECK(n.joints(1, 2) == 1.0);
  CHECK(std::abs(n.joints.row(0).mean()) <= 1e-12);

  const NormalizedPose2D again = normalize_pose2d(Pose2D{n.joints, {}});
  CHECK((again.joints - n.joints).cwiseAbs().maxCoeff() <= 1e-12);

  std::mt19937_64 rng(6);
  for (int t = 0; t < 1000; ++t) {
    const NormalizedPose2D r = random_query(rng);
    CHECK(r.joints.row(1).minCoeff() == -1.0);
    CHECK(r.joints.row(1).maxCoeff() == 1.0);
    CHECK(std::abs(r.joints.row(0).mean()) <= 1e-12);
  }
  Pose2D flat;
  flat.joints = Eigen::Matrix2Xd::Zero(2, 4);
  flat.joints.row(0) << 1, 2, 3, 4;
  CHECK_THROWS_WITH_AS(normalize_pose2d(flat), doctest::Contains("degenerate pose"), InputError);
}

TEST_CASE("kd-tree agrees with brute force including ties") {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> coarse(0, 3);
  for (int t = 0; t < 50; ++t) {
    const int dim = 1 + t % 7;
    const int n = 1 + static_cast<int>(rng() % 400);
    std::vector<float> pts(static_cast<std::size_t>(n * dim));
    for (float& v : pts) v = static_cast<float>(coarse(rng));  // many exact ties
    const KdTree tree(pts, dim, 1 + t % 5);
    std::vector<double> q(static_cast<std::size_t>(dim));
    for (double& v : q) v = coarse(rng);
    const int k = 1 + static_cast<int>(rng() % 40);
    std::vector<std::pair<double, std::uint32_t>> expect;
    for (int i = 0; i < n; ++i) expect.emplace_back(KdTree::sq_distance(q, tree.point(i)), i);
    std::sort(expect.begin(), expect.end());
    expect.resize(std::min(n, k));
    const auto got = tree.knn(q, k);
    REQUIRE(got.size() == expect.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].id == expect[i].second);
      CHECK(got[i].sq_dist == expect[i].first);
    }
  }
}

TEST_CASE("index build, query and oracle") {
  const auto poses = bodies(10, 1);
  const auto cams = virtual_cameras();
  const MoCapIndex index = MoCapIndex::build(poses, cams, sk());
  for (JointSet s : kJointSets) CHECK(index.num_entries(s) == 1440);
  for (std::size_t i = 0; i < index.num_entries(JointSet::kAll); ++i) {
    const auto f = index.stored_feature(JointSet::kAll, i);
    float lo = 1e9f, hi = -1e9f;
    for (std::size_t d = 1; d < f.size(); d += 2) {
      lo = std::min(lo, f[d]);
      hi = std::max(hi, f[d]);
    }
    CHECK(std::abs(lo + 1.0f) <= 1e-6f);
    CHECK(std::abs(hi - 1.0f) <= 1e-6f);
  }

  // A stored projection retrieves itself first.
  const NormalizedPose2D self = normalize_pose2d(project_orthographic(index.pose(3), index.camera(17)));
  const KnnResult hit = knn_query(index, self, JointSet::kAll, 5);
  CHECK(hit.neighbors[0].pose_id == 3);
  CHECK(hit.neighbors[0].camera_id == 17);
  CHECK(hit.neighbors[0].distance <= 1e-6);

  std::mt19937_64 rng(3);
  for (int q = 0; q < 50; ++q) {
    const NormalizedPose2D query = random_query(rng);
    for (JointSet s : kJointSets) {
      const auto expect = linear_scan(index, query, s, 5);
      const KnnResult got = knn_query(index, query, s, 5);
      REQUIRE(got.neighbors.size() == 5);
      for (std::size_t i = 0; i < 5; ++i) {
        CHECK(got.neighbors[i].entry_id == expect[i].second);
        CHECK(got.neighbors[i].distance == expect[i].first);
        CHECK(got.neighbors[i].rank == static_cast<int>(i) + 1);
      }
    }
  }

  const KnnResult all = knn_query(index, self, JointSet::kUp, 5000);
  CHECK(all.truncated);
  CHECK(all.neighbors.size() == 1440);
  CHECK_THROWS_AS(knn_query(index, self, JointSet::kUp, 0), InputError);
  CHECK_THROWS_AS(MoCapIndex::build(std::vector<Pose3D>{}, cams, sk()), InputError);
}

TEST_CASE("joints outside a set do not change its results") {
  const MoCapIndex index = MoCapIndex::build(bodies(20, 2), virtual_cameras(), sk());
  std::mt19937_64 rng(12);
  for (JointSet s : {JointSet::kLt, JointSet::kRt, JointSet::kUp, JointSet::kLw}) {
    const NormalizedPose2D q = normalize_pose2d(project_orthographic(index.pose(5), index.camera(40)));
    const auto& member = sk().joints_in(s);
    NormalizedPose2D bent = q;
    for (int j = 0; j < 14; ++j) {
      if (std::find(member.begin(), member.end(), j) == member.end()) bent.joints.col(j) += Vec2(0.7, 0.3);
    }
    const auto a = knn_query(index, q, s, 32);
    const auto b = knn_query(index, bent, s, 32);
    for (std::size_t i = 0; i < a.neighbors.size(); ++i) {
      CHECK(a.neighbors[i].entry_id == b.neighbors[i].entry_id);
      CHECK(a.neighbors[i].distance == b.neighbors[i].distance);
    }
  }
}

TEST_CASE("index serialization is lossless and deterministic") {
  const auto poses = bodies(6, 3);
  const MoCapIndex a = MoCapIndex::build(poses, virtual_cameras(), sk());
  const MoCapIndex b = MoCapIndex::build(poses, virtual_cameras(), sk());
  std::ostringstream sa(std::ios::binary), sb(std::ios::binary);
  a.save(sa);
  b.save(sb);
  CHECK(sa.str() == sb.str());
  std::istringstream in(sa.str(), std::ios::binary);
  const MoCapIndex c = MoCapIndex::load(in, sk());
  std::ostringstream sc(std::ios::binary);
  c.save(sc);
  CHECK(sc.str() == sa.str());

  std::istringstream bad(std::string("XXXX") + sa.str().substr(4), std::ios::binary);
  CHECK_THROWS_WITH_AS(MoCapIndex::load(bad, sk()), doctest::Contains("magic"), InputError);
  std::istringstream cut(sa.str().substr(0, sa.str().size() / 2), std::ios::binary);
  CHECK_THROWS_AS(MoCapIndex::load(cut, sk()), InputError);
}
