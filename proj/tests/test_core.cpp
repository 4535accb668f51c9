#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "duallift/pose_io.hpp"
#include "duallift/skeleton.hpp"
#include "support.hpp"

using namespace duallift;

namespace {

bool has_violation(const ValidationReport& r, const std::string& needle) {
  for (const auto& v : r.violations) {
    if (v.find(needle) != std::string::npos) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("default skeleton validates and matches the shipped file") {
  const Skeleton& s = default_skeleton();
  CHECK(validate_skeleton(s).ok());
  CHECK(s.num_joints() == 14);
  CHECK(s.joints_in(JointSet::kAll).size() == 14);
  const Skeleton f = load_skeleton(std::string(DUALLIFT_DATA_DIR) + "/skeleton14.txt");
  CHECK(skeleton_to_text(f) == skeleton_to_text(s));
  std::istringstream in(skeleton_to_text(s));
  CHECK(skeleton_to_text(parse_skeleton(in)) == skeleton_to_text(s));
}

TEST_CASE("joint set labels round-trip") {
  for (JointSet js : kJointSets) CHECK(joint_set_from_string(to_string(js)) == js);
  CHECK_THROWS_AS(joint_set_from_string("torso"), InputError);
}

TEST_CASE("validation rejects cycles, missing sets and deleted edges") {
  Skeleton cyc = default_skeleton();
  cyc.edges.push_back({cyc.joint_index("l_wrist"), cyc.joint_index("r_wrist")});
  CHECK(has_violation(validate_skeleton(cyc), "not a tree"));

  Skeleton no_all = default_skeleton();
  no_all.joint_sets.erase("all");
  CHECK(has_violation(validate_skeleton(no_all), "missing joint set"));

  for (int e = 0; e < default_skeleton().num_edges(); ++e) {
    Skeleton s = default_skeleton();
    s.edges.erase(s.edges.begin() + e);
    CHECK_FALSE(validate_skeleton(s).ok());
  }
}

TEST_CASE("limb lengths") {
  Skeleton two;
  two.id = "two";
  two.joint_names = {"a", "b"};
  two.edges = {{1, 0}};
  two.root = 0;
  two.left_hip = 0;
  two.right_hip = 1;
  Pose3D p{"two", Eigen::Matrix3Xd::Zero(3, 2)};
  p.joints(2, 1) = 1.0;
  CHECK(limb_lengths(p, two)(0) == 1.0);

  const Skeleton& s = default_skeleton();
  std::mt19937_64 rng(11);
  for (int t = 0; t < 50; ++t) {
    Pose3D q{s.id, testing::random_points(rng, 14, 300.0)};
    const Eigen::VectorXd l = limb_lengths(q, s);
    for (int e = 0; e < s.num_edges(); ++e) {
      const auto [c, par] = s.edges[static_cast<std::size_t>(e)];
      const double dx = q.joints(0, c) - q.joints(0, par);
      const double dy = q.joints(1, c) - q.joints(1, par);
      const double dz = q.joints(2, c) - q.joints(2, par);
      CHECK(l(e) == doctest::Approx(std::sqrt(dx * dx + dy * dy + dz * dz)).epsilon(1e-14));
    }
    Pose3D moved{s.id, (testing::random_rotation(rng) * q.joints).colwise() + testing::random_vec(rng, 1e3)};
    const Eigen::VectorXd lm = limb_lengths(moved, s);
    for (int e = 0; e < l.size(); ++e) CHECK(std::abs(lm(e) - l(e)) <= 1e-9 * l(e));
  }
  Pose3D bad{s.id, Eigen::Matrix3Xd::Zero(3, 5)};
  CHECK_THROWS_AS(limb_lengths(bad, s), InputError);
}

TEST_CASE("retarget maps") {
  const Skeleton& s = default_skeleton();
  std::vector<std::pair<Pose3D, Pose3D>> same, scaled;
  std::mt19937_64 rng(8);
  for (int i = 0; i < 30; ++i) {
    // Random orientations so every joint moves in all three axes.
    Pose3D p = testing::random_body(500 + i);
    p.joints = (testing::random_rotation(rng) * p.joints).colwise() + testing::random_vec(rng, 100.0);
    same.emplace_back(p, p);
    const Vec3 root = body_root(p, s);
    scaled.emplace_back(p, Pose3D{s.id, ((p.joints.colwise() - root) * 0.9).colwise() + root});
  }
  const RetargetMap id = fit_retarget_map(same, 0.0, s, s);
  for (int j = 0; j < 14; ++j) {
    CHECK((id.linear[j] - Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(id.offset[j].norm() <= 1e-6);
  }
  const RetargetMap m = fit_retarget_map(scaled, 0.0, s, s);
  for (int j = 0; j < 14; ++j) CHECK((m.linear[j] - 0.9 * Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-6);
  for (const auto& [src, tgt] : scaled) {
    const Pose3D out = apply_retarget(m, src, s);
    CHECK((out.joints - tgt.joints).norm() <= 1e-6 * tgt.joints.norm());
    const Eigen::VectorXd ratio = limb_lengths(out, s).cwiseQuotient(limb_lengths(src, s));
    CHECK((ratio.array() - 0.9).abs().maxCoeff() <= 1e-6);
  }
  // Round trip through a fitted inverse.
  std::vector<std::pair<Pose3D, Pose3D>> back;
  for (const auto& [src, tgt] : scaled) back.emplace_back(apply_retarget(m, src, s), src);
  const RetargetMap inv = fit_retarget_map(back, 0.0, s, s);
  for (const auto& [src, tgt] : scaled) {
    const Pose3D rt = apply_retarget(inv, apply_retarget(m, src, s), s);
    CHECK((rt.joints - src.joints).cwiseAbs().maxCoeff() <= inv.fit_residual_rms + 1e-6);
  }
  const Pose3D p = testing::random_body(3);
  CHECK(apply_retarget(RetargetMap::identity(s), p, s).joints == p.joints);
  CHECK_THROWS_WITH_AS(fit_retarget_map(std::span(same).first(1), 0.0, s, s),
                       doctest::Contains("insufficient pairs"), InputError);
}

TEST_CASE("deduplicate") {
  const Skeleton& s = default_skeleton();
  const Pose3D p = testing::random_body(1);
  std::vector<Pose3D> ten(10, p);
  CHECK(deduplicate(ten, kDefaultDedupMm, s).size() == 1);

  Pose3D q = p;
  q.joints.row(0).array() += 10.0;  // root-centering removes pure shifts
  q.joints(1, 0) += 140.0;          // one joint 140 mm away, mean 10 mm
  const std::vector<Pose3D> two{p, q};
  CHECK(deduplicate(two, 1.5, s).size() == 2);

  std::vector<Pose3D> mixed;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    Pose3D r = testing::random_body(static_cast<std::uint64_t>(i % 20));
    for (int j = 0; j < 14; ++j) r.joints.col(j) += Vec3(n(rng), n(rng), n(rng));
    mixed.push_back(r);
  }
  const auto once = deduplicate(mixed, 1.5, s);
  const auto twice = deduplicate(once, 1.5, s);
  REQUIRE(once.size() == twice.size());
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(once[i].joints == twice[i].joints);

  // Oracle: quadratic greedy scan.
  std::vector<std::size_t> expect;
  for (std::size_t i = 0; i < mixed.size(); ++i) {
    const Pose3D a = root_centered(mixed[i], s);
    bool dup = false;
    for (std::size_t k : expect) {
      const Pose3D b = root_centered(mixed[k], s);
      if ((a.joints - b.joints).colwise().norm().mean() < 1.5) dup = true;
    }
    if (!dup) expect.push_back(i);
  }
  CHECK(deduplicate_indices(mixed, 1.5, s) == expect);
}

TEST_CASE("pose files") {
  const Skeleton& s = default_skeleton();
  std::vector<PoseRecord> recs{{"a", testing::random_body(1)}, {"b", testing::random_body(2)}};
  std::ostringstream out;
  write_pose_jsonl(out, recs);
  std::istringstream in(out.str());
  const auto back = read_pose_jsonl(in, s.num_joints());
  REQUIRE(back.size() == 2);
  CHECK(back[1].id == "b");
  CHECK((back[1].pose.joints - recs[1].pose.joints).cwiseAbs().maxCoeff() <= 1e-9);

  std::istringstream broken("{\"id\": \"a\", \"joints_mm\": [\n");
  CHECK_THROWS_WITH_AS(read_pose_jsonl(broken, 14), doctest::Contains("line 1"), InputError);

  std::ostringstream csv;
  csv << "id";
  for (int j = 0; j < 14; ++j) csv << ",j" << j << "x,j" << j << "y,j" << j << "z";
  csv << "\np";
  for (int j = 0; j < 42; ++j) csv << "," << j;
  csv << "\n";
  std::istringstream cin(csv.str());
  const auto c = read_pose_csv(cin, 14);
  REQUIRE(c.size() == 1);
  CHECK(c[0].pose.joints(2, 13) == 41.0);
}

TEST_CASE("split_seed gives distinct streams") {
  CHECK(split_seed(1, 0) != split_seed(1, 1));
  CHECK(split_seed(1, 0) != split_seed(2, 0));
  CHECK(split_seed(7, 3) == split_seed(7, 3));
}
