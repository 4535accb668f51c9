#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "duallift/eval.hpp"
#include "support.hpp"

using namespace duallift;

namespace {

const Skeleton& sk() { return default_skeleton(); }

// Quaternion (Horn) solution of the absolute orientation problem.
Mat3 horn_rotation(const Eigen::Matrix3Xd& est, const Eigen::Matrix3Xd& gt) {
  const Eigen::Matrix3Xd a = est.colwise() - est.rowwise().mean();
  const Eigen::Matrix3Xd b = gt.colwise() - gt.rowwise().mean();
  const Mat3 m = a * b.transpose();
  const double sxx = m(0, 0), sxy = m(0, 1), sxz = m(0, 2);
  const double syx = m(1, 0), syy = m(1, 1), syz = m(1, 2);
  const double szx = m(2, 0), szy = m(2, 1), szz = m(2, 2);
  Eigen::Matrix4d n;
  n << sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
       syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
       szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
       sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz;
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(n);
  const Eigen::Vector4d q = es.eigenvectors().col(3);
  return Eigen::Quaterniond(q(0), q(1), q(2), q(3)).toRotationMatrix();
}

double horn_error(const Eigen::Matrix3Xd& est, const Eigen::Matrix3Xd& gt) {
  const Mat3 r = horn_rotation(est, gt);
  const Eigen::Matrix3Xd moved =
      (r * (est.colwise() - est.rowwise().mean())).colwise() + Vec3(gt.rowwise().mean());
  double s = 0.0;
  for (Eigen::Index j = 0; j < gt.cols(); ++j) s += (moved.col(j) - gt.col(j)).norm();
  return s / static_cast<double>(gt.cols());
}

}  // namespace

TEST_CASE("rigid alignment") {
  const Eigen::Matrix3Xd gt = testing::random_body(1).joints;
  const RigidTransform id = rigid_align(gt, gt);
  CHECK((id.rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK(id.translation.norm() <= 1e-9);
  CHECK(pose_error_3d(gt, gt) <= 1e-12);

  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 20.0);
  for (int t = 0; t < 500; ++t) {
    const Eigen::Matrix3Xd g = testing::random_body(100 + t).joints;
    const Mat3 r0 = testing::random_rotation(rng);
    const Vec3 t0 = testing::random_vec(rng, 3000.0);
    const Eigen::Matrix3Xd est = (r0 * g).colwise() + t0;
    const RigidTransform a = rigid_align(est, g);
    CHECK((a.apply(est) - g).colwise().norm().maxCoeff() <= 1e-9);
    CHECK((a.rotation - r0.transpose()).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK(pose_error_3d(est, g) <= 1e-9);

    Eigen::Matrix3Xd noisy = est;
    for (Eigen::Index k = 0; k < noisy.size(); ++k) noisy.data()[k] += n(rng);
    const double e = pose_error_3d(noisy, g);
    CHECK(std::abs(e - horn_error(noisy, g)) <= 1e-9);
    CHECK(std::abs(e - pose_error_3d(g, noisy)) <= 1e-9);
    CHECK(rigid_align(noisy, g).rotation.determinant() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("alignment never reflects") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int t = 0; t < 1000; ++t) {
    Eigen::Matrix3Xd a = testing::random_points(rng, 14, 300.0);
    a.row(2) *= 1e-6;  // nearly planar
    Eigen::Matrix3Xd b = a;
    b.row(0) *= -1.0;  // mirror image
    for (Eigen::Index k = 0; k < b.size(); ++k) b.data()[k] += n(rng);
    CHECK(rigid_align(a, b).rotation.determinant() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("a displaced joint") {
  const Eigen::Matrix3Xd gt = testing::random_body(5).joints;
  Eigen::Matrix3Xd est = gt;
  est(2, 4) += 14.0;
  const double e = pose_error_3d(est, gt);
  CHECK(std::abs(e - horn_error(est, gt)) <= 1e-9);
  CHECK(e > 0.0);
  // Least squares spreads the displacement, so the squared residual drops.
  const RigidTransform a = rigid_align(est, gt);
  CHECK((a.apply(est) - gt).squaredNorm() <= 14.0 * 14.0 + 1e-9);
}

TEST_CASE("alignment rejects collinear joints") {
  Eigen::Matrix3Xd line(3, 5);
  for (int j = 0; j < 5; ++j) line.col(j) = Vec3(j, 2.0 * j, 0.5 * j);
  CHECK_THROWS_AS(rigid_align(line, line), InputError);
}

TEST_CASE("2d error") {
  Pose2D a, b;
  a.joints = Eigen::Matrix2Xd::Random(2, 14) * 100.0;
  b.joints = a.joints;
  CHECK(pose_error_2d(a, b) == 0.0);
  b.joints.row(0).array() += 3.0;
  b.joints.row(1).array() += 4.0;
  CHECK(pose_error_2d(a, b) == doctest::Approx(5.0).epsilon(1e-12));
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 5.0);
  for (Eigen::Index k = 0; k < b.joints.size(); ++k) b.joints.data()[k] = a.joints.data()[k] + n(rng);
  double s = 0.0;
  for (int j = 0; j < 14; ++j) s += std::hypot(a.joints(0, j) - b.joints(0, j), a.joints(1, j) - b.joints(1, j));
  CHECK(pose_error_2d(a, b) == doctest::Approx(s / 14.0).epsilon(1e-12));
}

TEST_CASE("synthetic bodies") {
  const Pose3D p = testing::random_body(9);
  CHECK(validate_skeleton(sk()).ok());
  CHECK(body_root(p, sk()).norm() <= 1e-9);
  const double height = p.joints.row(1).maxCoeff() - p.joints.row(1).minCoeff();
  CHECK(height > 1000.0);
  CHECK(height < 2100.0);
  const BodyAngles base = sample_body_angles(3);
  CHECK(static_cast<int>(base.angles.size()) == num_body_angles());
  CHECK(perturb_body_angles(base, 0.0, 1).angles == base.angles);
}

TEST_CASE("scenario generation") {
  ScenarioSpec spec;
  spec.database.size = 200;
  spec.database.seed_poses = 20;
  spec.unaries.sigma_px = 0.0;
  const ScenarioBundle a = generate_scenario(spec, sk());
  const ScenarioBundle b = generate_scenario(spec, sk());
  CHECK(a.scene.gt.joints == b.scene.gt.joints);
  CHECK(a.scene.unaries.grids == b.scene.unaries.grids);
  REQUIRE(a.database.size() == b.database.size());
  for (std::size_t i = 0; i < a.database.size(); ++i) CHECK(a.database[i].joints == b.database[i].joints);

  for (int j = 0; j < 14; ++j) {
    CHECK((unary_peaks(a.scene.unaries, j, 1).front().position - a.scene.gt_2d.joints.col(j)).norm() <= 1e-4);
  }
  const Pose2D reproj = project_pose(a.scene.camera, a.scene.gt_body.joints);
  CHECK((reproj.joints - a.scene.gt_2d.joints).cwiseAbs().maxCoeff() <= 1e-9);

  double min_in = 1e300;
  for (const auto& d : a.database) min_in = std::min(min_in, (d.joints - a.scene.gt_body.joints).norm());
  CHECK(min_in == 0.0);

  spec.database.include_gt = false;
  spec.database.perturbation_mm = 30.0;
  const ScenarioBundle c = generate_scenario(spec, sk());
  double min_out = 1e300;
  for (const auto& d : c.database) min_out = std::min(min_out, (d.joints - c.scene.gt_body.joints).norm());
  CHECK(min_out > 0.0);

  spec.seed = 99;
  CHECK(generate_scenario(spec, sk()).scene.gt.joints != c.scene.gt.joints);
}

TEST_CASE("experiments and reports") {
  ScenarioSpec spec;
  spec.database.size = 300;
  spec.database.seed_poses = 20;
  const Benchmark bench = make_benchmark(spec, 2, sk());
  const std::vector<SweepCell> one{{"default", EnergyParams{}}};
  Benchmark single = bench;
  single.scenes.resize(1);
  const Report r1 = run_experiment(single, one, sk(), 1);
  REQUIRE(r1.rows.size() == 1);
  CHECK(r1.rows[0].ok);
  CHECK(std::isfinite(r1.rows[0].err3d_mm));

  const auto cells = parse_sweep("iterations=1,2", EnergyParams{});
  REQUIRE(cells.size() == 2);
  CHECK(cells[0].params.iterations == 1);
  CHECK(cells[1].name == "iterations=2");
  const Report a = run_experiment(bench, cells, sk(), 3);
  const Report b = run_experiment(bench, cells, sk(), 1);
  CHECK(a.csv() == b.csv());
  CHECK(a.json() == b.json());
  const auto sum = a.summarize();
  REQUIRE(sum.size() == 2);
  CHECK(sum[0].n_ok == 2);

  std::istringstream in(a.csv());
  Report back = read_report_csv(in);
  back.config_json = a.config_json;
  CHECK(back.curves_tsv() == a.curves_tsv());
  CHECK(back.json() == a.json());

  CHECK_THROWS_AS(parse_sweep("iterations", EnergyParams{}), InputError);
  CHECK_THROWS_AS(parse_sweep("bogus=1", EnergyParams{}), InputError);
  CHECK_THROWS_AS(parse_sweep("K_w=500", EnergyParams{}), InputError);
}

TEST_CASE("failed scenes are recorded") {
  ScenarioSpec spec;
  spec.database.size = 100;
  spec.database.seed_poses = 10;
  Benchmark bench = make_benchmark(spec, 2, sk());
  for (auto& g : bench.scenes[1].unaries.grids) std::fill(g.begin(), g.end(), 0.0f);
  const std::vector<SweepCell> one{{"default", EnergyParams{}}};
  const Report r = run_experiment(bench, one, sk(), 2);
  CHECK(r.rows[0].ok);
  CHECK_FALSE(r.rows[1].ok);
  CHECK_FALSE(r.rows[1].error.empty());
  CHECK(r.summarize()[0].n_failed == 1);
}
