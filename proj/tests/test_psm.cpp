#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "duallift/eval.hpp"
#include "duallift/lifter.hpp"
#include "duallift/psm.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace duallift;

using namespace testing;

TEST_CASE("eval_binary") {
  GmmBinary one;
  one.components.push_back({Vec2(3, -2), Eigen::Matrix2d::Identity(), Eigen::Matrix2d::Identity(), 0.7});
  CHECK(eval_binary(one, Vec2(13, 8), Vec2(10, 10)) == doctest::Approx(0.7).epsilon(1e-15));

  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 10.0);
  for (int t = 0; t < 500; ++t) {
    const GmmBinary b = random_binary(rng);
    const Vec2 xi(n(rng), n(rng)), xj(n(rng), n(rng)), shift(n(rng) * 40, n(rng) * 40);
    const Vec2 d = xi - xj;
    CHECK(eval_binary(b, xi, xj) == doctest::Approx(binary_oracle(b, d.x(), d.y())).epsilon(1e-12));
    const Vec2 xi2 = xi + shift, xj2 = xj + shift;
    if (xi2 - xj2 == d) CHECK(eval_binary(b, xi2, xj2) == eval_binary(b, xi, xj));
  }
  CHECK(eval_binary(one, Vec2(1e6, 0), Vec2(0, 0)) == 1e-300);
}

TEST_CASE("gmm fitting") {
  const std::vector<Vec2> same(40, Vec2(4, -7));
  const GmmBinary g = fit_gmm_binary(same, kRefineComponents, kDefaultAlpha, 3);
  REQUIRE(g.components.size() == 1);
  CHECK(g.components[0].mean == Vec2(4, -7));
  CHECK((g.components[0].covariance - Eigen::Matrix2d::Identity()).norm() <= 1e-12);
  CHECK(g.components[0].weight == doctest::Approx(1.0));

  const std::vector<Vec2> few{{0, 0}, {5, 5}, {9, 1}};
  const GmmBinary r = fit_gmm_binary(few, kInitialComponents, kDefaultAlpha, 1);
  CHECK(r.reduced);
  CHECK(r.components.size() == 3);

  // Three clusters 10 sigma apart.
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Vec2> pts;
  const std::array<Vec2, 3> centers{Vec2(0, 0), Vec2(10, 0), Vec2(0, 10)};
  const std::array<int, 3> sizes{50, 30, 20};
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < sizes[c]; ++i) pts.push_back(centers[c] + Vec2(n(rng), n(rng)));
  }
  std::vector<double> ref;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const GmmBinary a = fit_gmm_binary(pts, 3, kDefaultAlpha, seed);
    const GmmBinary b = fit_gmm_binary(pts, 3, kDefaultAlpha, seed);
    REQUIRE(a.components.size() == 3);
    std::vector<double> w;
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(a.components[k].mean == b.components[k].mean);
      CHECK(a.components[k].weight == b.components[k].weight);
      const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(a.components[k].covariance);
      CHECK(es.eigenvalues().minCoeff() > 0.0);
      w.push_back(a.components[k].weight);
    }
    std::sort(w.begin(), w.end());
    if (ref.empty()) ref = w;
    for (std::size_t k = 0; k < 3; ++k) CHECK(w[k] == doctest::Approx(ref[k]).epsilon(1e-12));
  }
  CHECK(ref[0] == doctest::Approx(std::pow(0.2, 0.1)));
  CHECK(ref[2] == doctest::Approx(std::pow(0.5, 0.1)));
}

TEST_CASE("unary maps") {
  UnaryMap m;
  m.width = 3;
  m.height = 2;
  m.grids = {std::vector<float>(6, 0.5f)};
  CHECK_NOTHROW(check_unary_map(m));
  m.grids[0][2] = -1.0f;
  CHECK_THROWS_AS(check_unary_map(m), InputError);
  m.grids[0].assign(6, 0.0f);
  CHECK_THROWS_AS(check_unary_map(m), InputError);

  std::mt19937_64 rng(5);
  const UnaryMap r = random_map(rng, 3, 7, 5, 2.5);
  std::ostringstream out(std::ios::binary);
  save_unary_map(out, r);
  std::istringstream in(out.str(), std::ios::binary);
  const UnaryMap back = load_unary_map(in);
  CHECK(back.width == 7);
  CHECK(back.stride == 2.5);
  CHECK(back.grids == r.grids);
  CHECK(back.provenance == UnaryMap::Provenance::kLoaded);
  std::istringstream cut(out.str().substr(0, 30), std::ios::binary);
  CHECK_THROWS_AS(load_unary_map(cut), InputError);

  CHECK(r.sample(1, Vec2(5.0, 2.5)) == doctest::Approx(r.at(1, 2, 1)));
  CHECK(r.sample(1, Vec2(-10.0, 0.0)) == 0.0);
}

TEST_CASE("synthesized unaries peak at the joints") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(20.0, 600.0);
  Pose2D p;
  p.joints.resize(2, 14);
  for (int j = 0; j < 14; ++j) p.joints.col(j) = Vec2(u(rng), u(rng) * 0.75);
  UnarySynthesis spec;
  spec.sigma_px = 0.0;
  const UnaryMap splat = synthesize_unaries(p, spec);
  spec.sigma_px = 2.0;
  const UnaryMap gauss = synthesize_unaries(p, spec);
  for (int j = 0; j < 14; ++j) {
    CHECK((unary_peaks(splat, j, 1).front().position - p.joints.col(j)).norm() <= 1e-4);
    CHECK((unary_peaks(gauss, j, 1).front().position - p.joints.col(j)).norm() <= 1e-3);
    CHECK(gauss.sample_smooth(j, p.joints.col(j)) == doctest::Approx(1.0 + spec.floor).epsilon(0.05));
  }
}

TEST_CASE("infer_map small cases") {
  std::mt19937_64 rng(3);
  const UnaryMap m = random_map(rng, 2, 6, 4, 1.0);
  PsmModel single{{-1}, {GmmBinary{}}};
  UnaryMap m1 = m;
  m1.grids.resize(1);
  CandidateLists all_cells(1);
  float best = -1.0f;
  Vec2 arg;
  for (int v = 0; v < 4; ++v) {
    for (int u = 0; u < 6; ++u) {
      all_cells[0].push_back(Vec2(u, v));
      if (m1.at(0, u, v) > best) {
        best = m1.at(0, u, v);
        arg = Vec2(u, v);
      }
    }
  }
  CHECK(infer_map(single, m1, all_cells).pose.joints.col(0) == arg);

  UnaryMap hot;
  hot.width = 6;
  hot.height = 4;
  hot.grids.assign(2, std::vector<float>(24, 0.0f));
  hot.grids[0][1 * 6 + 4] = 1.0f;
  hot.grids[1][3 * 6 + 0] = 1.0f;
  GmmBinary flat;
  flat.components.push_back({Vec2::Zero(), Eigen::Matrix2d::Identity(), Eigen::Matrix2d::Zero(), 1.0});
  const PsmModel chain{{-1, 0}, {GmmBinary{}, flat}};
  CandidateLists cells(2, all_cells[0]);
  const PsmInference r = infer_map(chain, hot, cells);
  CHECK(r.pose.joints.col(0) == Vec2(4, 1));
  CHECK(r.pose.joints.col(1) == Vec2(0, 3));

  CandidateLists dead{{Vec2(4, 1)}, {Vec2(5, 0)}};
  CHECK_THROWS_WITH_AS(infer_map(chain, hot, dead), doctest::Contains("dead joint"), EstimationError);
}

TEST_CASE("infer_map equals exhaustive enumeration on a full 5x5 grid") {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 5; ++t) {
    const PsmModel model = random_tree(rng, 3);
    const UnaryMap map = random_map(rng, 3, 5, 5, 3.0);
    CandidateLists cand(3);
    for (auto& c : cand) {
      for (int v = 0; v < 5; ++v) {
        for (int u = 0; u < 5; ++u) c.push_back(map.cell_position(u, v));
      }
    }
    const Brute b = enumerate(model, map, cand);
    const PsmInference r = infer_map(model, map, cand);
    CHECK(r.choice == b.choice);
    CHECK(std::abs(r.log_score - b.score) <= 1e-9 * std::max(1.0, std::abs(b.score)));
  }
}

TEST_CASE("infer_map equals exhaustive enumeration on random trees") {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> pos(0.0, 36.0);
  for (int t = 0; t < 200; ++t) {
    const int n = 1 + t % 4;
    const PsmModel model = random_tree(rng, n);
    const UnaryMap map = random_map(rng, n, 10, 10, 4.0);
    CandidateLists cand(static_cast<std::size_t>(n));
    for (auto& c : cand) {
      const int k = 1 + static_cast<int>(rng() % 10);
      for (int i = 0; i < k; ++i) c.push_back(Vec2(pos(rng), pos(rng)));
    }
    const Brute b = enumerate(model, map, cand);
    const PsmInference r = infer_map(model, map, cand);
    CHECK(r.choice == b.choice);
    CHECK(std::abs(r.log_score - b.score) <= 1e-9 * std::max(1.0, std::abs(b.score)));
  }
}

TEST_CASE("fitted model follows the skeleton") {
  const Skeleton& s = default_skeleton();
  std::vector<Pose2D> poses;
  CameraModel cam;
  cam.translation = Vec3(0, 0, 5000);
  for (int i = 0; i < 60; ++i) poses.push_back(project_pose(cam, testing::random_body(i).joints));
  const PsmModel m = fit_psm_model(poses, s, kInitialComponents, kDefaultAlpha, 1);
  CHECK(m.root() == s.root);
  for (const auto& [c, p] : s.edges) {
    CHECK(m.parent[c] == p);
    CHECK(static_cast<int>(m.binary[c].components.size()) <= kInitialComponents);
    for (const auto& g : m.binary[c].components) CHECK(g.weight > 0.0);
  }
  const auto order = m.topological_order();
  std::vector<int> seen(14, 0);
  for (int j : order) {
    if (m.parent[j] >= 0) CHECK(seen[m.parent[j]] == 1);
    seen[j] = 1;
  }
}

namespace {

struct CorruptScene {
  Pose2D gt;
  UnaryMap unaries;
};

CorruptScene left_arm_scene() {
  const Skeleton& s = default_skeleton();
  ScenarioSpec spec;
  spec.corruption.joints = {s.joint_index("l_elbow"), s.joint_index("l_wrist")};
  spec.corruption.offset_px = Vec2(50, 0);
  const Scenario sc = render_scenario(testing::random_body(77), spec, 5, s);
  return {sc.gt_2d, sc.unaries};
}

std::vector<Pose2D> jittered(const Pose2D& base, double scale, double sigma, std::uint64_t seed, int count) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  const Vec2 c = base.joints.rowwise().mean();
  std::vector<Pose2D> out;
  for (int k = 0; k < count; ++k) {
    Pose2D p = base;
    for (int j = 0; j < p.num_joints(); ++j) {
      p.joints.col(j) = c + scale * (base.joints.col(j) - c) + Vec2(n(rng), n(rng));
    }
    out.push_back(p);
  }
  return out;
}

}  // namespace

TEST_CASE("refine_pose consensus") {
  const CorruptScene sc = left_arm_scene();
  std::array<std::vector<Pose2D>, 5> proj;
  Pose2D arg = sc.gt;
  for (int j = 0; j < 14; ++j) arg.joints.col(j) = unary_peaks(sc.unaries, j, 1).front().position;
  for (auto& p : proj) p.assign(8, arg);
  const RefineResult r = refine_pose(sc.unaries, proj, default_skeleton(), kRefineComponents, kDefaultAlpha, 1);
  CHECK(r.set == JointSet::kAll);
  CHECK((r.pose.joints - arg.joints).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("refine_pose prefers the set that avoids corrupted joints") {
  const Skeleton& s = default_skeleton();
  const CorruptScene sc = left_arm_scene();
  std::array<std::vector<Pose2D>, 5> proj;
  for (JointSet js : kJointSets) {
    const bool right = js == JointSet::kRt;
    proj[static_cast<std::size_t>(js)] = jittered(sc.gt, right ? 1.0 : 1.2, 1.0, 10 + static_cast<int>(js), 24);
  }
  const RefineResult r = refine_pose(sc.unaries, proj, s, kRefineComponents, kDefaultAlpha, 4);
  CHECK(r.set == JointSet::kRt);
  for (int j : s.joints_in(JointSet::kRt)) CHECK((r.pose.joints.col(j) - sc.gt.joints.col(j)).norm() <= 2.0);
}

TEST_CASE("refine_pose picks the highest evaluated score") {
  const CorruptScene sc = left_arm_scene();
  std::mt19937_64 rng(9);
  for (int t = 0; t < 20; ++t) {
    std::array<std::vector<Pose2D>, 5> proj;
    for (std::size_t k = 0; k < 5; ++k) {
      if (rng() % 4 == 0) continue;
      proj[k] = jittered(sc.gt, 0.9 + 0.05 * static_cast<double>(rng() % 5), 3.0, rng(), 10);
    }
    if (std::all_of(proj.begin(), proj.end(), [](const auto& v) { return v.empty(); })) continue;
    const RefineResult r = refine_pose(sc.unaries, proj, default_skeleton(), kRefineComponents, kDefaultAlpha, t);
    const auto chosen = static_cast<std::size_t>(r.set);
    CHECK(r.evaluated[chosen]);
    for (std::size_t k = 0; k < 5; ++k) {
      CHECK(r.evaluated[k] == !proj[k].empty());
      if (r.evaluated[k]) CHECK(r.log_scores[k] <= r.log_scores[chosen]);
    }
  }
}
