#pragma once

#include <random>

#include <Eigen/Geometry>

#include "duallift/eval.hpp"
#include "duallift/skeleton.hpp"

namespace testing {

using duallift::Mat3;
using duallift::Vec3;

inline Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized().toRotationMatrix();
}

inline Vec3 random_vec(std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  return {n(rng), n(rng), n(rng)};
}

inline Eigen::Matrix3Xd random_points(std::mt19937_64& rng, int n, double scale) {
  Eigen::Matrix3Xd p(3, n);
  for (int j = 0; j < n; ++j) p.col(j) = random_vec(rng, scale);
  return p;
}

// Plausible standing body from the synthetic articulated model.
inline duallift::Pose3D random_body(std::uint64_t seed) {
  return duallift::articulate(duallift::sample_body_angles(seed), duallift::default_skeleton());
}

}  // namespace testing
