#include "duallift/lifter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "duallift/logging.hpp"

namespace duallift {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kMinDepth = 1e-6;

double root4(double s, double eps) { return std::pow(s + eps, 0.25); }
// d/ds (s + eps)^(1/4)
double droot4(double s, double eps) { return 0.25 * std::pow(s + eps, -0.75); }

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

Mat3 exp_so3(const Vec3& w) {
  const double a = w.norm();
  if (a < 1e-300) return Mat3::Identity();
  return Eigen::AngleAxisd(a, w / a).toRotationMatrix();
}

// Image position and its Jacobian with respect to the camera-frame point.
struct Projection {
  Vec2 uv;
  Eigen::Matrix<double, 2, 3> d_dp;
};

Projection project_point(const Intrinsics& k, const Vec3& p) {
  const double iz = 1.0 / p.z();
  Projection out;
  out.uv = {k.fx * p.x() * iz + k.cx, k.fy * p.y() * iz + k.cy};
  out.d_dp << k.fx * iz, 0.0, -k.fx * p.x() * iz * iz, 0.0, k.fy * iz, -k.fy * p.y() * iz * iz;
  return out;
}

// Accumulates the majorizer of sum_b w_b (|r_b|^2 + eps)^(1/4) around the
// current point: a weighted least-squares problem.
struct Majorizer {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  double eps;

  Majorizer(int n, double eps_) : H(Eigen::MatrixXd::Zero(n, n)), g(Eigen::VectorXd::Zero(n)), eps(eps_) {}

  template <class R, class J>
  void add(double weight, const R& r, const J& jac) {
    const double c = weight * droot4(r.squaredNorm(), eps);
    H.noalias() += c * jac.transpose() * jac;
    g.noalias() += c * jac.transpose() * r;
  }
};

struct SolverStats {
  double energy = kInf;
  int iterations = 0;
};

// Levenberg-Marquardt on successive majorizers; a step is kept only if it
// lowers the true objective.
template <class State, class Objective, class Linearize, class Retract>
State robust_minimize(State state, int n, Objective&& objective, Linearize&& linearize,
                      Retract&& retract, const EnergyParams& params, SolverStats& stats) {
  double f = objective(state);
  stats.energy = f;
  if (!std::isfinite(f)) return state;
  double lambda = 1e-4;
  for (stats.iterations = 0; stats.iterations < params.max_iterations; ++stats.iterations) {
    Majorizer m(n, params.root_eps);
    linearize(state, m);
    if (2.0 * m.g.norm() < params.gradient_tolerance) break;
    const double diag_floor = 1e-12 * std::max(1.0, m.H.diagonal().maxCoeff());
    bool accepted = false;
    double decrease = 0.0;
    while (lambda < 1e16) {
      Eigen::MatrixXd a = m.H;
      a.diagonal().array() += lambda * (m.H.diagonal().array() + diag_floor);
      const Eigen::VectorXd delta = a.ldlt().solve(-m.g);
      if (!delta.allFinite()) {
        lambda *= 4.0;
        continue;
      }
      State cand = retract(state, delta);
      const double fc = objective(cand);
      if (std::isfinite(fc) && fc < f) {
        decrease = f - fc;
        state = std::move(cand);
        f = fc;
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        break;
      }
      lambda *= 4.0;
    }
    if (!accepted || decrease <= 1e-13 * f) break;
  }
  stats.energy = f;
  return state;
}

Eigen::VectorXd limb_lengths_of(const Eigen::Matrix3Xd& X, const Skeleton& skeleton) {
  Eigen::VectorXd out(skeleton.num_edges());
  for (int e = 0; e < skeleton.num_edges(); ++e) {
    const auto [c, p] = skeleton.edges[static_cast<std::size_t>(e)];
    out[e] = (X.col(c) - X.col(p)).norm();
  }
  return out;
}

// Sum of squared reprojection errors over the joints, +inf if any joint is
// at or behind the camera.
double reprojection_sq(const Mat3& R, const Vec3& t, const Intrinsics& k, const Eigen::Matrix3Xd& X,
                       std::span<const int> joints, const Pose2D& x) {
  double s = 0.0;
  for (int j : joints) {
    const Vec3 p = R * X.col(j) + t;
    if (!(p.z() > kMinDepth)) return kInf;
    s += (project_point(k, p).uv - x.joints.col(j)).squaredNorm();
  }
  return s;
}

struct CameraState {
  Mat3 R;
  Vec3 t;
};

double extent_y(const Eigen::Matrix3Xd& pts) {
  return pts.row(1).maxCoeff() - pts.row(1).minCoeff();
}

CameraState initial_camera(const Mat3& R0, const Eigen::Matrix3Xd& X, std::span<const int> joints,
                           const Pose2D& x, const Intrinsics& k) {
  Eigen::Matrix3Xd rotated(3, static_cast<Eigen::Index>(joints.size()));
  Eigen::Matrix2Xd image(2, static_cast<Eigen::Index>(joints.size()));
  for (std::size_t i = 0; i < joints.size(); ++i) {
    rotated.col(static_cast<Eigen::Index>(i)) = R0 * X.col(joints[i]);
    image.col(static_cast<Eigen::Index>(i)) = x.joints.col(joints[i]);
  }
  double h3 = extent_y(rotated);
  double h2 = image.row(1).maxCoeff() - image.row(1).minCoeff();
  if (!(h3 > 1e-9) || !(h2 > 1e-9)) {
    h3 = std::max(h3, rotated.topRows(2).rowwise().maxCoeff().maxCoeff() -
                          rotated.topRows(2).rowwise().minCoeff().minCoeff());
    h2 = std::max(h2, (image.rowwise().maxCoeff() - image.rowwise().minCoeff()).maxCoeff());
  }
  const double depth = (h3 > 1e-9 && h2 > 1e-9) ? k.fy * h3 / h2 : 5000.0;
  const Vec2 c2 = image.rowwise().mean();
  const Vec3 c3 = rotated.rowwise().mean();
  const Vec3 target(depth * (c2.x() - k.cx) / k.fx, depth * (c2.y() - k.cy) / k.fy, depth);
  return {R0, target - c3};
}

}  // namespace

void check_intrinsics(const Intrinsics& k) {
  if (!(k.fx > 0.0) || !(k.fy > 0.0) || !std::isfinite(k.fx) || !std::isfinite(k.fy) ||
      !std::isfinite(k.cx) || !std::isfinite(k.cy)) {
    throw InputError("intrinsics: focal lengths must be positive and all values finite");
  }
}

Mat3 CameraModel::rotation_matrix() const { return exp_so3(rotation); }

Vec3 axis_angle(const Mat3& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.axis() * aa.angle();
}

Pose2D project_pose(const CameraModel& cam, const Eigen::Matrix3Xd& joints) {
  const Mat3 R = cam.rotation_matrix();
  Pose2D out;
  out.joints.resize(2, joints.cols());
  for (Eigen::Index j = 0; j < joints.cols(); ++j) {
    const Vec3 p = R * joints.col(j) + cam.translation;
    if (!(p.z() > 0.0)) throw EstimationError("behind camera: joint " + std::to_string(j));
    out.joints.col(j) = project_point(cam.intrinsics, p).uv;
  }
  return out;
}

Pose2D project_pose(const CameraModel& cam, const Pose3D& pose) { return project_pose(cam, pose.joints); }

std::string_view to_string(SelectionMode m) {
  return m == SelectionMode::kPosterior ? "posterior" : "energy";
}

SelectionMode selection_mode_from_string(std::string_view s) {
  if (s == "posterior") return SelectionMode::kPosterior;
  if (s == "energy") return SelectionMode::kEnergy;
  throw InputError("unknown selection mode '" + std::string(s) + "'");
}

void check_params(const EnergyParams& p) {
  if (!(p.omega_p >= 0.0) || !(p.omega_r >= 0.0) || !(p.omega_a >= 0.0)) {
    throw InputError("energy weights must be >= 0");
  }
  if (p.K_w < 1 || p.K < p.K_w) throw InputError("need K >= K_w >= 1");
  if (p.pca_dim < 1) throw InputError("pca_dim must be >= 1");
  if (p.iterations < 1) throw InputError("iterations must be >= 1");
  if (p.restarts < 1) throw InputError("restarts must be >= 1");
  if (p.max_iterations < 1) throw InputError("max_iterations must be >= 1");
  if (!(p.root_eps > 0.0) || !(p.gradient_tolerance >= 0.0)) {
    throw InputError("root_eps must be > 0 and gradient tolerance >= 0");
  }
}

double energy_p(const Eigen::Matrix3Xd& X, const CameraModel& cam, std::span<const int> joints,
                const Pose2D& x, double eps) {
  const Pose2D proj = project_pose(cam, X);
  double s = 0.0;
  for (int j : joints) s += (proj.joints.col(j) - x.joints.col(j)).squaredNorm();
  return root4(s, eps);
}

double energy_r(const Eigen::Matrix3Xd& X, std::span<const Eigen::Matrix3Xd> retrieved,
                std::span<const double> weights, double eps) {
  if (weights.size() != retrieved.size()) throw InputError("energy_r: weights do not match poses");
  double e = 0.0;
  for (std::size_t k = 0; k < retrieved.size(); ++k) {
    if (weights[k] == 0.0) continue;
    e += weights[k] * root4((retrieved[k] - X).squaredNorm(), eps);
  }
  return e;
}

double energy_a(const Eigen::Matrix3Xd& X, std::span<const Eigen::Matrix3Xd> retrieved,
                std::span<const double> weights, const Skeleton& skeleton, double eps) {
  if (weights.size() != retrieved.size()) throw InputError("energy_a: weights do not match poses");
  const Eigen::VectorXd L = limb_lengths_of(X, skeleton);
  double e = 0.0;
  for (std::size_t k = 0; k < retrieved.size(); ++k) {
    if (weights[k] == 0.0) continue;
    e += weights[k] * root4((limb_lengths_of(retrieved[k], skeleton) - L).squaredNorm(), eps);
  }
  return e;
}

EnergyValue total_energy(const Eigen::Matrix3Xd& X, const EnergyInputs& in, const Skeleton& skeleton,
                         const EnergyParams& params, bool with_gradient) {
  if (in.weights.size() != in.retrieved.size()) throw InputError("energy: weights do not match poses");
  const double eps = params.root_eps;
  EnergyValue v;
  if (with_gradient) v.gradient = Eigen::Matrix3Xd::Zero(3, X.cols());

  // Projection term.
  {
    const Mat3 R = in.camera.rotation_matrix();
    double s = 0.0;
    std::vector<std::pair<int, Projection>> cache;
    cache.reserve(in.joints.size());
    for (int j : in.joints) {
      const Vec3 p = R * X.col(j) + in.camera.translation;
      if (!(p.z() > 0.0)) throw EstimationError("behind camera: joint " + std::to_string(j));
      cache.emplace_back(j, project_point(in.camera.intrinsics, p));
      s += (cache.back().second.uv - in.observed.joints.col(j)).squaredNorm();
    }
    v.e_p = root4(s, eps);
    if (with_gradient) {
      const double c = params.omega_p * droot4(s, eps) * 2.0;
      for (const auto& [j, pr] : cache) {
        const Vec2 r = pr.uv - in.observed.joints.col(j);
        v.gradient.col(j) += c * (pr.d_dp * R).transpose() * r;
      }
    }
  }

  const Eigen::VectorXd L = limb_lengths_of(X, skeleton);
  for (std::size_t k = 0; k < in.retrieved.size(); ++k) {
    const double w = in.weights[k];
    if (w == 0.0) continue;
    const Eigen::Matrix3Xd diff = X - in.retrieved[k];
    const double d = diff.squaredNorm();
    v.e_r += w * root4(d, eps);
    const Eigen::VectorXd dl = L - limb_lengths_of(in.retrieved[k], skeleton);
    const double a = dl.squaredNorm();
    v.e_a += w * root4(a, eps);
    if (!with_gradient) continue;
    v.gradient += (params.omega_r * w * droot4(d, eps) * 2.0) * diff;
    const double ca = params.omega_a * w * droot4(a, eps) * 2.0;
    for (int e = 0; e < skeleton.num_edges(); ++e) {
      const auto [c, p] = skeleton.edges[static_cast<std::size_t>(e)];
      if (!(L[e] > 0.0)) continue;
      const Vec3 u = (X.col(c) - X.col(p)) / L[e];
      v.gradient.col(c) += ca * dl[e] * u;
      v.gradient.col(p) -= ca * dl[e] * u;
    }
  }
  v.total = params.omega_p * v.e_p + params.omega_r * v.e_r + params.omega_a * v.e_a;
  return v;
}

Eigen::Matrix3Xd PoseSubspace::pose(const Eigen::VectorXd& coeffs) const {
  const Eigen::VectorXd flat = coeffs.size() == 0 ? mean : Eigen::VectorXd(mean + basis * coeffs);
  return Eigen::Map<const Eigen::Matrix3Xd>(flat.data(), 3, flat.size() / 3);
}

Eigen::Matrix3Xd PoseSubspace::mean_pose() const {
  return Eigen::Map<const Eigen::Matrix3Xd>(mean.data(), 3, mean.size() / 3);
}

PoseSubspace fit_pca(std::span<const Eigen::Matrix3Xd> poses, std::span<const double> weights,
                     int pca_dim) {
  if (poses.empty()) throw InputError("fit_pca: no poses");
  if (weights.size() != poses.size()) throw InputError("fit_pca: weights do not match poses");
  const Eigen::Index n = poses.front().size();
  double w_sum = 0.0;
  int positive = 0;
  for (double w : weights) {
    if (w < 0.0 || !std::isfinite(w)) throw InputError("fit_pca: weights must be finite and >= 0");
    if (w > 0.0) {
      w_sum += w;
      ++positive;
    }
  }
  const auto flat = [&](std::size_t k) { return Eigen::Map<const Eigen::VectorXd>(poses[k].data(), n); };
  const auto weight = [&](std::size_t k) { return positive > 0 ? weights[k] : 1.0; };
  if (positive == 0) w_sum = static_cast<double>(poses.size());

  PoseSubspace out;
  out.mean = Eigen::VectorXd::Zero(n);
  for (std::size_t k = 0; k < poses.size(); ++k) out.mean += weight(k) * flat(k);
  out.mean /= w_sum;
  out.basis.resize(n, 0);
  out.variances.resize(0);
  const int dim_cap = std::min(pca_dim, positive - 1);
  if (dim_cap <= 0) return out;

  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t k = 0; k < poses.size(); ++k) {
    if (weights[k] == 0.0) continue;
    const Eigen::VectorXd d = flat(k) - out.mean;
    cov.noalias() += weights[k] * d * d.transpose();
  }
  cov /= w_sum;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  // Eigenvalues come out ascending.
  const double top = std::max(eig.eigenvalues()(n - 1), 0.0);
  const double floor = 1e-10 * std::max(1.0, top);
  int dim = 0;
  while (dim < dim_cap && eig.eigenvalues()(n - 1 - dim) > floor) ++dim;
  out.basis.resize(n, dim);
  out.variances.resize(dim);
  for (int i = 0; i < dim; ++i) {
    out.basis.col(i) = eig.eigenvectors().col(n - 1 - i);
    out.variances(i) = eig.eigenvalues()(n - 1 - i);
  }
  return out;
}

Eigen::VectorXd coefficient_gradient(const PoseSubspace& subspace, const Eigen::Matrix3Xd& grad_x) {
  return subspace.basis.transpose() * Eigen::Map<const Eigen::VectorXd>(grad_x.data(), grad_x.size());
}

Eigen::Matrix3Xd minimize_energy(const PoseSubspace& subspace, const EnergyInputs& in,
                                 const Skeleton& skeleton, const EnergyParams& params) {
  const int d = subspace.dim();
  const auto objective = [&](const Eigen::VectorXd& c) {
    try {
      return total_energy(subspace.pose(c), in, skeleton, params, false).total;
    } catch (const EstimationError&) {
      return kInf;
    }
  };
  const Eigen::VectorXd c0 = Eigen::VectorXd::Zero(d);
  if (!std::isfinite(objective(c0))) {
    throw EstimationError("energy minimization: non-finite energy at the initial pose");
  }
  if (d == 0) return subspace.mean_pose();

  const Mat3 R = in.camera.rotation_matrix();
  const Eigen::MatrixXd& B = subspace.basis;
  std::vector<Eigen::VectorXd> limb_ref;
  for (const auto& r : in.retrieved) limb_ref.push_back(limb_lengths_of(r, skeleton));

  const auto linearize = [&](const Eigen::VectorXd& c, Majorizer& m) {
    const Eigen::Matrix3Xd X = subspace.pose(c);
    const auto m_joints = static_cast<Eigen::Index>(in.joints.size());
    Eigen::VectorXd r(2 * m_joints);
    Eigen::MatrixXd J(2 * m_joints, d);
    for (Eigen::Index i = 0; i < m_joints; ++i) {
      const int j = in.joints[static_cast<std::size_t>(i)];
      const Projection pr = project_point(in.camera.intrinsics, R * X.col(j) + in.camera.translation);
      r.segment<2>(2 * i) = pr.uv - in.observed.joints.col(j);
      J.middleRows<2>(2 * i) = (pr.d_dp * R) * B.middleRows<3>(3 * j);
    }
    m.add(params.omega_p, r, J);

    const Eigen::VectorXd L = limb_lengths_of(X, skeleton);
    Eigen::MatrixXd JL(skeleton.num_edges(), d);
    for (int e = 0; e < skeleton.num_edges(); ++e) {
      const auto [ch, p] = skeleton.edges[static_cast<std::size_t>(e)];
      if (!(L[e] > 0.0)) {
        JL.row(e).setZero();
        continue;
      }
      const Vec3 u = (X.col(ch) - X.col(p)) / L[e];
      JL.row(e) = u.transpose() * (B.middleRows<3>(3 * ch) - B.middleRows<3>(3 * p));
    }
    const Eigen::Map<const Eigen::VectorXd> x_flat(X.data(), X.size());
    for (std::size_t k = 0; k < in.retrieved.size(); ++k) {
      const double w = in.weights[k];
      if (w == 0.0) continue;
      const Eigen::VectorXd rr = x_flat - Eigen::Map<const Eigen::VectorXd>(in.retrieved[k].data(), X.size());
      // B is orthonormal, so B^T B = I.
      const double cr = params.omega_r * w * droot4(rr.squaredNorm(), m.eps);
      m.H.diagonal().array() += cr;
      m.g.noalias() += cr * B.transpose() * rr;
      m.add(params.omega_a * w, L - limb_ref[k], JL);
    }
  };
  const auto retract = [](const Eigen::VectorXd& c, const Eigen::VectorXd& delta) -> Eigen::VectorXd {
    return c + delta;
  };
  SolverStats stats;
  const Eigen::VectorXd c = robust_minimize(c0, d, objective, linearize, retract, params, stats);
  log_debug("minimize_energy: " + std::to_string(stats.iterations) + " iterations, energy " +
            std::to_string(stats.energy));
  return subspace.pose(c);
}

CameraFit estimate_projection(std::span<const Eigen::Matrix3Xd> retrieved, const Pose2D& x,
                              std::span<const int> joints, const Intrinsics& intrinsics,
                              const EnergyParams& params, const std::optional<CameraModel>& warm_start,
                              const std::optional<VirtualCamera>& view_hint) {
  if (retrieved.empty()) throw InputError("estimate_projection: need at least one pose");
  if (joints.empty()) throw InputError("estimate_projection: empty joint set");
  check_intrinsics(intrinsics);
  const double eps = params.root_eps;

  const auto objective = [&](const CameraState& s) {
    double f = 0.0;
    for (const auto& X : retrieved) {
      const double sq = reprojection_sq(s.R, s.t, intrinsics, X, joints, x);
      if (!std::isfinite(sq)) return kInf;
      f += root4(sq, eps);
    }
    return f;
  };
  const auto m_joints = static_cast<Eigen::Index>(joints.size());
  const auto linearize = [&](const CameraState& s, Majorizer& m) {
    Eigen::VectorXd r(2 * m_joints);
    Eigen::Matrix<double, Eigen::Dynamic, 6> J(2 * m_joints, 6);
    for (const auto& X : retrieved) {
      for (Eigen::Index i = 0; i < m_joints; ++i) {
        const int j = joints[static_cast<std::size_t>(i)];
        const Vec3 q = s.R * X.col(j);
        const Projection pr = project_point(intrinsics, q + s.t);
        r.segment<2>(2 * i) = pr.uv - x.joints.col(j);
        J.block<2, 3>(2 * i, 0) = -pr.d_dp * skew(q);
        J.block<2, 3>(2 * i, 3) = pr.d_dp;
      }
      m.add(1.0, r, J);
    }
  };
  const auto retract = [](const CameraState& s, const Eigen::VectorXd& delta) {
    return CameraState{exp_so3(delta.head<3>()) * s.R, s.t + delta.tail<3>()};
  };

  std::vector<CameraState> starts;
  if (warm_start) starts.push_back({warm_start->rotation_matrix(), warm_start->translation});
  for (int i = 0; i < params.restarts; ++i) {
    const VirtualCamera vc{360.0 * i / params.restarts, 0.0};
    starts.push_back(initial_camera(vc.rotation(), retrieved.front(), joints, x, intrinsics));
  }
  if (view_hint) starts.push_back(initial_camera(view_hint->rotation(), retrieved.front(), joints, x, intrinsics));

  CameraFit best;
  best.energy = kInf;
  for (std::size_t i = 0; i < starts.size(); ++i) {
    SolverStats stats;
    const CameraState s = robust_minimize(starts[i], 6, objective, linearize, retract, params, stats);
    if (std::isfinite(stats.energy) && stats.energy < best.energy) {
      best.energy = stats.energy;
      best.restart = static_cast<int>(i);
      best.camera.intrinsics = intrinsics;
      best.camera.rotation = axis_angle(s.R);
      best.camera.translation = s.t;
    }
  }
  if (!std::isfinite(best.energy)) throw EstimationError("projection estimation failed");
  return best;
}

std::vector<double> raw_weights(const UnaryMap& unaries, std::span<const Pose2D> projected) {
  std::vector<double> raw;
  raw.reserve(projected.size());
  for (const auto& p : projected) {
    double s = 0.0;
    for (int j = 0; j < p.num_joints(); ++j) s += unaries.sample(j, p.joints.col(j));
    raw.push_back(s);
  }
  return raw;
}

std::vector<double> normalize_weights(std::span<const double> raw, int K_w) {
  if (K_w < 1) throw InputError("K_w must be >= 1");
  std::vector<std::size_t> order(raw.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return raw[a] > raw[b]; });
  const std::size_t kept = std::min(order.size(), static_cast<std::size_t>(K_w));
  std::vector<double> w(raw.size(), 0.0);
  if (kept == 0) return w;
  const double hi = raw[order.front()];
  const double lo = raw[order[kept - 1]];
  for (std::size_t i = 0; i < kept; ++i) {
    w[order[i]] = hi > lo ? (raw[order[i]] - lo) / (hi - lo) : 1.0;
  }
  return w;
}

std::vector<double> compute_weights(const UnaryMap& unaries, std::span<const Pose2D> projected, int K_w) {
  if (projected.empty()) throw InputError("compute_weights: no poses");
  return normalize_weights(raw_weights(unaries, projected), K_w);
}

namespace {

// Projected poses that survived weighting, best first.
std::vector<Pose2D> kept_projections(const SetState& st, const EnergyParams& params) {
  std::vector<std::size_t> order(st.projected.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (!params.weighting) return std::vector<Pose2D>(st.projected.begin(), st.projected.end());
  const std::vector<double>& raw = st.raw_weights;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return raw[a] > raw[b]; });
  std::vector<Pose2D> out;
  for (std::size_t i = 0; i < order.size() && static_cast<int>(i) < params.K_w; ++i) {
    out.push_back(st.projected[order[i]]);
  }
  return out;
}

}  // namespace

Selection select_joint_set(const std::array<SetState, 5>& sets, const Pose2D& x, const UnaryMap& unaries,
                           const Skeleton& skeleton, const EnergyParams& params) {
  Selection sel;
  sel.scores.fill(std::numeric_limits<double>::quiet_NaN());
  const auto allowed = [&](JointSet s) {
    return sets[static_cast<std::size_t>(s)].ok && (!params.forced_set || *params.forced_set == s);
  };
  if (std::none_of(kJointSets.begin(), kJointSets.end(), allowed)) {
    throw EstimationError("no joint set available for selection");
  }

  if (params.mode == SelectionMode::kPosterior) {
    std::array<std::vector<Pose2D>, 5> projected;
    for (JointSet s : kJointSets) {
      if (allowed(s)) projected[static_cast<std::size_t>(s)] = kept_projections(sets[static_cast<std::size_t>(s)], params);
    }
    const RefineResult r = refine_pose(unaries, projected, skeleton, kRefineComponents, kDefaultAlpha,
                                       split_seed(params.seed, 0x5e1ec7), kRefinePeaks);
    sel.set = r.set;
    sel.pose = r.pose;
    for (std::size_t k = 0; k < 5; ++k) {
      if (r.evaluated[k]) sel.scores[k] = r.log_scores[k];
    }
    return sel;
  }

  bool any = false;
  for (JointSet s : kJointSets) {
    if (!allowed(s)) continue;
    const auto& st = sets[static_cast<std::size_t>(s)];
    EnergyInputs in{st.camera.camera, skeleton.joints_in(s), x, st.retrieved, st.weights};
    double score = 0.0;
    for (const auto& X : st.retrieved) score += total_energy(X, in, skeleton, params, false).total;
    sel.scores[static_cast<std::size_t>(s)] = score;
    if (!any || score < sel.scores[static_cast<std::size_t>(sel.set)]) {
      sel.set = s;
      any = true;
    }
  }
  sel.pose = x;
  return sel;
}

LiftResult estimate_3d(const UnaryMap& unaries, const MoCapIndex& index, const Skeleton& skeleton,
                       const Intrinsics& intrinsics, const EnergyParams& params, const LiftOptions& options) {
  check_params(params);
  check_intrinsics(intrinsics);
  check_unary_map(unaries);
  if (unaries.num_joints() != skeleton.num_joints() || index.num_joints() != skeleton.num_joints()) {
    throw InputError("joint count mismatch between unaries, index and skeleton");
  }

  const PsmModel model = options.initial_model ? *options.initial_model : flat_psm_model(skeleton);
  Pose2D x = infer_map(model, unaries, grid_candidates(unaries)).pose;

  LiftResult result;
  std::array<std::optional<CameraModel>, 5> warm;
  std::array<SetState, 5> sets;
  JointSet selected = JointSet::kAll;
  for (int it = 1; it <= params.iterations; ++it) {
    NormalizedPose2D q;
    try {
      q = normalize_pose2d(x);
    } catch (const InputError& e) {
      throw EstimationError(std::string("2D pose at iteration ") + std::to_string(it) + ": " + e.what());
    }
    for (JointSet s : kJointSets) {
      SetState st;
      if (params.forced_set && *params.forced_set != s) {
        sets[static_cast<std::size_t>(s)] = std::move(st);
        continue;
      }
      try {
        const KnnResult knn = index.query(q, s, params.K);
        for (const auto& n : knn.neighbors) st.retrieved.push_back(n.pose);
        st.nearest_view = index.camera(knn.neighbors.front().camera_id);
        st.camera = estimate_projection(st.retrieved, x, skeleton.joints_in(s), intrinsics, params,
                                        warm[static_cast<std::size_t>(s)], st.nearest_view);
        for (const auto& X : st.retrieved) st.projected.push_back(project_pose(st.camera.camera, X));
        st.raw_weights = raw_weights(unaries, st.projected);
        st.weights = params.weighting ? normalize_weights(st.raw_weights, params.K_w)
                                      : std::vector<double>(st.raw_weights.size(), 1.0);
        st.ok = true;
        warm[static_cast<std::size_t>(s)] = st.camera.camera;
      } catch (const EstimationError& e) {
        st.ok = false;
        st.failure = e.what();
        log_warning("set " + std::string(to_string(s)) + " failed: " + e.what());
      }
      sets[static_cast<std::size_t>(s)] = std::move(st);
    }
    if (std::none_of(sets.begin(), sets.end(), [](const SetState& st) { return st.ok; })) {
      throw EstimationError("all joint sets failed");
    }
    EnergyParams iter_params = params;
    iter_params.seed = split_seed(params.seed, static_cast<std::uint64_t>(it));
    const Selection sel = select_joint_set(sets, x, unaries, skeleton, iter_params);

    IterationDiagnostics diag;
    diag.iteration = it;
    diag.input_pose = x;
    diag.refined_pose = sel.pose;
    diag.selected_set = sel.set;
    diag.selection_score = sel.scores;
    for (std::size_t k = 0; k < 5; ++k) {
      diag.set_ok[k] = sets[k].ok;
      diag.camera_energy[k] = sets[k].ok ? sets[k].camera.energy : std::numeric_limits<double>::quiet_NaN();
      diag.weights[k] = sets[k].weights;
    }
    result.iterations.push_back(std::move(diag));
    selected = sel.set;
    x = sel.pose;
  }

  const SetState& st = sets[static_cast<std::size_t>(selected)];
  const PoseSubspace subspace = fit_pca(st.retrieved, st.weights, params.pca_dim);
  EnergyInputs in{st.camera.camera, skeleton.joints_in(selected), x, st.retrieved, st.weights};
  result.initial_energy = total_energy(subspace.mean_pose(), in, skeleton, params, false);
  result.pose_normalized = minimize_energy(subspace, in, skeleton, params);
  result.final_energy = total_energy(result.pose_normalized, in, skeleton, params, false);
  result.weighted_mean = subspace.mean_pose();
  result.subspace_dim = subspace.dim();
  result.selected_set = selected;
  result.camera = st.camera.camera;
  result.pose_2d = x;
  result.pose_3d.skeleton_id = skeleton.id;
  const Mat3 R = st.camera.camera.rotation_matrix();
  result.pose_3d.joints = (R * result.pose_normalized).colwise() + st.camera.camera.translation;
  return result;
}

}  // namespace duallift
