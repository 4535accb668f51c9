#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "duallift/skeleton.hpp"

namespace duallift {

// Dense per-joint appearance scores. Cell (u, v) sits at pixel
// (u * stride, v * stride); grids are row-major, height x width.
struct UnaryMap {
  enum class Provenance { kLoaded, kSynthetic };

  int width = 0;
  int height = 0;
  double stride = 1.0;
  std::vector<std::vector<float>> grids;
  Provenance provenance = Provenance::kSynthetic;

  int num_joints() const { return static_cast<int>(grids.size()); }
  float at(int joint, int u, int v) const {
    if (u < 0 || v < 0 || u >= width || v >= height) return 0.0f;
    return grids[static_cast<std::size_t>(joint)][static_cast<std::size_t>(v) * width + u];
  }
  Vec2 cell_position(int u, int v) const { return {u * stride, v * stride}; }
  // Bilinear interpolation in pixel coordinates; zero outside the grid.
  double sample(int joint, const Vec2& px) const;
  // Quadratic interpolation of log scores over the 3x3 neighbourhood of the
  // nearest cell (exact for Gaussian bumps without a floor); bilinear where a
  // score is zero.
  double sample_smooth(int joint, const Vec2& px) const;
};

// Throws InputError unless every score is finite and >= 0 and every joint has
// a positive cell.
void check_unary_map(const UnaryMap& map);

void save_unary_map(std::ostream& out, const UnaryMap& map);
void save_unary_map(const std::string& path, const UnaryMap& map);
UnaryMap load_unary_map(std::istream& in);
UnaryMap load_unary_map(const std::string& path);
inline constexpr std::uint16_t kUnaryFormatVersion = 1;

struct UnarySynthesis {
  int width = 160;
  int height = 120;
  double stride = 4.0;
  // Isotropic Gaussian width; 0 splats a bilinear unit mass instead.
  double sigma_px = 2.0;
  // Constant added to every cell.
  double floor = 1e-3;
};

// Gaussian bumps at the given joint locations.
UnaryMap synthesize_unaries(const Pose2D& joints, const UnarySynthesis& spec);

struct UnaryPeak {
  Vec2 position;  // sub-cell refined, pixels
  double value;
};

// Local maxima of a joint's grid, strongest first, refined to sub-cell
// precision (log-parabola when the 3-cell profile is positive, else centroid).
std::vector<UnaryPeak> unary_peaks(const UnaryMap& map, int joint, int top_n);

struct GaussianComponent {
  Vec2 mean;
  Eigen::Matrix2d covariance;
  Eigen::Matrix2d precision;
  double weight;
};

// Pairwise potential for one edge: weighted Gaussian mixture over the offset
// d = x_child - x_parent.
struct GmmBinary {
  std::vector<GaussianComponent> components;
  double alpha = 0.1;
  int requested_components = 0;
  bool reduced = false;
};

inline constexpr double kDefaultAlpha = 0.1;
inline constexpr int kInitialComponents = 15;
inline constexpr int kRefineComponents = 5;
inline constexpr double kCovarianceRegularization = 1.0;  // px^2
inline constexpr double kBinaryFloor = 1e-300;

// k-means++ (seeded) then Lloyd iterations; component weight is the cluster
// fraction raised to alpha.
GmmBinary fit_gmm_binary(std::span<const Vec2> offsets, int components, double alpha,
                         std::uint64_t seed);
std::vector<GmmBinary> fit_binaries(const std::vector<std::vector<Vec2>>& offsets_per_edge,
                                    int components, double alpha, std::uint64_t seed);

double eval_binary(const GmmBinary& binary, const Vec2& xi, const Vec2& xj);
double log_eval_binary(const GmmBinary& binary, const Vec2& d);

// Tree model: parent per joint (-1 at the root) and the binary for each
// joint's edge to its parent.
struct PsmModel {
  std::vector<int> parent;
  std::vector<GmmBinary> binary;  // indexed by child joint; root entry unused

  int num_joints() const { return static_cast<int>(parent.size()); }
  int root() const;
  std::vector<int> topological_order() const;
};

// Binaries are given in skeleton edge order.
PsmModel make_psm_model(const Skeleton& skeleton, std::vector<GmmBinary> binaries);

// Constant binaries: inference reduces to independent per-joint maxima.
PsmModel flat_psm_model(const Skeleton& skeleton);

// Offsets x_child - x_parent per skeleton edge, collected over poses.
std::vector<std::vector<Vec2>> edge_offsets(std::span<const Pose2D> poses, const Skeleton& skeleton);

// Fits a model with `components` mixtures per edge from 2D training poses.
PsmModel fit_psm_model(std::span<const Pose2D> poses, const Skeleton& skeleton, int components,
                       double alpha, std::uint64_t seed);

using CandidateLists = std::vector<std::vector<Vec2>>;

// Refined local maxima plus the strongest cells (top 1 - quantile fraction),
// leaving out cells adjacent to a peak.
CandidateLists grid_candidates(const UnaryMap& map, double quantile = 0.995, int top_peaks = 20);

struct PsmInference {
  Pose2D pose;
  double log_score = -std::numeric_limits<double>::infinity();
  std::vector<int> choice;  // index into each joint's candidate list
};

// Exact max-product over the tree restricted to the candidate lists.
PsmInference infer_map(const PsmModel& model, const UnaryMap& unaries,
                       const CandidateLists& candidates);

struct RefineResult {
  Pose2D pose;
  JointSet set = JointSet::kAll;
  std::array<double, 5> log_scores;
  std::array<bool, 5> evaluated{};
};

inline constexpr int kRefinePeaks = 20;

// Fits per-set binaries from the projected full-body candidate poses, infers
// the MAP 2D pose per set and keeps the set with the highest posterior.
// Sets with no projected poses are skipped.
RefineResult refine_pose(const UnaryMap& unaries,
                         const std::array<std::vector<Pose2D>, 5>& projected,
                         const Skeleton& skeleton, int refine_components, double alpha,
                         std::uint64_t seed, int top_peaks = kRefinePeaks);

}  // namespace duallift
