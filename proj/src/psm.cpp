#include "duallift/psm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include <Eigen/Dense>

#include "duallift/binary_io.hpp"
#include "duallift/logging.hpp"

namespace duallift {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr int kMaxKmeansIterations = 100;

struct Kmeans {
  std::vector<Vec2> centers;
  std::vector<int> assignment;
};

int nearest_center(const Vec2& p, const std::vector<Vec2>& centers) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const double d = (p - centers[c]).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

Kmeans kmeans_pp(std::span<const Vec2> pts, int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Kmeans km;
  const std::size_t n = pts.size();
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  km.centers.push_back(pts[pick(rng)]);
  std::vector<double> d2(n);
  while (static_cast<int>(km.centers.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : km.centers) best = std::min(best, (pts[i] - c).squaredNorm());
      d2[i] = best;
      total += best;
    }
    if (!(total > 0.0)) break;
    std::uniform_real_distribution<double> u(0.0, total);
    double r = u(rng);
    std::size_t chosen = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] <= 0.0) continue;
      if (r < d2[i]) {
        chosen = i;
        break;
      }
      r -= d2[i];
    }
    // Guard against landing on an existing center through rounding.
    if (d2[chosen] <= 0.0) {
      for (std::size_t i = n; i-- > 0;) {
        if (d2[i] > 0.0) {
          chosen = i;
          break;
        }
      }
    }
    km.centers.push_back(pts[chosen]);
  }

  km.assignment.assign(n, -1);
  for (int it = 0; it < kMaxKmeansIterations; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const int c = nearest_center(pts[i], km.centers);
      if (c != km.assignment[i]) {
        km.assignment[i] = c;
        changed = true;
      }
    }
    if (!changed) break;
    std::vector<Vec2> sum(km.centers.size(), Vec2::Zero());
    std::vector<int> count(km.centers.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      sum[km.assignment[i]] += pts[i];
      ++count[km.assignment[i]];
    }
    for (std::size_t c = 0; c < km.centers.size(); ++c) {
      if (count[c] > 0) km.centers[c] = sum[c] / count[c];
    }
  }
  return km;
}

std::size_t count_distinct(std::span<const Vec2> pts) {
  std::vector<std::pair<double, double>> v;
  v.reserve(pts.size());
  for (const auto& p : pts) v.emplace_back(p.x(), p.y());
  std::sort(v.begin(), v.end());
  return static_cast<std::size_t>(std::unique(v.begin(), v.end()) - v.begin());
}

float grid_min(const std::vector<float>& g) { return *std::min_element(g.begin(), g.end()); }

}  // namespace

double UnaryMap::sample(int joint, const Vec2& px) const {
  const double gx = px.x() / stride;
  const double gy = px.y() / stride;
  if (!std::isfinite(gx) || !std::isfinite(gy)) return 0.0;
  if (gx <= -1.0 || gy <= -1.0 || gx >= width || gy >= height) return 0.0;
  const int u0 = static_cast<int>(std::floor(gx));
  const int v0 = static_cast<int>(std::floor(gy));
  const double fx = gx - u0;
  const double fy = gy - v0;
  return (1 - fx) * (1 - fy) * at(joint, u0, v0) + fx * (1 - fy) * at(joint, u0 + 1, v0) +
         (1 - fx) * fy * at(joint, u0, v0 + 1) + fx * fy * at(joint, u0 + 1, v0 + 1);
}

double UnaryMap::sample_smooth(int joint, const Vec2& px) const {
  const double gx = px.x() / stride;
  const double gy = px.y() / stride;
  if (!std::isfinite(gx) || !std::isfinite(gy)) return 0.0;
  const int u = static_cast<int>(std::lround(gx));
  const int v = static_cast<int>(std::lround(gy));
  if (u < 1 || v < 1 || u >= width - 1 || v >= height - 1) return sample(joint, px);
  double l[3][3];
  for (int dv = -1; dv <= 1; ++dv) {
    for (int du = -1; du <= 1; ++du) {
      const double a = at(joint, u + du, v + dv);
      if (!(a > 0.0)) return sample(joint, px);
      l[dv + 1][du + 1] = std::log(a);
    }
  }
  const double dx = gx - u, dy = gy - v;
  const double gxl = 0.5 * (l[1][2] - l[1][0]);
  const double gyl = 0.5 * (l[2][1] - l[0][1]);
  const double hxx = l[1][2] - 2.0 * l[1][1] + l[1][0];
  const double hyy = l[2][1] - 2.0 * l[1][1] + l[0][1];
  const double hxy = 0.25 * (l[2][2] - l[2][0] - l[0][2] + l[0][0]);
  return std::exp(l[1][1] + gxl * dx + gyl * dy + 0.5 * (hxx * dx * dx + hyy * dy * dy) + hxy * dx * dy);
}

void check_unary_map(const UnaryMap& map) {
  if (map.width <= 0 || map.height <= 0 || !(map.stride > 0.0)) {
    throw InputError("unary map has an empty grid");
  }
  const auto cells = static_cast<std::size_t>(map.width) * map.height;
  for (int j = 0; j < map.num_joints(); ++j) {
    const auto& g = map.grids[static_cast<std::size_t>(j)];
    if (g.size() != cells) throw InputError("unary grid size mismatch for joint " + std::to_string(j));
    bool positive = false;
    for (float v : g) {
      if (!std::isfinite(v) || v < 0.0f) {
        throw InputError("unary map joint " + std::to_string(j) + " has a negative or non-finite score");
      }
      positive = positive || v > 0.0f;
    }
    if (!positive) throw InputError("unary map joint " + std::to_string(j) + " has no positive cell");
  }
}

// Layout (little-endian): "DSUM" u16 version u16 joints u32 width u32 height
// f32 stride, then per joint width*height f32 scores, row-major.
void save_unary_map(std::ostream& out, const UnaryMap& map) {
  using namespace binio;
  put_magic(out, "DSUM");
  put_uint<std::uint16_t>(out, kUnaryFormatVersion);
  put_uint<std::uint16_t>(out, static_cast<std::uint16_t>(map.num_joints()));
  put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(map.width));
  put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(map.height));
  put_f32(out, static_cast<float>(map.stride));
  for (const auto& g : map.grids) {
    for (float v : g) put_f32(out, v);
  }
  if (!out) throw InputError("failed writing unary map");
}

void save_unary_map(const std::string& path, const UnaryMap& map) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open '" + path + "' for writing");
  save_unary_map(out, map);
}

UnaryMap load_unary_map(std::istream& in) {
  using namespace binio;
  expect_magic(in, "DSUM", "unary map");
  const auto version = get_uint<std::uint16_t>(in);
  if (version != kUnaryFormatVersion) {
    throw InputError("unary map version " + std::to_string(version) + " not supported");
  }
  UnaryMap map;
  map.provenance = UnaryMap::Provenance::kLoaded;
  const auto joints = get_uint<std::uint16_t>(in);
  map.width = static_cast<int>(get_uint<std::uint32_t>(in));
  map.height = static_cast<int>(get_uint<std::uint32_t>(in));
  map.stride = get_f32(in);
  const auto cells = static_cast<std::size_t>(map.width) * map.height;
  map.grids.assign(joints, std::vector<float>(cells));
  for (auto& g : map.grids) {
    for (auto& v : g) v = get_f32(in);
  }
  check_unary_map(map);
  return map;
}

UnaryMap load_unary_map(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open unary map '" + path + "'");
  return load_unary_map(in);
}

UnaryMap synthesize_unaries(const Pose2D& joints, const UnarySynthesis& spec) {
  if (spec.width <= 0 || spec.height <= 0 || !(spec.stride > 0.0) || spec.sigma_px < 0.0) {
    throw InputError("invalid unary synthesis parameters");
  }
  UnaryMap map;
  map.width = spec.width;
  map.height = spec.height;
  map.stride = spec.stride;
  map.provenance = UnaryMap::Provenance::kSynthetic;
  const auto cells = static_cast<std::size_t>(spec.width) * spec.height;
  map.grids.assign(static_cast<std::size_t>(joints.num_joints()),
                   std::vector<float>(cells, static_cast<float>(spec.floor)));
  for (int j = 0; j < joints.num_joints(); ++j) {
    auto& g = map.grids[static_cast<std::size_t>(j)];
    const Vec2 p = joints.joints.col(j);
    if (spec.sigma_px == 0.0) {
      const double gx = p.x() / spec.stride, gy = p.y() / spec.stride;
      const int u0 = static_cast<int>(std::floor(gx)), v0 = static_cast<int>(std::floor(gy));
      const double fx = gx - u0, fy = gy - v0;
      const auto splat = [&](int u, int v, double w) {
        if (u >= 0 && v >= 0 && u < spec.width && v < spec.height) {
          g[static_cast<std::size_t>(v) * spec.width + u] += static_cast<float>(w);
        }
      };
      splat(u0, v0, (1 - fx) * (1 - fy));
      splat(u0 + 1, v0, fx * (1 - fy));
      splat(u0, v0 + 1, (1 - fx) * fy);
      splat(u0 + 1, v0 + 1, fx * fy);
      continue;
    }
    const double inv2s2 = 1.0 / (2.0 * spec.sigma_px * spec.sigma_px);
    for (int v = 0; v < spec.height; ++v) {
      const double dy = v * spec.stride - p.y();
      for (int u = 0; u < spec.width; ++u) {
        const double dx = u * spec.stride - p.x();
        g[static_cast<std::size_t>(v) * spec.width + u] +=
            static_cast<float>(std::exp(-(dx * dx + dy * dy) * inv2s2));
      }
    }
  }
  return map;
}

std::vector<UnaryPeak> unary_peaks(const UnaryMap& map, int joint, int top_n) {
  const auto& g = map.grids.at(static_cast<std::size_t>(joint));
  const double base = grid_min(g);
  const auto val = [&](int u, int v) { return static_cast<double>(map.at(joint, u, v)); };
  const auto excess = [&](int u, int v) {
    if (u < 0 || v < 0 || u >= map.width || v >= map.height) return 0.0;
    return std::max(0.0, val(u, v) - base);
  };

  struct Cell {
    int u, v;
    double value;
  };
  std::vector<Cell> maxima;
  for (int v = 0; v < map.height; ++v) {
    for (int u = 0; u < map.width; ++u) {
      const double c = val(u, v);
      if (c <= base) continue;
      bool is_max = true;
      for (int dv = -1; dv <= 1 && is_max; ++dv) {
        for (int du = -1; du <= 1; ++du) {
          if (du == 0 && dv == 0) continue;
          const int nu = u + du, nv = v + dv;
          if (nu < 0 || nv < 0 || nu >= map.width || nv >= map.height) continue;
          const double n = val(nu, nv);
          // Raster-earlier neighbours must be strictly lower so plateaus yield one peak.
          const bool earlier = dv < 0 || (dv == 0 && du < 0);
          if (n > c || (earlier && n == c)) {
            is_max = false;
            break;
          }
        }
      }
      if (is_max) maxima.push_back({u, v, c});
    }
  }
  std::stable_sort(maxima.begin(), maxima.end(),
                   [](const Cell& a, const Cell& b) { return a.value > b.value; });
  if (top_n >= 0 && maxima.size() > static_cast<std::size_t>(top_n)) maxima.resize(top_n);

  std::vector<UnaryPeak> peaks;
  peaks.reserve(maxima.size());
  for (const auto& m : maxima) {
    const double c = excess(m.u, m.v);
    const double l = excess(m.u - 1, m.v), r = excess(m.u + 1, m.v);
    const double t = excess(m.u, m.v - 1), b = excess(m.u, m.v + 1);
    Vec2 offset;
    const auto parabola = [](double lo, double mid, double hi, double& out) {
      if (lo <= 0.0 || mid <= 0.0 || hi <= 0.0) return false;
      const double a = std::log(lo), m = std::log(mid), h = std::log(hi);
      const double denom = a - 2.0 * m + h;
      if (!(denom < 0.0)) return false;
      out = std::clamp(0.5 * (a - h) / denom, -1.0, 1.0);
      return true;
    };
    double ox = 0.0, oy = 0.0;
    if (parabola(l, c, r, ox) && parabola(t, c, b, oy)) {
      offset = {ox, oy};
    } else {
      double w_sum = 0.0;
      Vec2 acc = Vec2::Zero();
      for (int dv = -1; dv <= 1; ++dv) {
        for (int du = -1; du <= 1; ++du) {
          const double w = excess(m.u + du, m.v + dv);
          acc += w * Vec2(du, dv);
          w_sum += w;
        }
      }
      offset = w_sum > 0.0 ? Vec2(acc / w_sum) : Vec2::Zero();
    }
    peaks.push_back({map.cell_position(m.u, m.v) + offset * map.stride, m.value});
  }
  return peaks;
}

GmmBinary fit_gmm_binary(std::span<const Vec2> offsets, int components, double alpha,
                         std::uint64_t seed) {
  if (offsets.empty()) throw InputError("no offsets to fit a binary potential");
  if (components < 1) throw InputError("component count must be >= 1");
  GmmBinary out;
  out.alpha = alpha;
  out.requested_components = components;
  const auto distinct = static_cast<int>(count_distinct(offsets));
  int k = components;
  if (static_cast<int>(offsets.size()) < components) {
    log_warning("fit_binaries: " + std::to_string(offsets.size()) + " offsets < " +
                std::to_string(components) + " components; reducing");
    out.reduced = true;
  }
  if (distinct < k) {
    k = distinct;
    out.reduced = true;
  }
  const Kmeans km = kmeans_pp(offsets, k, seed);
  const double n_total = static_cast<double>(offsets.size());
  for (std::size_t c = 0; c < km.centers.size(); ++c) {
    Vec2 mean = Vec2::Zero();
    int count = 0;
    for (std::size_t i = 0; i < offsets.size(); ++i) {
      if (km.assignment[i] == static_cast<int>(c)) {
        mean += offsets[i];
        ++count;
      }
    }
    if (count == 0) continue;
    mean /= count;
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    for (std::size_t i = 0; i < offsets.size(); ++i) {
      if (km.assignment[i] == static_cast<int>(c)) {
        const Vec2 d = offsets[i] - mean;
        cov += d * d.transpose();
      }
    }
    cov /= count;
    cov.diagonal().array() += kCovarianceRegularization;
    GaussianComponent g;
    g.mean = mean;
    g.covariance = cov;
    g.precision = cov.inverse();
    g.weight = std::pow(count / n_total, alpha);
    out.components.push_back(g);
  }
  return out;
}

std::vector<GmmBinary> fit_binaries(const std::vector<std::vector<Vec2>>& offsets_per_edge,
                                    int components, double alpha, std::uint64_t seed) {
  std::vector<GmmBinary> out;
  out.reserve(offsets_per_edge.size());
  for (std::size_t e = 0; e < offsets_per_edge.size(); ++e) {
    out.push_back(fit_gmm_binary(offsets_per_edge[e], components, alpha, split_seed(seed, e)));
  }
  return out;
}

double eval_binary(const GmmBinary& binary, const Vec2& xi, const Vec2& xj) {
  const Vec2 d = xi - xj;
  double s = 0.0;
  for (const auto& c : binary.components) {
    const Vec2 r = d - c.mean;
    s += c.weight * std::exp(-0.5 * r.dot(c.precision * r));
  }
  return std::max(s, kBinaryFloor);
}

double log_eval_binary(const GmmBinary& binary, const Vec2& d) {
  return std::log(eval_binary(binary, d, Vec2::Zero()));
}

int PsmModel::root() const {
  for (int j = 0; j < num_joints(); ++j) {
    if (parent[j] < 0) return j;
  }
  throw InputError("PSM model has no root");
}

std::vector<int> PsmModel::topological_order() const {
  std::vector<std::vector<int>> children(parent.size());
  for (int j = 0; j < num_joints(); ++j) {
    if (parent[j] >= 0) children[parent[j]].push_back(j);
  }
  std::vector<int> order{root()};
  for (std::size_t k = 0; k < order.size(); ++k) {
    for (int c : children[order[k]]) order.push_back(c);
  }
  if (static_cast<int>(order.size()) != num_joints()) throw InputError("PSM model is not a tree");
  return order;
}

PsmModel make_psm_model(const Skeleton& skeleton, std::vector<GmmBinary> binaries) {
  if (binaries.size() != skeleton.edges.size()) {
    throw InputError("one binary per skeleton edge required");
  }
  PsmModel m;
  m.parent = skeleton.parents();
  m.binary.resize(skeleton.joint_names.size());
  for (std::size_t e = 0; e < skeleton.edges.size(); ++e) {
    m.binary[skeleton.edges[e].first] = std::move(binaries[e]);
  }
  return m;
}

PsmModel flat_psm_model(const Skeleton& skeleton) {
  GaussianComponent flat{Vec2::Zero(), Eigen::Matrix2d::Identity(), Eigen::Matrix2d::Zero(), 1.0};
  GmmBinary b;
  b.components = {flat};
  b.requested_components = 1;
  return make_psm_model(skeleton, std::vector<GmmBinary>(skeleton.edges.size(), b));
}

std::vector<std::vector<Vec2>> edge_offsets(std::span<const Pose2D> poses,
                                            const Skeleton& skeleton) {
  std::vector<std::vector<Vec2>> out(skeleton.edges.size());
  for (const auto& p : poses) {
    for (std::size_t e = 0; e < skeleton.edges.size(); ++e) {
      const auto [c, par] = skeleton.edges[e];
      out[e].push_back(p.joints.col(c) - p.joints.col(par));
    }
  }
  return out;
}

PsmModel fit_psm_model(std::span<const Pose2D> poses, const Skeleton& skeleton, int components,
                       double alpha, std::uint64_t seed) {
  return make_psm_model(skeleton,
                        fit_binaries(edge_offsets(poses, skeleton), components, alpha, seed));
}

CandidateLists grid_candidates(const UnaryMap& map, double quantile, int top_peaks) {
  CandidateLists out(static_cast<std::size_t>(map.num_joints()));
  const auto cells = static_cast<std::size_t>(map.width) * map.height;
  const auto keep = static_cast<std::size_t>(
      std::ceil((1.0 - std::clamp(quantile, 0.0, 1.0)) * static_cast<double>(cells)));
  for (int j = 0; j < map.num_joints(); ++j) {
    const auto& g = map.grids[static_cast<std::size_t>(j)];
    std::vector<std::uint32_t> idx(cells);
    std::iota(idx.begin(), idx.end(), 0u);
    const auto by_value = [&](std::uint32_t a, std::uint32_t b) {
      return g[a] > g[b] || (g[a] == g[b] && a < b);
    };
    const std::size_t n_keep = std::min(keep, cells);
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_keep), idx.end(), by_value);
    auto& list = out[static_cast<std::size_t>(j)];
    for (const auto& p : unary_peaks(map, j, top_peaks)) list.push_back(p.position);
    const std::size_t n_peaks = list.size();
    for (std::size_t k = 0; k < n_keep; ++k) {
      if (g[idx[k]] <= 0.0f) break;
      const Vec2 cell = map.cell_position(static_cast<int>(idx[k] % map.width),
                                          static_cast<int>(idx[k] / map.width));
      const bool near_peak = std::any_of(list.begin(), list.begin() + static_cast<std::ptrdiff_t>(n_peaks),
                                         [&](const Vec2& p) {
                                           return ((cell - p) / map.stride).cwiseAbs().maxCoeff() < 1.5;
                                         });
      if (!near_peak) list.push_back(cell);
    }
  }
  return out;
}

PsmInference infer_map(const PsmModel& model, const UnaryMap& unaries,
                       const CandidateLists& candidates) {
  const int n = model.num_joints();
  if (unaries.num_joints() != n || static_cast<int>(candidates.size()) != n) {
    throw InputError("PSM inference: joint count mismatch");
  }
  const std::vector<int> order = model.topological_order();

  std::vector<std::vector<double>> belief(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    const auto& cand = candidates[static_cast<std::size_t>(j)];
    auto& b = belief[static_cast<std::size_t>(j)];
    b.resize(cand.size());
    bool alive = false;
    for (std::size_t a = 0; a < cand.size(); ++a) {
      const double u = unaries.sample_smooth(j, cand[a]);
      b[a] = u > 0.0 ? std::log(u) : kNegInf;
      alive = alive || u > 0.0;
    }
    if (!alive) throw EstimationError("dead joint " + std::to_string(j) + ": no candidate with positive unary");
  }

  // best_child[j][b]: argmax of joint j given candidate b of its parent.
  std::vector<std::vector<int>> best_child(static_cast<std::size_t>(n));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const int j = *it;
    const int p = model.parent[j];
    if (p < 0) continue;
    const auto& cj = candidates[static_cast<std::size_t>(j)];
    const auto& cp = candidates[static_cast<std::size_t>(p)];
    const auto& bj = belief[static_cast<std::size_t>(j)];
    const GmmBinary& binary = model.binary[static_cast<std::size_t>(j)];
    auto& arg = best_child[static_cast<std::size_t>(j)];
    arg.assign(cp.size(), -1);
    auto& bp = belief[static_cast<std::size_t>(p)];
    for (std::size_t b = 0; b < cp.size(); ++b) {
      double best = kNegInf;
      int best_a = -1;
      for (std::size_t a = 0; a < cj.size(); ++a) {
        if (bj[a] == kNegInf) continue;
        const double v = bj[a] + log_eval_binary(binary, cj[a] - cp[b]);
        if (v > best) {
          best = v;
          best_a = static_cast<int>(a);
        }
      }
      arg[b] = best_a;
      bp[b] += best;
    }
  }

  PsmInference result;
  result.choice.assign(static_cast<std::size_t>(n), -1);
  const int root = order.front();
  const auto& br = belief[static_cast<std::size_t>(root)];
  int best_root = -1;
  for (std::size_t a = 0; a < br.size(); ++a) {
    if (br[a] > result.log_score) {
      result.log_score = br[a];
      best_root = static_cast<int>(a);
    }
  }
  if (best_root < 0) throw EstimationError("PSM inference found no finite configuration");
  result.choice[static_cast<std::size_t>(root)] = best_root;
  for (int j : order) {
    if (model.parent[j] < 0) continue;
    result.choice[static_cast<std::size_t>(j)] =
        best_child[static_cast<std::size_t>(j)][static_cast<std::size_t>(result.choice[model.parent[j]])];
  }
  result.pose.joints.resize(2, n);
  for (int j = 0; j < n; ++j) {
    result.pose.joints.col(j) =
        candidates[static_cast<std::size_t>(j)][static_cast<std::size_t>(result.choice[j])];
  }
  return result;
}

RefineResult refine_pose(const UnaryMap& unaries,
                         const std::array<std::vector<Pose2D>, 5>& projected,
                         const Skeleton& skeleton, int refine_components, double alpha,
                         std::uint64_t seed, int top_peaks) {
  RefineResult result;
  result.log_scores.fill(kNegInf);
  const int n = skeleton.num_joints();

  CandidateLists peaks(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    for (const auto& p : unary_peaks(unaries, j, top_peaks)) {
      peaks[static_cast<std::size_t>(j)].push_back(p.position);
    }
  }

  bool any = false;
  for (JointSet s : kJointSets) {
    const auto k = static_cast<std::size_t>(s);
    const auto& poses = projected[k];
    if (poses.empty()) continue;
    const PsmModel model = fit_psm_model(poses, skeleton, refine_components, alpha, split_seed(seed, k));
    CandidateLists cand(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
      auto& list = cand[static_cast<std::size_t>(j)];
      for (const auto& p : poses) {
        const Vec2 loc = p.joints.col(j);
        const bool seen = std::any_of(list.begin(), list.end(),
                                      [&](const Vec2& q) { return (q - loc).squaredNorm() < 1e-12; });
        if (!seen) list.push_back(loc);
      }
      const auto& pk = peaks[static_cast<std::size_t>(j)];
      list.insert(list.end(), pk.begin(), pk.end());
    }
    const PsmInference inf = infer_map(model, unaries, cand);
    result.evaluated[k] = true;
    result.log_scores[k] = inf.log_score;
    if (!any || inf.log_score > result.log_scores[static_cast<std::size_t>(result.set)]) {
      result.set = s;
      result.pose = inf.pose;
      any = true;
    }
  }
  if (!any) throw EstimationError("pose refinement: no joint set has projected poses");
  return result;
}

}  // namespace duallift
