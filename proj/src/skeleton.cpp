#include "duallift/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include <Eigen/Dense>

namespace duallift {
namespace {

constexpr const char* kDefaultSkeletonText = R"(id = default14
joints = head neck r_shoulder r_elbow r_wrist l_shoulder l_elbow l_wrist r_hip r_knee r_ankle l_hip l_knee l_ankle
root = neck
hips = l_hip r_hip
edge = head neck
edge = r_shoulder neck
edge = r_elbow r_shoulder
edge = r_wrist r_elbow
edge = l_shoulder neck
edge = l_elbow l_shoulder
edge = l_wrist l_elbow
edge = r_hip neck
edge = r_knee r_hip
edge = r_ankle r_knee
edge = l_hip neck
edge = l_knee l_hip
edge = l_ankle l_knee
set all = head neck r_shoulder r_elbow r_wrist l_shoulder l_elbow l_wrist r_hip r_knee r_ankle l_hip l_knee l_ankle
set up = head neck r_shoulder r_elbow r_wrist l_shoulder l_elbow l_wrist r_hip l_hip
set lw = neck r_hip r_knee r_ankle l_hip l_knee l_ankle
set lt = head neck l_shoulder l_elbow l_wrist l_hip l_knee l_ankle
set rt = head neck r_shoulder r_elbow r_wrist r_hip r_knee r_ankle
)";

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

int find_root(std::vector<int>& uf, int i) {
  while (uf[i] != i) {
    uf[i] = uf[uf[i]];
    i = uf[i];
  }
  return i;
}

}  // namespace

std::string_view to_string(JointSet s) {
  switch (s) {
    case JointSet::kAll: return "all";
    case JointSet::kUp: return "up";
    case JointSet::kLw: return "lw";
    case JointSet::kLt: return "lt";
    case JointSet::kRt: return "rt";
  }
  return "?";
}

JointSet joint_set_from_string(std::string_view label) {
  for (JointSet s : kJointSets) {
    if (to_string(s) == label) return s;
  }
  throw InputError("unknown joint set '" + std::string(label) + "'");
}

int Skeleton::joint_index(std::string_view name) const {
  for (int j = 0; j < num_joints(); ++j) {
    if (joint_names[j] == name) return j;
  }
  throw InputError("unknown joint '" + std::string(name) + "'");
}

const std::vector<int>& Skeleton::joints_in(JointSet s) const {
  auto it = joint_sets.find(std::string(to_string(s)));
  if (it == joint_sets.end()) {
    throw InputError("skeleton has no joint set '" + std::string(to_string(s)) + "'");
  }
  return it->second;
}

std::vector<int> Skeleton::parents() const {
  std::vector<int> parent(joint_names.size(), -1);
  for (const auto& [child, par] : edges) parent[child] = par;
  return parent;
}

std::vector<int> Skeleton::topological_order() const {
  std::vector<std::vector<int>> children(joint_names.size());
  for (const auto& [child, par] : edges) children[par].push_back(child);
  std::vector<int> order{root};
  for (std::size_t k = 0; k < order.size(); ++k) {
    for (int c : children[order[k]]) order.push_back(c);
  }
  return order;
}

const Skeleton& default_skeleton() {
  static const Skeleton skeleton = [] {
    std::istringstream in(kDefaultSkeletonText);
    return parse_skeleton(in);
  }();
  return skeleton;
}

Skeleton parse_skeleton(std::istream& in) {
  Skeleton sk;
  std::vector<std::pair<std::string, std::string>> edge_names;
  std::vector<std::pair<std::string, std::vector<std::string>>> set_names;
  std::string root_name;
  std::vector<std::string> hip_names;

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw InputError("skeleton line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::vector<std::string> words = split_words(t.substr(eq + 1));
    const auto where = "skeleton line " + std::to_string(line_no) + ": ";
    if (key == "id") {
      if (words.size() != 1) throw InputError(where + "id takes one word");
      sk.id = words[0];
    } else if (key == "joints") {
      sk.joint_names = words;
    } else if (key == "root") {
      if (words.size() != 1) throw InputError(where + "root takes one joint");
      root_name = words[0];
    } else if (key == "hips") {
      if (words.size() != 2) throw InputError(where + "hips takes two joints");
      hip_names = words;
    } else if (key == "edge") {
      if (words.size() != 2) throw InputError(where + "edge takes 'child parent'");
      edge_names.emplace_back(words[0], words[1]);
    } else if (key.rfind("set ", 0) == 0) {
      set_names.emplace_back(trim(std::string_view(key).substr(4)), words);
    } else {
      throw InputError(where + "unknown key '" + key + "'");
    }
  }

  for (const auto& [c, p] : edge_names) {
    sk.edges.emplace_back(sk.joint_index(c), sk.joint_index(p));
  }
  if (!root_name.empty()) sk.root = sk.joint_index(root_name);
  if (hip_names.size() == 2) {
    sk.left_hip = sk.joint_index(hip_names[0]);
    sk.right_hip = sk.joint_index(hip_names[1]);
  }
  for (const auto& [label, members] : set_names) {
    std::vector<int> idx;
    for (const auto& m : members) idx.push_back(sk.joint_index(m));
    sk.joint_sets[label] = std::move(idx);
  }
  return sk;
}

Skeleton load_skeleton(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open skeleton file '" + path + "'");
  return parse_skeleton(in);
}

std::string skeleton_to_text(const Skeleton& sk) {
  std::ostringstream out;
  const auto names = [&](const std::vector<int>& idx) {
    std::string s;
    for (int j : idx) s += (s.empty() ? "" : " ") + sk.joint_names[j];
    return s;
  };
  std::vector<int> all(sk.joint_names.size());
  std::iota(all.begin(), all.end(), 0);
  out << "id = " << sk.id << "\n";
  out << "joints = " << names(all) << "\n";
  out << "root = " << sk.joint_names.at(sk.root) << "\n";
  out << "hips = " << sk.joint_names.at(sk.left_hip) << " " << sk.joint_names.at(sk.right_hip)
      << "\n";
  for (const auto& [c, p] : sk.edges) {
    out << "edge = " << sk.joint_names[c] << " " << sk.joint_names[p] << "\n";
  }
  for (JointSet s : kJointSets) {
    auto it = sk.joint_sets.find(std::string(to_string(s)));
    if (it != sk.joint_sets.end()) out << "set " << it->first << " = " << names(it->second) << "\n";
  }
  return out.str();
}

ValidationReport validate_skeleton(const Skeleton& sk) {
  ValidationReport report;
  auto& v = report.violations;
  const int n = sk.num_joints();
  if (n != kNumJoints) {
    v.push_back("joint count " + std::to_string(n) + " != " + std::to_string(kNumJoints));
  }
  if (std::set<std::string>(sk.joint_names.begin(), sk.joint_names.end()).size() !=
      sk.joint_names.size()) {
    v.push_back("duplicate joint names");
  }

  bool edges_ok = true;
  for (const auto& [c, p] : sk.edges) {
    if (c < 0 || c >= n || p < 0 || p >= n || c == p) edges_ok = false;
  }
  if (!edges_ok) {
    v.push_back("edge references an invalid joint");
  } else {
    std::vector<int> uf(static_cast<std::size_t>(n));
    std::iota(uf.begin(), uf.end(), 0);
    bool cycle = false;
    for (const auto& [c, p] : sk.edges) {
      const int a = find_root(uf, c), b = find_root(uf, p);
      if (a == b) cycle = true;
      uf[a] = b;
    }
    std::set<int> components;
    for (int j = 0; j < n; ++j) components.insert(find_root(uf, j));
    std::vector<int> parent_count(static_cast<std::size_t>(n), 0);
    for (const auto& [c, p] : sk.edges) ++parent_count[c];
    const bool multi_parent =
        std::any_of(parent_count.begin(), parent_count.end(), [](int k) { return k > 1; });
    if (cycle) v.push_back("not a tree: edges contain a cycle");
    if (components.size() > 1) v.push_back("not a tree: joints are disconnected");
    if (!cycle && components.size() == 1 && multi_parent) {
      v.push_back("not a tree: a joint has several parents");
    }
    if (sk.root >= 0 && sk.root < n && parent_count[sk.root] != 0) {
      v.push_back("root joint has a parent");
    }
  }
  if (sk.root < 0 || sk.root >= n) v.push_back("missing root joint");
  if (sk.left_hip < 0 || sk.right_hip < 0 || sk.left_hip >= n || sk.right_hip >= n ||
      sk.left_hip == sk.right_hip) {
    v.push_back("missing hip pair");
  }

  for (JointSet s : kJointSets) {
    const std::string label(to_string(s));
    auto it = sk.joint_sets.find(label);
    if (it == sk.joint_sets.end()) {
      v.push_back("missing joint set '" + label + "'");
      continue;
    }
    const auto& members = it->second;
    if (members.empty()) v.push_back("empty joint set '" + label + "'");
    for (int j : members) {
      if (j < 0 || j >= n) v.push_back("joint set '" + label + "' has an invalid joint");
    }
    if (s == JointSet::kAll &&
        std::set<int>(members.begin(), members.end()).size() != static_cast<std::size_t>(n)) {
      v.push_back("joint set 'all' does not cover every joint");
    }
  }
  return report;
}

Eigen::VectorXd Pose3D::flat() const {
  return Eigen::Map<const Eigen::VectorXd>(joints.data(), joints.size());
}

Pose3D Pose3D::from_flat(const Eigen::VectorXd& v, std::string skeleton_id) {
  Pose3D p;
  p.skeleton_id = std::move(skeleton_id);
  p.joints = Eigen::Map<const Eigen::Matrix3Xd>(v.data(), 3, v.size() / 3);
  return p;
}

void check_pose(const Pose3D& pose, const Skeleton& skeleton) {
  if (pose.num_joints() != skeleton.num_joints()) {
    throw InputError("pose has " + std::to_string(pose.num_joints()) + " joints, skeleton '" +
                     skeleton.id + "' has " + std::to_string(skeleton.num_joints()));
  }
  if (!pose.skeleton_id.empty() && !skeleton.id.empty() && pose.skeleton_id != skeleton.id) {
    throw InputError("pose skeleton '" + pose.skeleton_id + "' does not match '" + skeleton.id +
                     "'");
  }
  if (!pose.joints.allFinite()) throw InputError("pose has non-finite coordinates");
}

Vec3 body_root(const Pose3D& pose, const Skeleton& skeleton) {
  return 0.5 * (pose.joints.col(skeleton.left_hip) + pose.joints.col(skeleton.right_hip));
}

Pose3D root_centered(const Pose3D& pose, const Skeleton& skeleton) {
  Pose3D out = pose;
  out.joints.colwise() -= body_root(pose, skeleton);
  return out;
}

Eigen::VectorXd limb_lengths(const Pose3D& pose, const Skeleton& skeleton) {
  check_pose(pose, skeleton);
  Eigen::VectorXd len(skeleton.num_edges());
  for (int e = 0; e < skeleton.num_edges(); ++e) {
    const auto [c, p] = skeleton.edges[e];
    len[e] = (pose.joints.col(c) - pose.joints.col(p)).norm();
  }
  return len;
}

RetargetMap RetargetMap::identity(const Skeleton& skeleton) {
  RetargetMap m;
  m.source_id = m.target_id = skeleton.id;
  m.linear.assign(skeleton.joint_names.size(), Mat3::Identity());
  m.offset.assign(skeleton.joint_names.size(), Vec3::Zero());
  return m;
}

RetargetMap fit_retarget_map(std::span<const std::pair<Pose3D, Pose3D>> pairs,
                             double regularization, const Skeleton& source,
                             const Skeleton& target) {
  constexpr int kInputDim = 3;
  if (static_cast<int>(pairs.size()) < kInputDim + 1) {
    throw InputError("insufficient pairs: " + std::to_string(pairs.size()) + " < " +
                     std::to_string(kInputDim + 1));
  }
  if (regularization < 0) throw InputError("regularization must be >= 0");
  const int n_src = source.num_joints();
  const int n_tgt = target.num_joints();
  if (n_src != n_tgt) throw InputError("retargeting requires equal joint counts");

  std::vector<Pose3D> src, tgt;
  for (const auto& [s, t] : pairs) {
    check_pose(s, source);
    check_pose(t, target);
    src.push_back(root_centered(s, source));
    tgt.push_back(root_centered(t, target));
  }

  RetargetMap map;
  map.source_id = source.id;
  map.target_id = target.id;
  map.regularization = regularization;
  const auto m = static_cast<Eigen::Index>(pairs.size());
  double sq_sum = 0.0;
  for (int j = 0; j < n_tgt; ++j) {
    Eigen::MatrixXd a(m, 4);
    Eigen::MatrixXd b(m, 3);
    for (Eigen::Index r = 0; r < m; ++r) {
      a.row(r) << src[r].joints.col(j).transpose(), 1.0;
      b.row(r) = tgt[r].joints.col(j).transpose();
    }
    Eigen::Matrix4d normal = a.transpose() * a;
    normal.topLeftCorner<3, 3>().diagonal().array() += regularization;
    const Eigen::Matrix<double, 4, 3> rhs = a.transpose() * b;
    const Eigen::Matrix<double, 4, 3> w = normal.completeOrthogonalDecomposition().solve(rhs);
    map.linear.push_back(w.topRows<3>().transpose());
    map.offset.push_back(w.row(3).transpose());
    sq_sum += (a * w - b).squaredNorm();
  }
  map.fit_residual_rms = std::sqrt(sq_sum / static_cast<double>(m * n_tgt));
  return map;
}

Pose3D apply_retarget(const RetargetMap& map, const Pose3D& pose, const Skeleton& source) {
  check_pose(pose, source);
  if (!map.source_id.empty() && map.source_id != source.id) {
    throw InputError("retarget map expects skeleton '" + map.source_id + "', got '" +
                     source.id + "'");
  }
  if (map.linear.size() != static_cast<std::size_t>(pose.num_joints())) {
    throw InputError("retarget map joint count mismatch");
  }
  const Vec3 root = body_root(pose, source);
  Pose3D out;
  out.skeleton_id = map.target_id;
  out.joints.resize(3, pose.num_joints());
  for (int j = 0; j < pose.num_joints(); ++j) {
    out.joints.col(j) = map.linear[j] * (pose.joints.col(j) - root) + map.offset[j] + root;
  }
  return out;
}

std::vector<std::size_t> deduplicate_indices(std::span<const Pose3D> poses,
                                             double threshold_mm, const Skeleton& skeleton) {
  // A mean per-joint distance below t bounds every single joint distance by
  // n*t, so candidates are found by hashing one joint on a grid of that size.
  const int n = skeleton.num_joints();
  const double cell = std::max(threshold_mm * n, 1e-9);
  constexpr int key_joint = 0;
  struct KeyHash {
    std::size_t operator()(const std::array<long long, 3>& k) const {
      return static_cast<std::size_t>(k[0] * 73856093LL ^ k[1] * 19349663LL ^ k[2] * 83492791LL);
    }
  };
  std::unordered_map<std::array<long long, 3>, std::vector<std::size_t>, KeyHash> grid;
  std::vector<Pose3D> centered;
  centered.reserve(poses.size());
  std::vector<std::size_t> kept;

  for (std::size_t i = 0; i < poses.size(); ++i) {
    check_pose(poses[i], skeleton);
    centered.push_back(root_centered(poses[i], skeleton));
    const Vec3 key_pos = centered.back().joints.col(key_joint);
    std::array<long long, 3> key;
    for (int d = 0; d < 3; ++d) key[d] = static_cast<long long>(std::floor(key_pos[d] / cell));

    bool duplicate = false;
    for (int dx = -1; dx <= 1 && !duplicate; ++dx) {
      for (int dy = -1; dy <= 1 && !duplicate; ++dy) {
        for (int dz = -1; dz <= 1 && !duplicate; ++dz) {
          auto it = grid.find({key[0] + dx, key[1] + dy, key[2] + dz});
          if (it == grid.end()) continue;
          for (std::size_t k : it->second) {
            const double mean_dist =
                (centered[k].joints - centered.back().joints).colwise().norm().mean();
            if (mean_dist < threshold_mm) {
              duplicate = true;
              break;
            }
          }
        }
      }
    }
    if (!duplicate) {
      grid[key].push_back(i);
      kept.push_back(i);
    }
  }
  return kept;
}

std::vector<Pose3D> deduplicate(std::span<const Pose3D> poses, double threshold_mm,
                                const Skeleton& skeleton) {
  std::vector<Pose3D> out;
  for (std::size_t i : deduplicate_indices(poses, threshold_mm, skeleton)) {
    out.push_back(poses[i]);
  }
  return out;
}

}  // namespace duallift
