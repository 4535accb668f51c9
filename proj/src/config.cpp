#include "duallift/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace duallift {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Lines of "key = value", comments stripped; duplicate keys throw.
std::vector<std::pair<std::string, std::string>> read_key_values(std::istream& in, const std::string& what) {
  std::vector<std::pair<std::string, std::string>> out;
  std::map<std::string, int> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InputError(what + " line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw InputError(what + " line " + std::to_string(line_no) + ": empty key or value");
    }
    if (seen.count(key)) {
      throw InputError(what + " line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    seen[key] = line_no;
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || !std::isfinite(out)) {
    throw InputError("'" + key + "': '" + v + "' is not a finite number");
  }
  return out;
}

template <class Int>
Int to_int(const std::string& key, const std::string& v) {
  Int out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) {
    throw InputError("'" + key + "': '" + v + "' is not an integer");
  }
  return out;
}

std::string mode_text(const EnergyParams& p) {
  if (p.forced_set) return std::string(to_string(*p.forced_set));
  return std::string(to_string(p.mode));
}

std::ifstream open_text(const std::string& path, const std::string& what) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + what + " '" + path + "'");
  return in;
}

template <class T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw InputError(where + ": expected an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : keys) known = known || item.key() == k;
    if (!known) throw InputError(where + ": unknown key '" + item.key() + "'");
  }
}

}  // namespace

void apply_param(EnergyParams& p, const std::string& key, const std::string& value) {
  if (key == "omega_p") {
    p.omega_p = to_double(key, value);
  } else if (key == "omega_r") {
    p.omega_r = to_double(key, value);
  } else if (key == "omega_a") {
    p.omega_a = to_double(key, value);
  } else if (key == "K") {
    p.K = to_int<int>(key, value);
  } else if (key == "K_w") {
    p.K_w = to_int<int>(key, value);
  } else if (key == "pca_dim") {
    p.pca_dim = to_int<int>(key, value);
  } else if (key == "iterations") {
    p.iterations = to_int<int>(key, value);
  } else if (key == "seed") {
    p.seed = to_int<std::uint64_t>(key, value);
  } else if (key == "restarts") {
    p.restarts = to_int<int>(key, value);
  } else if (key == "mode") {
    if (value == "posterior" || value == "energy") {
      p.mode = selection_mode_from_string(value);
      p.forced_set.reset();
    } else {
      // A set label forces that set and skips selection.
      p.forced_set = joint_set_from_string(value);
      p.mode = SelectionMode::kPosterior;
    }
  } else if (key == "weighting") {
    if (value != "on" && value != "off") throw InputError("'weighting' must be on or off");
    p.weighting = value == "on";
  } else {
    throw InputError("unknown parameter '" + key + "'");
  }
}

EnergyParams parse_params(std::istream& in, EnergyParams base) {
  for (const auto& [k, v] : read_key_values(in, "parameters")) apply_param(base, k, v);
  check_params(base);
  return base;
}

EnergyParams load_params(const std::string& path, EnergyParams base) {
  auto in = open_text(path, "parameters file");
  try {
    return parse_params(in, base);
  } catch (const InputError& e) {
    throw InputError(path + ": " + e.what());
  }
}

std::string params_to_text(const EnergyParams& p) {
  std::ostringstream out;
  out.precision(17);
  out << "omega_p = " << p.omega_p << "\nomega_r = " << p.omega_r << "\nomega_a = " << p.omega_a
      << "\nK = " << p.K << "\nK_w = " << p.K_w << "\npca_dim = " << p.pca_dim
      << "\niterations = " << p.iterations << "\nseed = " << p.seed << "\nrestarts = " << p.restarts
      << "\nmode = " << mode_text(p) << "\nweighting = " << (p.weighting ? "on" : "off") << "\n";
  return out.str();
}

nlohmann::json params_to_json(const EnergyParams& p) {
  return {{"omega_p", p.omega_p},       {"omega_r", p.omega_r},   {"omega_a", p.omega_a},
          {"K", p.K},                   {"K_w", p.K_w},           {"pca_dim", p.pca_dim},
          {"iterations", p.iterations}, {"seed", p.seed},         {"restarts", p.restarts},
          {"mode", mode_text(p)},       {"weighting", p.weighting}, {"root_eps", p.root_eps},
          {"max_iterations", p.max_iterations}, {"gradient_tolerance", p.gradient_tolerance}};
}

Intrinsics parse_intrinsics(std::istream& in) {
  Intrinsics k;
  int found = 0;
  for (const auto& [key, v] : read_key_values(in, "intrinsics")) {
    if (key == "fx") {
      k.fx = to_double(key, v);
    } else if (key == "fy") {
      k.fy = to_double(key, v);
    } else if (key == "cx") {
      k.cx = to_double(key, v);
    } else if (key == "cy") {
      k.cy = to_double(key, v);
    } else {
      throw InputError("intrinsics: unknown key '" + key + "'");
    }
    ++found;
  }
  if (found != 4) throw InputError("intrinsics: fx, fy, cx and cy are all required");
  check_intrinsics(k);
  return k;
}

Intrinsics load_intrinsics(const std::string& path) {
  auto in = open_text(path, "intrinsics file");
  try {
    return parse_intrinsics(in);
  } catch (const InputError& e) {
    throw InputError(path + ": " + e.what());
  }
}

std::string intrinsics_to_text(const Intrinsics& k) {
  std::ostringstream out;
  out.precision(17);
  out << "fx = " << k.fx << "\nfy = " << k.fy << "\ncx = " << k.cx << "\ncy = " << k.cy << "\n";
  return out.str();
}

nlohmann::json scenario_spec_to_json(const ScenarioSpec& s, const Skeleton& skeleton) {
  nlohmann::json corrupt_joints = nlohmann::json::array();
  for (int j : s.corruption.joints) corrupt_joints.push_back(skeleton.joint_names.at(static_cast<std::size_t>(j)));
  return {
      {"seed", s.seed},
      {"database",
       {{"size", s.database.size},
        {"seed_poses", s.database.seed_poses},
        {"perturbation_mm", s.database.perturbation_mm},
        {"include_gt", s.database.include_gt}}},
      {"camera",
       {{"focal_px", s.camera.focal_px},
        {"image_width", s.camera.image_width},
        {"image_height", s.camera.image_height},
        {"depth_mm", s.camera.depth_mm},
        {"max_elevation_deg", s.camera.max_elevation_deg}}},
      {"unaries",
       {{"width", s.unaries.width},
        {"height", s.unaries.height},
        {"stride", s.unaries.stride},
        {"sigma_px", s.unaries.sigma_px},
        {"floor", s.unaries.floor},
        {"jitter_px", s.jitter_px}}},
      {"corruption",
       {{"joints", corrupt_joints},
        {"offset_px", {s.corruption.offset_px.x(), s.corruption.offset_px.y()}},
        {"random_limb_px", s.corruption.random_limb_px}}},
  };
}

ScenarioSpec scenario_spec_from_json(const nlohmann::json& j, const Skeleton& skeleton) {
  ScenarioSpec s;
  try {
    reject_unknown(j, {"seed", "database", "camera", "unaries", "corruption", "scenes"}, "scenario");
    s.seed = get_or<std::uint64_t>(j, "seed", s.seed);
    if (j.contains("database")) {
      const auto& d = j.at("database");
      reject_unknown(d, {"size", "seed_poses", "perturbation_mm", "include_gt"}, "scenario.database");
      s.database.size = get_or(d, "size", s.database.size);
      s.database.seed_poses = get_or(d, "seed_poses", s.database.seed_poses);
      s.database.perturbation_mm = get_or(d, "perturbation_mm", s.database.perturbation_mm);
      s.database.include_gt = get_or(d, "include_gt", s.database.include_gt);
    }
    if (j.contains("camera")) {
      const auto& c = j.at("camera");
      reject_unknown(c, {"focal_px", "image_width", "image_height", "depth_mm", "max_elevation_deg"},
                     "scenario.camera");
      s.camera.focal_px = get_or(c, "focal_px", s.camera.focal_px);
      s.camera.image_width = get_or(c, "image_width", s.camera.image_width);
      s.camera.image_height = get_or(c, "image_height", s.camera.image_height);
      s.camera.depth_mm = get_or(c, "depth_mm", s.camera.depth_mm);
      s.camera.max_elevation_deg = get_or(c, "max_elevation_deg", s.camera.max_elevation_deg);
    }
    if (j.contains("unaries")) {
      const auto& u = j.at("unaries");
      reject_unknown(u, {"width", "height", "stride", "sigma_px", "floor", "jitter_px"}, "scenario.unaries");
      s.unaries.width = get_or(u, "width", s.unaries.width);
      s.unaries.height = get_or(u, "height", s.unaries.height);
      s.unaries.stride = get_or(u, "stride", s.unaries.stride);
      s.unaries.sigma_px = get_or(u, "sigma_px", s.unaries.sigma_px);
      s.unaries.floor = get_or(u, "floor", s.unaries.floor);
      s.jitter_px = get_or(u, "jitter_px", s.jitter_px);
    }
    if (j.contains("corruption")) {
      const auto& c = j.at("corruption");
      reject_unknown(c, {"joints", "offset_px", "random_limb_px"}, "scenario.corruption");
      if (c.contains("joints")) {
        for (const auto& name : c.at("joints")) s.corruption.joints.push_back(skeleton.joint_index(name.get<std::string>()));
      }
      if (c.contains("offset_px")) {
        const auto& o = c.at("offset_px");
        if (!o.is_array() || o.size() != 2) throw InputError("scenario.corruption.offset_px must be [dx, dy]");
        s.corruption.offset_px = {o[0].get<double>(), o[1].get<double>()};
      }
      s.corruption.random_limb_px = get_or(c, "random_limb_px", s.corruption.random_limb_px);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("scenario: ") + e.what());
  }
  if (s.database.size < 1 || s.database.seed_poses < 1 || s.database.perturbation_mm < 0.0) {
    throw InputError("scenario.database: size and seed_poses must be >= 1, perturbation >= 0");
  }
  if (!(s.camera.focal_px > 0.0) || !(s.camera.depth_mm > 0.0)) {
    throw InputError("scenario.camera: focal length and depth must be positive");
  }
  if (s.jitter_px < 0.0 || s.corruption.random_limb_px < 0.0) {
    throw InputError("scenario: jitter and corruption magnitudes must be >= 0");
  }
  return s;
}

BenchmarkConfig benchmark_config_from_json(const nlohmann::json& j, const Skeleton& skeleton) {
  BenchmarkConfig c;
  c.spec = scenario_spec_from_json(j, skeleton);
  try {
    c.scenes = get_or(j, "scenes", c.scenes);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("scenario: ") + e.what());
  }
  if (c.scenes < 1) throw InputError("scenario: scenes must be >= 1");
  return c;
}

nlohmann::json benchmark_config_to_json(const BenchmarkConfig& config, const Skeleton& skeleton) {
  nlohmann::json j = scenario_spec_to_json(config.spec, skeleton);
  j["scenes"] = config.scenes;
  return j;
}

nlohmann::json parse_json_text(const std::string& text, const std::string& what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(what + ": malformed JSON at byte " + std::to_string(e.byte));
  }
}

nlohmann::json load_json_file(const std::string& path) {
  auto in = open_text(path, "JSON file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_json_text(ss.str(), path);
}

BenchmarkConfig load_benchmark_config(const std::string& path, const Skeleton& skeleton) {
  try {
    return benchmark_config_from_json(load_json_file(path), skeleton);
  } catch (const InputError& e) {
    const std::string msg = e.what();
    if (msg.rfind(path, 0) == 0) throw;
    throw InputError(path + ": " + msg);
  }
}

nlohmann::json camera_to_json(const CameraModel& cam) {
  return {{"fx", cam.intrinsics.fx},
          {"fy", cam.intrinsics.fy},
          {"cx", cam.intrinsics.cx},
          {"cy", cam.intrinsics.cy},
          {"rotation_axis_angle", {cam.rotation.x(), cam.rotation.y(), cam.rotation.z()}},
          {"translation_mm", {cam.translation.x(), cam.translation.y(), cam.translation.z()}}};
}

nlohmann::json pose2d_to_json(const Pose2D& pose) {
  nlohmann::json a = nlohmann::json::array();
  for (int j = 0; j < pose.num_joints(); ++j) a.push_back({pose.joints(0, j), pose.joints(1, j)});
  return a;
}

nlohmann::json pose3d_to_json(const Eigen::Matrix3Xd& joints) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index j = 0; j < joints.cols(); ++j) a.push_back({joints(0, j), joints(1, j), joints(2, j)});
  return a;
}

Pose2D pose2d_from_json(const nlohmann::json& j, int num_joints) {
  if (!j.is_array() || static_cast<int>(j.size()) != num_joints) {
    throw InputError("expected " + std::to_string(num_joints) + " 2D joints");
  }
  Pose2D p;
  p.joints.resize(2, num_joints);
  try {
    for (int k = 0; k < num_joints; ++k) {
      const auto& c = j[static_cast<std::size_t>(k)];
      if (!c.is_array() || c.size() != 2) throw InputError("2D joint " + std::to_string(k) + " is not [u, v]");
      p.joints(0, k) = c[0].get<double>();
      p.joints(1, k) = c[1].get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("2D pose: ") + e.what());
  }
  if (!p.joints.allFinite()) throw InputError("2D pose has non-finite coordinates");
  return p;
}

Eigen::Matrix3Xd pose3d_from_json(const nlohmann::json& j, int num_joints) {
  if (!j.is_array() || static_cast<int>(j.size()) != num_joints) {
    throw InputError("expected " + std::to_string(num_joints) + " 3D joints");
  }
  Eigen::Matrix3Xd X(3, num_joints);
  try {
    for (int k = 0; k < num_joints; ++k) {
      const auto& c = j[static_cast<std::size_t>(k)];
      if (!c.is_array() || c.size() != 3) throw InputError("3D joint " + std::to_string(k) + " is not [x, y, z]");
      for (int d = 0; d < 3; ++d) X(d, k) = c[static_cast<std::size_t>(d)].get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("3D pose: ") + e.what());
  }
  if (!X.allFinite()) throw InputError("3D pose has non-finite coordinates");
  return X;
}

nlohmann::json lift_result_to_json(const LiftResult& r, const EnergyParams& params, const Skeleton& skeleton) {
  nlohmann::json iterations = nlohmann::json::array();
  for (const auto& d : r.iterations) {
    nlohmann::json sets = nlohmann::json::object();
    for (JointSet s : kJointSets) {
      const auto k = static_cast<std::size_t>(s);
      nlohmann::json e = {{"ok", d.set_ok[k]}};
      if (d.set_ok[k]) {
        e["camera_energy"] = d.camera_energy[k];
        e["weights"] = d.weights[k];
      }
      if (std::isfinite(d.selection_score[k])) e["selection_score"] = d.selection_score[k];
      sets[std::string(to_string(s))] = std::move(e);
    }
    iterations.push_back({{"iteration", d.iteration},
                          {"input_pose_2d_px", pose2d_to_json(d.input_pose)},
                          {"refined_pose_2d_px", pose2d_to_json(d.refined_pose)},
                          {"selected_set", std::string(to_string(d.selected_set))},
                          {"sets", std::move(sets)}});
  }
  const auto energy = [](const EnergyValue& e) {
    return nlohmann::json{{"total", e.total}, {"E_p", e.e_p}, {"E_r", e.e_r}, {"E_a", e.e_a}};
  };
  return {{"skeleton", skeleton.id},
          {"joints", skeleton.joint_names},
          {"pose_3d_mm", pose3d_to_json(r.pose_3d.joints)},
          {"pose_normalized_mm", pose3d_to_json(r.pose_normalized)},
          {"pose_2d_px", pose2d_to_json(r.pose_2d)},
          {"selected_set", std::string(to_string(r.selected_set))},
          {"camera", camera_to_json(r.camera)},
          {"energy_initial", energy(r.initial_energy)},
          {"energy_final", energy(r.final_energy)},
          {"subspace_dim", r.subspace_dim},
          {"params", params_to_json(params)},
          {"iterations", std::move(iterations)}};
}

}  // namespace duallift
