#pragma once

#include <iosfwd>
#include <string>

#include <json.hpp>

#include "duallift/eval.hpp"
#include "duallift/lifter.hpp"

namespace duallift {

// key = value lines; '#' starts a comment. Keys: omega_p omega_r omega_a K K_w
// pca_dim iterations seed restarts mode weighting. Unknown keys throw.
EnergyParams parse_params(std::istream& in, EnergyParams base = {});
EnergyParams load_params(const std::string& path, EnergyParams base = {});
void apply_param(EnergyParams& params, const std::string& key, const std::string& value);
std::string params_to_text(const EnergyParams& params);
nlohmann::json params_to_json(const EnergyParams& params);

// key = value lines with fx fy cx cy, all required.
Intrinsics parse_intrinsics(std::istream& in);
Intrinsics load_intrinsics(const std::string& path);
std::string intrinsics_to_text(const Intrinsics& k);

struct BenchmarkConfig {
  ScenarioSpec spec;
  int scenes = 50;
};

nlohmann::json scenario_spec_to_json(const ScenarioSpec& spec, const Skeleton& skeleton);
ScenarioSpec scenario_spec_from_json(const nlohmann::json& j, const Skeleton& skeleton);
BenchmarkConfig benchmark_config_from_json(const nlohmann::json& j, const Skeleton& skeleton);
nlohmann::json benchmark_config_to_json(const BenchmarkConfig& config, const Skeleton& skeleton);
BenchmarkConfig load_benchmark_config(const std::string& path, const Skeleton& skeleton);

// Parses JSON text, reporting the byte offset of syntax errors as InputError.
nlohmann::json parse_json_text(const std::string& text, const std::string& what);
nlohmann::json load_json_file(const std::string& path);

nlohmann::json camera_to_json(const CameraModel& cam);
nlohmann::json pose2d_to_json(const Pose2D& pose);
nlohmann::json pose3d_to_json(const Eigen::Matrix3Xd& joints);
Pose2D pose2d_from_json(const nlohmann::json& j, int num_joints);
Eigen::Matrix3Xd pose3d_from_json(const nlohmann::json& j, int num_joints);

nlohmann::json lift_result_to_json(const LiftResult& result, const EnergyParams& params,
                                   const Skeleton& skeleton);

}  // namespace duallift
