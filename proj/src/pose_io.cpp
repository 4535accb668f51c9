#include "duallift/pose_io.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace duallift {
namespace {

std::string line_prefix(int line_no) { return "line " + std::to_string(line_no) + ": "; }

double parse_number(const std::string& field, int line_no) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(field, &used);
  } catch (const std::exception&) {
    throw InputError(line_prefix(line_no) + "'" + field + "' is not a number");
  }
  if (used != field.size()) {
    throw InputError(line_prefix(line_no) + "'" + field + "' is not a number");
  }
  return v;
}

}  // namespace

std::vector<PoseRecord> read_pose_jsonl(std::istream& in, int num_joints) {
  std::vector<PoseRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw InputError(line_prefix(line_no) + "malformed JSON at byte " + std::to_string(e.byte));
    }
    try {
      PoseRecord rec;
      rec.id = j.at("id").get<std::string>();
      rec.pose.skeleton_id = j.value("skeleton", std::string{});
      const auto& joints = j.at("joints_mm");
      if (!joints.is_array() || static_cast<int>(joints.size()) != num_joints) {
        throw InputError(line_prefix(line_no) + "expected " + std::to_string(num_joints) +
                         " joints");
      }
      rec.pose.joints.resize(3, num_joints);
      for (int k = 0; k < num_joints; ++k) {
        const auto& p = joints[static_cast<std::size_t>(k)];
        if (!p.is_array() || p.size() != 3) {
          throw InputError(line_prefix(line_no) + "joint " + std::to_string(k) +
                           " is not [x,y,z]");
        }
        for (int d = 0; d < 3; ++d) rec.pose.joints(d, k) = p[static_cast<std::size_t>(d)].get<double>();
      }
      if (!rec.pose.joints.allFinite()) throw InputError(line_prefix(line_no) + "non-finite coordinate");
      out.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(line_prefix(line_no) + e.what());
    }
  }
  return out;
}

std::vector<PoseRecord> read_pose_csv(std::istream& in, int num_joints) {
  std::vector<PoseRecord> out;
  std::string line;
  int line_no = 0;
  bool header = true;
  const std::size_t expected_fields = 1 + 3 * static_cast<std::size_t>(num_joints);
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    if (header) {
      header = false;
      if (fields.empty() || fields[0] != "id" || fields.size() != expected_fields) {
        throw InputError(line_prefix(line_no) + "expected header id,j0x,j0y,j0z,... with " +
                         std::to_string(expected_fields) + " columns");
      }
      continue;
    }
    if (fields.size() != expected_fields) {
      throw InputError(line_prefix(line_no) + "expected " + std::to_string(expected_fields) +
                       " fields, got " + std::to_string(fields.size()));
    }
    PoseRecord rec;
    rec.id = fields[0];
    rec.pose.joints.resize(3, num_joints);
    for (int k = 0; k < num_joints; ++k) {
      for (int d = 0; d < 3; ++d) {
        rec.pose.joints(d, k) = parse_number(fields[1 + 3 * k + d], line_no);
      }
    }
    if (!rec.pose.joints.allFinite()) throw InputError(line_prefix(line_no) + "non-finite coordinate");
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<PoseRecord> read_pose_file(const std::string& path, int num_joints) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open pose file '" + path + "'");
  const bool csv = std::filesystem::path(path).extension() == ".csv";
  try {
    return csv ? read_pose_csv(in, num_joints) : read_pose_jsonl(in, num_joints);
  } catch (const InputError& e) {
    throw InputError(path + ": " + e.what());
  }
}

void write_pose_jsonl(std::ostream& out, const std::vector<PoseRecord>& records) {
  for (const auto& r : records) {
    nlohmann::json j;
    j["id"] = r.id;
    j["skeleton"] = r.pose.skeleton_id;
    auto joints = nlohmann::json::array();
    for (int k = 0; k < r.pose.num_joints(); ++k) {
      joints.push_back({r.pose.joints(0, k), r.pose.joints(1, k), r.pose.joints(2, k)});
    }
    j["joints_mm"] = std::move(joints);
    out << j.dump() << "\n";
  }
}

void write_file_atomic(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot open '" + tmp + "' for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw InputError("failed writing '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw InputError("cannot move output into '" + path + "'");
  }
}

}  // namespace duallift
