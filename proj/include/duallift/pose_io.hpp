#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "duallift/skeleton.hpp"

namespace duallift {

struct PoseRecord {
  std::string id;
  Pose3D pose;
};

// JSON lines: {"id": str, "skeleton": str, "joints_mm": [[x,y,z] x n]}.
std::vector<PoseRecord> read_pose_jsonl(std::istream& in, int num_joints);
// CSV with header id,j0x,j0y,j0z,...
std::vector<PoseRecord> read_pose_csv(std::istream& in, int num_joints);
// Chooses the format from the extension (.csv, otherwise JSON lines).
std::vector<PoseRecord> read_pose_file(const std::string& path, int num_joints);

void write_pose_jsonl(std::ostream& out, const std::vector<PoseRecord>& records);

// Writes through a temporary sibling file and renames it into place.
void write_file_atomic(const std::string& path, const std::string& contents);

}  // namespace duallift
