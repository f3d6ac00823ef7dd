#pragma once

#include <filesystem>
#include <string>

#include "hermite_flow/model.hpp"

namespace hermite_flow {

// Binary snapshot of a teacher/student pair. Layout (docs/snapshot_format.md):
//   8 bytes  magic "HFSNAP01"
//   8 bytes  uint64 little-endian length N of the JSON header
//   N bytes  JSON header {"format", "version", "d", "P", "m", "step"}
//   P x f64  teacher strengths a_p, little-endian
//   m*d f64  student matrix V, row-major, little-endian
struct Snapshot {
  TeacherModel teacher;
  StudentState student;
};

std::string encode_snapshot(const TeacherModel& teacher, const StudentState& student);
Snapshot decode_snapshot(const std::string& bytes);

void write_snapshot(const std::filesystem::path& path, const TeacherModel& teacher,
                    const StudentState& student);
Snapshot read_snapshot(const std::filesystem::path& path);

}  // namespace hermite_flow
