#include "hermite_flow/snapshot.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "hermite_flow/errors.hpp"

namespace hermite_flow {

namespace {

constexpr char kMagic[8] = {'H', 'F', 'S', 'N', 'A', 'P', '0', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

void put_f64(std::string& out, double x) { put_u64(out, std::bit_cast<std::uint64_t>(x)); }

double get_f64(const std::string& in, std::size_t pos) {
  return std::bit_cast<double>(get_u64(in, pos));
}

}  // namespace

std::string encode_snapshot(const TeacherModel& teacher, const StudentState& student) {
  nlohmann::json header = {{"format", "hermite-flow-snapshot"},
                           {"version", 1},
                           {"d", teacher.d()},
                           {"P", teacher.width()},
                           {"m", student.width()},
                           {"step", student.step}};
  const std::string h = header.dump();
  std::string out(kMagic, kMagic + 8);
  put_u64(out, h.size());
  out += h;
  for (double a : teacher.a()) put_f64(out, a);
  for (Eigen::Index k = 0; k < student.V.rows(); ++k)
    for (Eigen::Index j = 0; j < student.V.cols(); ++j) put_f64(out, student.V(k, j));
  return out;
}

Snapshot decode_snapshot(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw Error("snapshot: bad magic");
  const std::uint64_t hlen = get_u64(bytes, 8);
  if (bytes.size() < 16 + hlen) throw Error("snapshot: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("snapshot: malformed header: ") + e.what());
  }
  if (header.value("format", "") != "hermite-flow-snapshot" || header.value("version", 0) != 1)
    throw Error("snapshot: unsupported format/version");
  const int d = header.at("d").get<int>();
  const int P = header.at("P").get<int>();
  const int m = header.at("m").get<int>();
  const long step = header.at("step").get<long>();
  const std::size_t need = 16 + hlen + 8ull * (static_cast<std::size_t>(P) +
                                               static_cast<std::size_t>(m) * d);
  if (d < 1 || P < 1 || m < 0 || bytes.size() != need)
    throw Error("snapshot: payload size does not match header");

  std::size_t pos = 16 + hlen;
  std::vector<double> a(P);
  for (int p = 0; p < P; ++p, pos += 8) a[p] = get_f64(bytes, pos);
  StudentState student;
  student.step = step;
  student.V.resize(m, d);
  for (int k = 0; k < m; ++k)
    for (int j = 0; j < d; ++j, pos += 8) student.V(k, j) = get_f64(bytes, pos);
  return Snapshot{TeacherModel(std::move(a), d), std::move(student)};
}

void write_snapshot(const std::filesystem::path& path, const TeacherModel& teacher,
                    const StudentState& student) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("snapshot: cannot open " + path.string() + " for writing");
  const std::string bytes = encode_snapshot(teacher, student);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("snapshot: write failed for " + path.string());
}

Snapshot read_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("snapshot: cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_snapshot(bytes);
}

}  // namespace hermite_flow
