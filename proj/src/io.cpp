#include "tas/io.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace tas {

namespace {
constexpr char kMagic[8] = {'D', 'I', 'S', 'P', 'N', 'E', 'T', '1'};
}

PointCloud read_point_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open point file: " + path);

  PointCloud cloud;
  std::string line;
  int columns = 0;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos || line[start] == '#') continue;
    std::istringstream ss(line);
    double x, y, z;
    if (!(ss >> x >> y >> z))
      fail_input(path + ":" + std::to_string(lineno) + ": expected `x y z [label]`");
    long long label = 0;
    bool has_label = static_cast<bool>(ss >> label);
    std::string extra;
    if (ss >> extra) fail_input(path + ":" + std::to_string(lineno) + ": trailing columns");
    int cols = has_label ? 4 : 3;
    if (columns == 0) columns = cols;
    if (cols != columns)
      fail_input(path + ":" + std::to_string(lineno) + ": inconsistent column count");
    if (has_label && label < -1)
      fail_input(path + ":" + std::to_string(lineno) + ": labels must be >= -1");
    cloud.points.push_back({x, y, z});
    if (has_label) cloud.labels.push_back(static_cast<int>(label));
  }
  if (cloud.points.empty()) fail_input(path + ": no points");
  cloud.check();
  return cloud;
}

void write_point_file(const PointCloud& cloud, const std::string& path) {
  cloud.check();
  std::ofstream out(path);
  if (!out) throw IoError("cannot create point file: " + path);
  char buf[128];
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.points[i];
    if (cloud.has_labels())
      std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %d\n", p.x, p.y, p.z, cloud.labels[i]);
    else
      std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", p.x, p.y, p.z);
    out << buf;
  }
  if (!out) throw IoError("failed writing point file: " + path);
}

std::vector<std::size_t> read_key_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open key file: " + path);
  std::vector<std::size_t> keys;
  long long v;
  while (in >> v) {
    if (v < 0) fail_input(path + ": negative keypoint index");
    keys.push_back(static_cast<std::size_t>(v));
  }
  return keys;
}

void write_key_file(const std::vector<std::size_t>& keys, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot create key file: " + path);
  for (std::size_t k : keys) out << k << "\n";
  if (!out) throw IoError("failed writing key file: " + path);
}

void save_checkpoint(const ParamSet& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot create checkpoint: " + path);
  out.write(kMagic, sizeof kMagic);
  auto put_u32 = [&out](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  put_u32(static_cast<std::uint32_t>(params.tensors.size()));
  for (const Tensor& t : params.tensors) {
    put_u32(static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put_u32(static_cast<std::uint32_t>(t.value.rows));
    put_u32(static_cast<std::uint32_t>(t.value.cols));
    out.write(reinterpret_cast<const char*>(t.value.data.data()),
              static_cast<std::streamsize>(t.value.size() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

ParamSet load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    fail_input(path + ": not a DISPNET1 checkpoint");
  auto get_u32 = [&in, &path]() {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) fail_input(path + ": truncated checkpoint");
    return v;
  };
  ParamSet params;
  std::uint32_t count = get_u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t len = get_u32();
    std::string name(len, '\0');
    in.read(name.data(), len);
    std::uint32_t rows = get_u32(), cols = get_u32();
    Tensor& t = params.add(std::move(name), rows, cols);
    in.read(reinterpret_cast<char*>(t.value.data.data()),
            static_cast<std::streamsize>(t.value.size() * sizeof(double)));
    if (!in) fail_input(path + ": truncated checkpoint");
  }
  return params;
}

}  // namespace tas
