#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "tas/nn.hpp"
#include "tas/point_cloud.hpp"

namespace tas {

// File-system failures (open/create); distinct from validation errors so the
// CLI can map them to their own exit code.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// ASCII point file: one `x y z [label]` line per point, '#' comments, all
// rows with the same column count. Coordinates are written with 17
// significant digits so a round trip is exact.
PointCloud read_point_file(const std::string& path);
void write_point_file(const PointCloud& cloud, const std::string& path);

std::vector<std::size_t> read_key_file(const std::string& path);
void write_key_file(const std::vector<std::size_t>& keys, const std::string& path);

// Versioned binary checkpoint: magic "DISPNET1", then per tensor a name,
// shape, and row-major little-endian 64-bit reals.
void save_checkpoint(const ParamSet& params, const std::string& path);
ParamSet load_checkpoint(const std::string& path);

}  // namespace tas
