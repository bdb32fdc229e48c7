#pragma once

#include <filesystem>

#include "facepipe/pointcloud.hpp"

namespace facepipe {

// Reads ASCII or binary_little_endian PLY. Only vertex x/y/z are kept;
// other properties and elements are skipped. A landmark sidecar
// <stem>.landmarks.json next to the file is loaded when present.
PointCloud load_ply(const std::filesystem::path& path);

// Writes ASCII PLY with float32 x/y/z. Landmarks, if any, go to the sidecar.
void save_ply(const PointCloud& cloud, const std::filesystem::path& path);

std::filesystem::path landmark_sidecar_path(const std::filesystem::path& ply_path);

}  // namespace facepipe
