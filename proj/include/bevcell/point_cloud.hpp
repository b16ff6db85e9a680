#pragma once

#include <cstddef>
#include <vector>

#include "bevcell/types.hpp"

namespace bevcell {

/// One Lidar return: Cartesian coordinates in meters plus reflectance.
struct LidarPoint {
    Scalar x = 0.0;
    Scalar y = 0.0;
    Scalar z = 0.0;
    Scalar intensity = 0.0;
};

/// A single Lidar scan. Empty scans are legal at parse level and rejected
/// by the consumers that cannot handle them.
struct PointCloud {
    std::vector<LidarPoint> points;
    int scan_id = 0;
    double timestamp = 0.0;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

}  // namespace bevcell
