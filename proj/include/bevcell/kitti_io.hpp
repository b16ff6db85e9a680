#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "bevcell/geometry.hpp"
#include "bevcell/point_cloud.hpp"

namespace bevcell::io {

/// World-from-sensor pose per scan, timestamps strictly increasing.
struct PoseTrack {
    std::vector<geom::RigidTransform> poses;
    std::vector<double> timestamps;

    std::size_t size() const { return poses.size(); }
    /// Throws on length mismatch, non-increasing timestamps, or an invalid
    /// rotation part.
    void validate() const;
};

/// A pretraining pair: the earlier scan index_a is the reference, the later
/// index_b the second view, and rel registers scan b onto scan a.
struct ScanPair {
    int index_a = 0;
    int index_b = 0;
    geom::RigidTransform rel;
};

/**
 * @brief Load a KITTI velodyne scan: packed 16-byte records of
 *        little-endian f32 (x, y, z, intensity), promoted to f64.
 *
 * Throws FormatError (with the byte offset) when the file length is not a
 * multiple of 16, DataError (with the point index) on non-finite values.
 */
PointCloud load_scan(const std::filesystem::path& path);

/// Inverse of load_scan; demotes back to f32 so a load/save round trip
/// reproduces the original bytes exactly.
void save_scan(const std::filesystem::path& path, const PointCloud& cloud);

struct PoseLoadOptions {
    /// `Tr:`-style calibration (camera-from-lidar). When present, every pose
    /// is conjugated into the sensor frame: T_lidar = Tr^-1 * T_cam * Tr.
    /// When absent, poses are taken to be in the sensor frame already.
    std::optional<std::filesystem::path> calib_path;
    /// Sidecar file with one timestamp (seconds) per line.
    std::optional<std::filesystem::path> times_path;
    /// Fixed scan rate in Hz used to synthesize t_i = i / rate when no times
    /// file exists. One of times_path / rate_hz is required.
    std::optional<double> rate_hz;
};

/**
 * @brief Load a KITTI odometry pose file: one row-major 3x4 matrix
 *        (12 decimals) per line.
 */
PoseTrack load_poses(const std::filesystem::path& pose_path,
                     const PoseLoadOptions& options);

/// One 3x4 row-major matrix per line, %.17g, so parsing the file recovers
/// the poses bit-exactly.
void save_poses(const std::filesystem::path& path, const PoseTrack& track);
void save_times(const std::filesystem::path& path, const std::vector<double>& times);

enum class GapKind { Time, Distance };

/// Pair each scan a with the first later scan whose time gap (seconds) or
/// ego displacement (meters) reaches `gap`; scans with no qualifying partner
/// produce no pair. Output is sorted by index_a. Throws ParameterError when
/// gap <= 0, ContractError on an empty track.
std::vector<ScanPair> select_pairs(const PoseTrack& track, GapKind kind, double gap);

inline std::vector<ScanPair> select_pairs_by_time(const PoseTrack& track, double dt) {
    return select_pairs(track, GapKind::Time, dt);
}
inline std::vector<ScanPair> select_pairs_by_dist(const PoseTrack& track, double dd) {
    return select_pairs(track, GapKind::Distance, dd);
}

}  // namespace bevcell::io
